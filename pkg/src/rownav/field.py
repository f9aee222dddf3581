"""Synthetic row-crop field generation.

A field is a set of parallel plant rows (straight lines or concentric
circular arcs for curved fields), rasterized into a georeferenced occupancy
grid. The module also produces the ground-truth corridor waypoints and the
ideal full-coverage reference path used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry
from .geometry import resample_polyline, turn_polyline, unit


class GridTooSmall(ValueError):
    """Requested grid cannot contain the generated rows."""

    def __init__(self, shape, required):
        self.required = required
        super().__init__(
            f"grid {shape} too small for field; need at least {required} (H, W)"
        )


@dataclass(frozen=True)
class FieldSpec:
    n_rows: int
    row_orientation: float          # radians, in [0, pi)
    row_length: float               # meters (rounded down to whole plant spacings)
    inter_row_spacing: float        # meters
    plant_radius_range: tuple[float, float]
    plant_spacing: float            # meters
    hole_probability: float = 0.0
    curvature: float = 0.0          # 1/m, 0 = straight rows
    resolution: float = 0.1         # meters per pixel
    grid_shape: tuple[int, int] = (800, 800)   # (H, W) pixels
    geo_origin: tuple[float, float] = (45.0, 7.6)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_rows < 2:
            raise ValueError("n_rows must be >= 2")
        if self.inter_row_spacing <= 2.0 * self.plant_radius_range[1]:
            raise ValueError("inter_row_spacing must exceed plant diameter")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.grid_shape[0] <= 0 or self.grid_shape[1] <= 0:
            raise ValueError("grid_shape must be positive")
        if not 0.0 <= self.hole_probability <= 1.0:
            raise ValueError("hole_probability must be in [0, 1]")
        if self.curvature != 0.0 and abs(1.0 / self.curvature) <= \
                0.5 * self.n_rows * self.inter_row_spacing:
            raise ValueError("curvature radius too tight for the row block")

    def fitted(self, margin: float = 5.0) -> "FieldSpec":
        """Return a copy whose grid is sized to fit the rows plus `margin` m."""
        probe = replace(self, grid_shape=(10 ** 6, 10 ** 6))
        polylines = _row_polylines(probe, center=np.zeros(2))
        pts = np.concatenate(polylines, axis=0)
        r_max = self.plant_radius_range[1]
        half_w = np.max(np.abs(pts[:, 0])) + r_max + margin
        half_h = np.max(np.abs(pts[:, 1])) + r_max + margin
        # round up to a multiple of 8 so the default waypoint-map cell
        # size always divides the grid
        shape = (-8 * (-(2 * int(np.ceil(half_h / self.resolution)) + 2) // 8),
                 -8 * (-(2 * int(np.ceil(half_w / self.resolution)) + 2) // 8))
        return replace(self, grid_shape=shape)


@dataclass
class OccupancyGrid:
    cells: np.ndarray               # uint8 HxW, 0 free / 255 occupied
    resolution: float
    geo_origin: tuple[float, float]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def px_to_m(self, xy_px) -> np.ndarray:
        return np.asarray(xy_px, dtype=float) * self.resolution

    def m_to_px(self, xy_m) -> np.ndarray:
        return np.asarray(xy_m, dtype=float) / self.resolution

    def m_to_geo(self, xy_m) -> np.ndarray:
        return geometry.meters_to_geodetic(xy_m, self.geo_origin)

    def geo_to_m(self, latlon) -> np.ndarray:
        return geometry.geodetic_to_meters(latlon, self.geo_origin)

    def occupied_at_px(self, xy_px) -> np.ndarray:
        """Occupancy lookup for (possibly fractional) pixel coordinates."""
        xy = np.atleast_2d(np.asarray(xy_px, dtype=float))
        h, w = self.cells.shape
        ix = np.clip(xy[:, 0].astype(int), 0, w - 1)
        iy = np.clip(xy[:, 1].astype(int), 0, h - 1)
        return self.cells[iy, ix] > 0


@dataclass
class FieldWorld:
    spec: FieldSpec
    plants: np.ndarray              # (n, 3): center x, y [m], radius [m]
    row_polylines: list[np.ndarray]  # per row, ordered centerline points [m]
    row_endpoints: np.ndarray       # (n_rows, 2, 2): (a, b) per row [m]
    occupancy: OccupancyGrid
    center: np.ndarray = field(default=None, repr=False)
    row_offsets: np.ndarray = field(default=None, repr=False)  # signed offsets along the row normal

    @property
    def row_dir(self) -> np.ndarray:
        a = self.spec.row_orientation
        return np.array([np.cos(a), np.sin(a)])

    @property
    def row_normal(self) -> np.ndarray:
        a = self.spec.row_orientation
        return np.array([-np.sin(a), np.cos(a)])

    def in_corridor(self, xy_m) -> bool:
        """True when a point lies between the outermost rows, within row extent."""
        p = np.asarray(xy_m, dtype=float) - self.center
        spec = self.spec
        lo, hi = self.row_offsets.min(), self.row_offsets.max()
        if spec.curvature == 0.0:
            t = float(np.dot(p, self.row_normal))
            s = float(np.dot(p, self.row_dir))
            half_len = 0.5 * _effective_row_length(spec)
            return lo < t < hi and abs(s) <= half_len
        o = self.center + self.row_normal / spec.curvature
        rel = np.asarray(xy_m, dtype=float) - o
        rho = float(np.hypot(*rel))
        r0 = 1.0 / spec.curvature
        radii = r0 - self.row_offsets
        theta_half = 0.5 * _effective_row_length(spec) * spec.curvature
        base = np.arctan2(-self.row_normal[1], -self.row_normal[0])
        ang = geometry.wrap_angle(np.arctan2(rel[1], rel[0]) - base)
        return radii.min() < rho < radii.max() and abs(ang) <= theta_half


def _effective_row_length(spec: FieldSpec) -> float:
    """Row length rounded down to a whole number of plant spacings."""
    return int(np.floor(spec.row_length / spec.plant_spacing)) * spec.plant_spacing


def _row_offsets(spec: FieldSpec) -> np.ndarray:
    return (np.arange(spec.n_rows) - 0.5 * (spec.n_rows - 1)) * spec.inter_row_spacing


def _row_polylines(spec: FieldSpec, center: np.ndarray,
                   step: float = 0.2) -> list[np.ndarray]:
    """Row centerlines: parallel lines, or concentric arcs when curved.

    All rows share the same angular extent so that endpoints of adjacent
    rows stay aligned across the row normal.
    """
    a = spec.row_orientation
    u = np.array([np.cos(a), np.sin(a)])
    n = np.array([-np.sin(a), np.cos(a)])
    length = _effective_row_length(spec)
    offsets = _row_offsets(spec)
    lines = []
    if spec.curvature == 0.0:
        npts = max(int(np.ceil(length / step)) + 1, 2)
        s = np.linspace(-0.5 * length, 0.5 * length, npts)
        for t in offsets:
            lines.append(center + t * n + s[:, None] * u)
        return lines
    r0 = 1.0 / spec.curvature
    o = center + r0 * n
    theta = length / r0
    npts = max(int(np.ceil(length / step)) + 1, 2)
    phis = np.linspace(-0.5 * theta, 0.5 * theta, npts)
    for t in offsets:
        radius = r0 - t
        # radial direction: -n rotated by phi around the common center
        c, s_ = np.cos(phis), np.sin(phis)
        radial = np.stack([c * (-n[0]) - s_ * (-n[1]),
                           s_ * (-n[0]) + c * (-n[1])], axis=1)
        lines.append(o + radius * radial)
    return lines


def generate_field(spec: FieldSpec) -> FieldWorld:
    """Build the plant layout and rasterize it into the occupancy grid.

    Deterministic for a fixed rng_seed. Plants are dropped independently
    with hole_probability; each plant gets a radius uniform in
    plant_radius_range.
    """
    h, w = spec.grid_shape
    center = 0.5 * np.array([w, h]) * spec.resolution
    polylines = _row_polylines(spec, center)
    rng = np.random.default_rng(spec.rng_seed)

    length = _effective_row_length(spec)
    n_plants_per_row = int(np.floor(length / spec.plant_spacing)) + 1
    r_lo, r_hi = spec.plant_radius_range
    plants = []
    endpoints = []
    for line in polylines:
        # plant positions at equal arclength along the row
        dense = resample_polyline(line, spec.plant_spacing / 8.0)
        idx = np.linspace(0, len(dense) - 1, n_plants_per_row).round().astype(int)
        positions = dense[idx]
        endpoints.append((positions[0], positions[-1]))
        for p in positions:
            radius = rng.uniform(r_lo, r_hi)
            hole = rng.random() < spec.hole_probability
            if not hole:
                plants.append((p[0], p[1], radius))
    plants = np.array(plants, dtype=float).reshape(-1, 3)
    endpoints = np.array(endpoints, dtype=float)

    _check_fit(spec, np.concatenate(polylines, axis=0), r_hi)
    cells = _rasterize(plants, spec)
    grid = OccupancyGrid(cells=cells, resolution=spec.resolution,
                         geo_origin=spec.geo_origin)
    return FieldWorld(spec=spec, plants=plants, row_polylines=polylines,
                      row_endpoints=endpoints, occupancy=grid,
                      center=center, row_offsets=_row_offsets(spec))


def _check_fit(spec: FieldSpec, pts: np.ndarray, r_max: float) -> None:
    h, w = spec.grid_shape
    half = 0.5 * np.array([w, h]) * spec.resolution
    need_x = np.max(np.abs(pts[:, 0] - half[0])) + r_max
    need_y = np.max(np.abs(pts[:, 1] - half[1])) + r_max
    if need_x > half[0] or need_y > half[1]:
        required = (2 * int(np.ceil(need_y / spec.resolution)) + 2,
                    2 * int(np.ceil(need_x / spec.resolution)) + 2)
        raise GridTooSmall((h, w), required)


def _rasterize(plants: np.ndarray, spec: FieldSpec) -> np.ndarray:
    h, w = spec.grid_shape
    cells = np.zeros((h, w), dtype=np.uint8)
    res = spec.resolution
    for px, py, r in plants:
        cx, cy, rp = px / res, py / res, r / res
        x0, x1 = max(int(cx - rp - 1), 0), min(int(cx + rp + 2), w)
        y0, y1 = max(int(cy - rp - 1), 0), min(int(cy + rp + 2), h)
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        mask = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= rp ** 2
        cells[y0:y1, x0:x1][mask] = 255
    return cells


def ground_truth_waypoints(world: FieldWorld):
    """Corridor entry/exit waypoints from adjacent row endpoint pairs.

    For each pair of adjacent rows and each side, the waypoint is the pair
    midpoint displaced by the +/-90-degree rotation of the half-difference,
    taking the branch that falls inside the corridor. Returns a list of
    (xy_px, pair_index, side) with side in {"start", "end"}.
    """
    res = world.spec.resolution
    eps = world.row_endpoints  # (n_rows, 2, 2)
    out = []
    for i in range(len(eps) - 1):
        for side, j in (("start", 0), ("end", 1)):
            a, b = eps[i, j], eps[i + 1, j]
            mid = 0.5 * (a + b)
            half = 0.5 * (a - b)
            other_mid = 0.5 * (eps[i, 1 - j] + eps[i + 1, 1 - j])
            if np.allclose(a, b):
                p = mid
            else:
                interior = other_mid - mid
                cands = [mid + geometry.rot90(half, s) for s in (1, -1)]
                p = max(cands, key=lambda q: float(np.dot(q - mid, interior)))
            out.append((p / res, i, side))
    return out


def ground_truth_path_segments(world: FieldWorld, d_er_px: float,
                               step: float = 0.1):
    """Ideal coverage path as tagged segments.

    Intra-row segments are corridor midlines trimmed by half the corridor
    entry width at both ends (so they start/end at the ground-truth
    waypoints); turns are margin-shifted semicircles. Returns a list of
    (tag, points_m) where tag is ("intra_row", i) or ("turn", i).
    """
    spec = world.spec
    res = spec.resolution
    lines = world.row_polylines
    n_corr = spec.n_rows - 1
    midlines = []
    for i in range(n_corr):
        mid = 0.5 * (lines[i] + lines[i + 1])
        trim = 0.5 * float(np.hypot(*(world.row_endpoints[i, 0]
                                      - world.row_endpoints[i + 1, 0])))
        mid = resample_polyline(mid, step / 2.0)
        arclen = np.concatenate(
            [[0.0], np.cumsum(np.hypot(*np.diff(mid, axis=0).T))])
        keep = (arclen >= trim) & (arclen <= arclen[-1] - trim)
        midlines.append(resample_polyline(mid[keep], step))

    segments = []
    for i in range(n_corr):
        pts = midlines[i] if i % 2 == 0 else midlines[i][::-1]
        segments.append((("intra_row", i), pts))
        if i + 1 < n_corr:
            nxt = midlines[i + 1] if (i + 1) % 2 == 0 else midlines[i + 1][::-1]
            outward = unit(pts[-1] - pts[0])
            alpha_out = float(np.arctan2(outward[1], outward[0]))
            turn = turn_polyline(pts[-1], nxt[0], alpha_out,
                                 d_er_px * res, step)
            segments.append((("turn", i), resample_polyline(turn, step)))
    return segments


def ground_truth_path(world: FieldWorld, d_er_px: float,
                      step: float = 0.1) -> np.ndarray:
    """Concatenated ideal coverage path, in meters."""
    parts = [pts for _, pts in ground_truth_path_segments(world, d_er_px, step)]
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:] if np.allclose(p[0], out[-1][-1]) else p)
    return np.concatenate(out, axis=0)
