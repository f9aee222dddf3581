"""Full-coverage global path planning from an unordered waypoint list.

Pipeline: estimate the dominant row direction from the occupancy grid,
cluster the waypoints into the two field sides, order them into the
boustrophedon A-B-B-A traversal, then build corridor-centered intra-row
segments joined by margin-shifted semicircular turns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from sklearn.cluster import DBSCAN

from .field import OccupancyGrid
from .geometry import resample_polyline, turn_polyline, unit
from .geometry import DegenerateTurn  # re-exported planner error  # noqa: F401

DEFAULT_END_ROW_MARGIN_PX = 20.0
DEFAULT_STEP_M = 0.1
DEFAULT_SAFETY_PX = 4.0


class NoLinesFound(RuntimeError):
    """Hough transform found no segment above the minimum length."""


class SideImbalance(ValueError):
    """The two side clusters pair up unevenly."""

    def __init__(self, n_a, n_b, unmatched):
        self.n_a, self.n_b = n_a, n_b
        self.unmatched = unmatched
        super().__init__(f"side clusters of size {n_a} and {n_b} cannot be paired")


class BlockedCorridor(RuntimeError):
    """No free gap wide enough for the robot along an intra-row segment."""

    def __init__(self, sample_index):
        self.sample_index = sample_index
        super().__init__(f"corridor blocked near sample {sample_index}")


@dataclass
class OrderedWaypoints:
    points: np.ndarray        # (2n, 2) pixel coordinates in traversal order
    tags: list[tuple[int, str]]  # per point: (traversal row index, side "A"/"B")
    alpha: float              # estimated row orientation, radians mod pi

    @property
    def n_rows(self) -> int:
        return len(self.points) // 2


@dataclass
class GlobalPath:
    points_m: np.ndarray      # (n, 2) meters
    tags: list[tuple[str, int]]  # per point: ("intra_row", i) or ("turn", i)
    step: float               # sampling step, meters
    geodetic: np.ndarray | None = None  # (n, 2) lat/lon when georeferenced
    near_ambiguous_turns: list[int] = field(default_factory=list)

    def points_px(self, resolution: float) -> np.ndarray:
        return self.points_m / resolution

    def runs(self):
        """Yield (tag, slice) for each maximal run of equal tags."""
        start = 0
        for i in range(1, len(self.tags) + 1):
            if i == len(self.tags) or self.tags[i] != self.tags[start]:
                yield self.tags[start], slice(start, i)
                start = i


def estimate_row_orientation(grid: OccupancyGrid, angle_res_deg: float = 1.0,
                             min_length_frac: float = 0.1,
                             max_gap_px: float = 8.0) -> float:
    """Dominant line direction (mod pi) via the probabilistic Hough
    transform, as the length-weighted circular mean of segment angles.

    max_gap_px must stay below the inter-row spacing: plants of adjacent
    rows line up across the field too, and a larger gap tolerance lets
    Hough bridge the corridors and lock onto that perpendicular alignment.
    """
    img = (grid.cells > 0).astype(np.uint8) * 255
    ys, xs = np.nonzero(img)
    if len(xs) == 0:
        raise NoLinesFound("empty grid")
    extent = max(xs.max() - xs.min(), ys.max() - ys.min())
    min_len = max(int(min_length_frac * extent), 30)
    # curvature and plant holes can fragment short rows below the initial
    # length bound; retry with progressively shorter segments before
    # giving up
    segments = None
    for length in (min_len, max(min_len // 2, 30), 30):
        segments = cv2.HoughLinesP(img, rho=1.0,
                                   theta=np.radians(angle_res_deg),
                                   threshold=max(length // 2, 20),
                                   minLineLength=length,
                                   maxLineGap=int(max_gap_px))
        if segments is not None and len(segments) > 0:
            break
    if segments is None or len(segments) == 0:
        raise NoLinesFound(f"no segment of length >= 30 px")
    seg = np.asarray(segments).reshape(-1, 4).astype(float)
    dx, dy = seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1]
    lengths = np.hypot(dx, dy)
    angles = np.arctan2(dy, dx)
    # circular mean with period pi (angle doubling)
    mean = np.sum(lengths * np.exp(2j * angles))
    return float(np.angle(mean) / 2.0) % np.pi


def cluster_and_order(waypoints, alpha: float,
                      grid: OccupancyGrid | None = None) -> OrderedWaypoints:
    """Cluster waypoints into the two field sides and emit the A-B-B-A
    traversal order. The input point order does not matter."""
    pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if len(pts) < 2:
        raise ValueError("need at least 2 waypoints")
    u = np.array([np.cos(alpha), np.sin(alpha)])
    if len(pts) == 2:
        # single corridor: no clustering needed, just A before B along u
        order = np.argsort(pts @ u, kind="stable")
        return OrderedWaypoints(points=pts[order],
                                tags=[(0, "A"), (0, "B")], alpha=alpha)
    # eps from the typical chain spacing along each side
    d2 = np.hypot(pts[:, None, 0] - pts[None, :, 0],
                  pts[:, None, 1] - pts[None, :, 1])
    np.fill_diagonal(d2, np.inf)
    eps = 1.5 * float(np.median(np.min(d2, axis=1)))
    labels = DBSCAN(eps=eps, min_samples=1).fit_predict(pts)
    clusters = [np.nonzero(labels == lbl)[0] for lbl in np.unique(labels)]
    if len(clusters) == 1:
        # degenerate eps: split at the widest jump along the row direction
        proj = pts @ u
        order = np.argsort(proj, kind="stable")
        cut = int(np.argmax(np.diff(proj[order]))) + 1
        clusters = [order[:cut], order[cut:]]

    n_hat = np.array([-np.sin(alpha), np.cos(alpha)])
    while len(clusters) > 2:
        # deterministic order: smallest cluster first, ties by centroid position
        centroids = [pts[c].mean(axis=0) for c in clusters]
        keys = [(len(c), float(g @ u), float(g @ n_hat))
                for c, g in zip(clusters, centroids)]
        i = min(range(len(clusters)), key=lambda j: keys[j])
        dists = [np.hypot(*(centroids[i] - centroids[j])) if j != i else np.inf
                 for j in range(len(clusters))]
        j = int(np.argmin(dists))
        merged = np.concatenate([clusters[i], clusters[j]])
        clusters = [c for m, c in enumerate(clusters) if m not in (i, j)]
        clusters.append(merged)

    side_a, side_b = clusters
    if float(pts[side_a].mean(axis=0) @ u) > float(pts[side_b].mean(axis=0) @ u):
        side_a, side_b = side_b, side_a
    proj = pts @ n_hat
    side_a = side_a[np.argsort(proj[side_a], kind="stable")]
    side_b = side_b[np.argsort(proj[side_b], kind="stable")]
    if len(side_a) != len(side_b):
        longer = side_a if len(side_a) > len(side_b) else side_b
        extra = len(longer) - min(len(side_a), len(side_b))
        raise SideImbalance(len(side_a), len(side_b),
                            pts[longer[-extra:]].tolist())

    ordered = []
    tags = []
    for i in range(len(side_a)):
        pair = (side_a[i], side_b[i]) if i % 2 == 0 else (side_b[i], side_a[i])
        sides = ("A", "B") if i % 2 == 0 else ("B", "A")
        for idx, side in zip(pair, sides):
            ordered.append(pts[idx])
            tags.append((i, side))
    return OrderedWaypoints(points=np.array(ordered), tags=tags, alpha=alpha)


def plan_turn(p_i, p_next, alpha: float, d_er: float,
              step: float) -> np.ndarray:
    """End-row turn polyline in pixels. `alpha` must point outward (away
    from the field) at this end; see build_global_path."""
    return turn_polyline(np.asarray(p_i, float), np.asarray(p_next, float),
                         alpha, d_er, step)


def plan_intra_row(start, end, grid: OccupancyGrid, step: float,
                   max_scan_px: float = 40.0,
                   corridor_width_px: float | None = None,
                   robot_diameter_px: float = 5.0,
                   band_px: float = 8.0,
                   iterations: int = 3) -> np.ndarray:
    """Corridor-centered polyline between two waypoints (pixels).

    Samples start on the straight chord and are iteratively shifted along
    the corridor normal to the midpoint of the free gap between the
    nearest occupied runs on either side. A sample that lands on occupied
    cells (the chord of a curved corridor can cut into a row) first jumps
    to the nearest free offset and is recentered on later iterations.
    Occupancy is probed over a small along-track band so that gaps between
    individual plants do not read as free lateral space.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    chord = end - start
    length = float(np.hypot(*chord))
    u = unit(chord)
    n_hat = np.array([-u[1], u[0]])
    step_px = step  # pixels, like every other length in this function
    n_samples = max(int(np.ceil(length / step_px)), 2)
    s = np.linspace(0.0, length, n_samples + 1)
    base = start + s[:, None] * u

    lat_step = 0.5
    lat = np.arange(lat_step, max_scan_px + lat_step, lat_step)
    offsets = np.concatenate([-lat[::-1], [0.0], lat])
    n_lat = len(lat)
    band = np.linspace(-band_px / 2.0, band_px / 2.0, 7)
    h, w = grid.cells.shape
    clip = 0.5 * corridor_width_px if corridor_width_px else \
        0.5 * max_scan_px

    def probe_occupancy(centers):
        # probe grid: samples x offsets x band x 2
        probe = (centers[:, None, None, :]
                 + offsets[None, :, None, None] * n_hat
                 + band[None, None, :, None] * u)
        ix = np.clip(probe[..., 0].astype(int), 0, w - 1)
        iy = np.clip(probe[..., 1].astype(int), 0, h - 1)
        return (grid.cells[iy, ix] > 0).any(axis=2)   # samples x offsets

    shift = np.zeros(len(base))
    d_neg = d_pos = center_occ = None
    for _ in range(iterations):
        occ = probe_occupancy(base + shift[:, None] * n_hat)
        center_occ = occ[:, n_lat]
        neg = occ[:, :n_lat][:, ::-1]   # increasing distance, negative side
        pos = occ[:, n_lat + 1:]
        d_neg = _first_hit_distance(neg, lat_step)
        d_pos = _first_hit_distance(pos, lat_step)

        both = np.isfinite(d_neg) & np.isfinite(d_pos)
        one_pos = np.isfinite(d_pos) & ~np.isfinite(d_neg)
        one_neg = np.isfinite(d_neg) & ~np.isfinite(d_pos)
        delta = np.zeros(len(base))
        delta[both] = 0.5 * (d_pos[both] - d_neg[both])
        if corridor_width_px:
            # a gap much wider than the corridor means a hole in one row
            # opened false free space: hold half a corridor off the nearer
            # side instead of centering into the hole -- but only when
            # that side is close enough to plausibly be our own row (both
            # rows holed at once leaves the sample floating; keep it put)
            half = 0.5 * corridor_width_px
            gap = d_neg + d_pos
            wide = (both & (gap > 1.4 * corridor_width_px)) | one_pos | one_neg
            near_ok = np.minimum(d_neg, d_pos) < 0.75 * corridor_width_px
            keep_pos = wide & near_ok & (d_pos <= d_neg)
            keep_neg = wide & near_ok & (d_neg < d_pos)
            delta[wide] = 0.0
            delta[keep_pos] = d_pos[keep_pos] - half
            delta[keep_neg] = half - d_neg[keep_neg]
        else:
            delta[one_pos] = 0.5 * (d_pos[one_pos] - max_scan_px)
            delta[one_neg] = 0.5 * (max_scan_px - d_neg[one_neg])
        delta = np.clip(delta, -clip, clip)
        if center_occ.any():
            # escape jump: nearest free offset, unclipped
            cost = np.where(occ, np.inf, np.abs(offsets)[None, :])
            nearest_free = np.argmin(cost, axis=1)
            escapable = center_occ & np.isfinite(
                cost[np.arange(len(base)), nearest_free])
            delta[escapable] = offsets[nearest_free[escapable]]
        shift += delta

    gap = d_neg + d_pos
    bad = center_occ | (np.isfinite(gap) & (gap < robot_diameter_px))
    if bad.any():
        raise BlockedCorridor(int(np.nonzero(bad)[0][0]))
    # light smoothing against raster jitter; endpoints stay on the waypoints
    if len(shift) >= 5:
        kernel = np.ones(5) / 5.0
        shift = np.convolve(shift, kernel, mode="same")
    shift[0] = 0.0
    shift[-1] = 0.0
    return base + shift[:, None] * n_hat


def _first_hit_distance(occ_rows: np.ndarray, lat_step: float) -> np.ndarray:
    """Distance to the first occupied probe per row, inf when none."""
    any_hit = occ_rows.any(axis=1)
    first = np.argmax(occ_rows, axis=1)
    d = (first + 1) * lat_step
    return np.where(any_hit, d, np.inf)


def build_global_path(ordered: OrderedWaypoints, grid: OccupancyGrid,
                      d_er: float = DEFAULT_END_ROW_MARGIN_PX,
                      step: float = DEFAULT_STEP_M,
                      robot_diameter_px: float = 5.0) -> GlobalPath:
    """Concatenate intra-row and turn polylines over the whole traversal
    and convert to meters (and geographic coordinates)."""
    pts = ordered.points
    n_rows = ordered.n_rows
    step_px = step / grid.resolution
    n_hat = np.array([-np.sin(ordered.alpha), np.cos(ordered.alpha)])
    corridor_w = _corridor_width_estimate(pts, n_hat)
    occ_yx = np.nonzero(grid.cells)
    occ_xy = np.stack([occ_yx[1] + 0.5, occ_yx[0] + 0.5], axis=1)

    parts = []
    tags = []
    ambiguous = []
    for i in range(n_rows):
        a, b = pts[2 * i], pts[2 * i + 1]
        try:
            seg = plan_intra_row(a, b, grid, step_px,
                                 max_scan_px=1.5 * corridor_w if corridor_w else 40.0,
                                 corridor_width_px=corridor_w,
                                 robot_diameter_px=robot_diameter_px)
        except BlockedCorridor as exc:
            raise BlockedCorridor(exc.sample_index) from exc
        seg = resample_polyline(seg, step_px)
        parts.append(seg)
        tags.extend([("intra_row", i)] * len(seg))
        if i + 1 < n_rows:
            outward = unit(b - a)
            alpha_out = float(np.arctan2(outward[1], outward[0]))
            shift = _turn_shift(b, pts[2 * i + 2], outward, occ_xy, d_er)
            turn = plan_turn(b, pts[2 * i + 2], alpha_out, shift, step_px)
            turn = resample_polyline(turn, step_px)
            # flag turns whose outward-apex choice is a near tie (arc
            # diameter almost parallel to the outward direction)
            u_out = np.array([np.cos(alpha_out), np.sin(alpha_out)])
            diam = pts[2 * i + 2] + np.dot(b - pts[2 * i + 2], u_out) * u_out - b
            if np.hypot(*diam) > 1e-9 and \
                    abs(np.dot(unit(diam), u_out)) > 0.999:
                ambiguous.append(i)
            parts.append(turn[1:])
            tags.extend([("turn", i)] * (len(turn) - 1))

    path_px = np.concatenate(parts, axis=0)
    path_px = _repair_clearance(path_px, grid, DEFAULT_SAFETY_PX)
    points_m = path_px * grid.resolution
    geodetic = grid.m_to_geo(points_m)
    return GlobalPath(points_m=points_m, tags=tags, step=step,
                      geodetic=geodetic, near_ambiguous_turns=ambiguous)


def _repair_clearance(path_px: np.ndarray, grid: OccupancyGrid,
                      d_safe: float, slack: float = 0.5,
                      max_push: float = 4.0) -> np.ndarray:
    """Nudge sub-margin path points up the clearance gradient.

    Staggered row ends of curved fields can squeeze the turn stubs; each
    offending point climbs the distance-transform field in half-pixel
    steps until it clears d_safe + slack, is pushed max_push away, or
    reaches a local ridge.
    """
    free = (grid.cells == 0).astype(np.uint8)
    dist = cv2.distanceTransform(free, cv2.DIST_L2, 5)
    h, w = dist.shape

    def sample(p):
        ix = np.clip(p[:, 0].astype(int), 1, w - 2)
        iy = np.clip(p[:, 1].astype(int), 1, h - 2)
        return dist[iy, ix], ix, iy

    out = path_px.copy()
    target = d_safe + slack
    for _ in range(int(max_push / 0.5)):
        d, ix, iy = sample(out)
        low = d < target
        if not low.any():
            break
        gx = 0.5 * (dist[iy[low], ix[low] + 1] - dist[iy[low], ix[low] - 1])
        gy = 0.5 * (dist[iy[low] + 1, ix[low]] - dist[iy[low] - 1, ix[low]])
        norm = np.hypot(gx, gy)
        moving = norm > 1e-6
        step_vec = np.zeros((int(low.sum()), 2))
        step_vec[moving, 0] = 0.5 * gx[moving] / norm[moving]
        step_vec[moving, 1] = 0.5 * gy[moving] / norm[moving]
        if not moving.any():
            break
        out[low] += step_vec
    return out


def _turn_shift(b, c, u_out: np.ndarray, occ_xy: np.ndarray,
                d_er: float) -> float:
    """Stub shift placing the turn apex exactly d_er beyond the last
    vegetation in the turn's lateral span.

    The shifted turn endpoints share their projection on u_out, so the
    semicircle apex sits at b.u + shift + radius; the shift is solved
    against the farthest occupied cell between the two corridors (the row
    ends of curved fields are staggered, so a fixed shift would not give a
    constant margin).
    """
    sep = (c - b) - np.dot(c - b, u_out) * u_out
    radius = 0.5 * float(np.hypot(*sep))
    if radius < 1e-9:
        raise DegenerateTurn(b, c)
    w_hat = sep / (2.0 * radius)
    lat = occ_xy @ w_hat
    lo = float(b @ w_hat) - 1.0
    hi = float(c @ w_hat) + 1.0
    in_strip = (lat >= lo) & (lat <= hi)
    base_proj = float(b @ u_out)
    if in_strip.any():
        # +0.5: outermost occupied pixel centers sit inside the true
        # vegetation surface by about half a pixel
        ref = float(np.max(occ_xy[in_strip] @ u_out)) + 0.5
    else:
        ref = base_proj
    # slightly negative shifts (end plants missing) are allowed: the
    # sub-pixel double-back at the stub is invisible to the follower
    return max(ref + d_er - radius - base_proj, -3.0)


def _corridor_width_estimate(pts: np.ndarray, n_hat: np.ndarray) -> float | None:
    """Median spacing of the traversal rows along the field normal."""
    proj = pts @ n_hat
    row_proj = np.sort([0.5 * (proj[2 * i] + proj[2 * i + 1])
                        for i in range(len(pts) // 2)])
    if len(row_proj) < 2:
        return None
    return float(np.median(np.diff(row_proj)))
