"""Shared 2D geometry helpers: rotations, polyline resampling, turn arcs,
and the local tangent-plane geodetic conversion used by georeferenced grids.

Conventions: points are (x, y) arrays. The raster frame has x to the right
and y downward; meters are pixels times the grid resolution. Geographic
coordinates use a local tangent plane anchored at the grid origin (top-left
pixel), with east = +x and north = -y.
"""

from __future__ import annotations

import numpy as np

# meters per degree of latitude on the WGS84 sphere approximation
_M_PER_DEG = 6378137.0 * np.pi / 180.0


def rot90(v: np.ndarray, sign: int = 1) -> np.ndarray:
    """Rotate a 2-vector by +90 (sign=1) or -90 (sign=-1) degrees."""
    x, y = v
    return np.array([-sign * y, sign * x], dtype=float)


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.hypot(v[0], v[1]))
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return np.asarray(v, dtype=float) / n


def wrap_angle(a):
    """Normalize angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = -(np.mod(-a + np.pi, 2.0 * np.pi) - np.pi)
    return float(out) if out.ndim == 0 else out


def polyline_length(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def resample_polyline(points: np.ndarray, step: float) -> np.ndarray:
    """Resample a polyline at (at most) `step` arclength spacing.

    Vertices are not preserved except the endpoints; the output points lie
    on the original piecewise-linear curve.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return pts.copy()
    seg = np.diff(pts, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    total = cum[-1]
    if total == 0.0:
        return pts[:1].copy()
    n = max(int(np.ceil(total / step)), 1)
    s = np.linspace(0.0, total, n + 1)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seglen) - 1)
    t = (s - cum[idx]) / np.where(seglen[idx] > 0, seglen[idx], 1.0)
    return pts[idx] + seg[idx] * t[:, None]


def turn_polyline(p_exit: np.ndarray, p_entry: np.ndarray, alpha_out: float,
                  d_er: float, step: float) -> np.ndarray:
    """End-row turn between two corridor waypoints.

    Both points are shifted along the outward direction (cos a, sin a) so
    their projections match at margin `d_er` past `p_exit`, then joined by a
    semicircle centered on the shifted points' midpoint, taking the branch
    whose apex lies outward. Straight stubs connect the original points to
    their shifted images.
    """
    p_exit = np.asarray(p_exit, dtype=float)
    p_entry = np.asarray(p_entry, dtype=float)
    u = np.array([np.cos(alpha_out), np.sin(alpha_out)])
    delta_d = float(np.dot(p_exit - p_entry, u))
    p1 = p_exit + d_er * u
    p2 = p_entry + (d_er + delta_d) * u
    center = 0.5 * (p1 + p2)
    radius = float(np.hypot(*(p1 - center)))
    if radius < 1e-9:
        raise DegenerateTurn(p_exit, p_entry)
    theta1 = float(np.arctan2(p1[1] - center[1], p1[0] - center[0]))
    # the two shifted points are diametrically opposite; pick the sweep
    # direction whose midpoint lies on the outward side
    arcs = []
    for sign in (1.0, -1.0):
        mid = theta1 + sign * np.pi / 2.0
        arcs.append((sign, np.dot([np.cos(mid), np.sin(mid)], u)))
    sign = max(arcs, key=lambda t: t[1])[0]
    n_arc = max(int(np.ceil(np.pi * radius / step)), 2)
    thetas = theta1 + sign * np.linspace(0.0, np.pi, n_arc + 1)
    arc = center + radius * np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    parts = [
        resample_polyline(np.stack([p_exit, p1]), step),
        arc[1:],
        resample_polyline(np.stack([p2, p_entry]), step)[1:],
    ]
    return np.concatenate(parts, axis=0)


class DegenerateTurn(ValueError):
    """Shifted turn endpoints coincide; no circle can be fit."""

    def __init__(self, p_exit, p_entry):
        super().__init__(f"degenerate turn between {p_exit} and {p_entry}")


def meters_to_geodetic(xy_m: np.ndarray, origin: tuple[float, float]) -> np.ndarray:
    """Convert local meters (x east, y south of top-left pixel) to (lat, lon)."""
    xy = np.atleast_2d(np.asarray(xy_m, dtype=float))
    lat0, lon0 = origin
    lat = lat0 - xy[:, 1] / _M_PER_DEG
    lon = lon0 + xy[:, 0] / (_M_PER_DEG * np.cos(np.radians(lat0)))
    return np.stack([lat, lon], axis=1)


def geodetic_to_meters(latlon: np.ndarray, origin: tuple[float, float]) -> np.ndarray:
    ll = np.atleast_2d(np.asarray(latlon, dtype=float))
    lat0, lon0 = origin
    x = (ll[:, 1] - lon0) * _M_PER_DEG * np.cos(np.radians(lat0))
    y = (lat0 - ll[:, 0]) * _M_PER_DEG
    return np.stack([x, y], axis=1)
