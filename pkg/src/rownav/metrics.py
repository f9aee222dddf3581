"""Trajectory-error metrics against an interpolated reference path, plus
mission coverage reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RunMetrics:
    n_samples: int
    min_error: float
    max_error: float
    mae: float
    rmse: float
    sigma: float
    rows_visited: int | None = None
    collisions: int = 0
    completed: bool | None = None
    duration: float | None = None

    def as_dict(self) -> dict:
        d = {
            "n_samples": self.n_samples,
            "min_error_m": self.min_error,
            "max_error_m": self.max_error,
            "mae_m": self.mae,
            "rmse_m": self.rmse,
            "sigma_m": self.sigma,
            "collisions": self.collisions,
        }
        if self.rows_visited is not None:
            d["rows_visited"] = self.rows_visited
        if self.completed is not None:
            d["completed"] = self.completed
        if self.duration is not None:
            d["duration_s"] = self.duration
        return d


def point_segment_distances(points: np.ndarray,
                            polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest point on the piecewise-linear
    polyline (true point-to-segment distance, not nearest-vertex)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ref = np.atleast_2d(np.asarray(polyline, dtype=float))
    if len(ref) == 1:
        return np.hypot(pts[:, 0] - ref[0, 0], pts[:, 1] - ref[0, 1])
    a = ref[:-1]
    d = ref[1:] - a
    len2 = (d ** 2).sum(axis=1)
    len2 = np.where(len2 > 0, len2, 1.0)
    best = np.full(len(pts), np.inf)
    # chunk over trajectory points to bound memory on long runs
    chunk = max(1, int(4e6 / max(len(a), 1)))
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        rel = p[:, None, :] - a[None, :, :]
        t = np.clip((rel * d[None, :, :]).sum(axis=2) / len2[None, :], 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
        dist = np.hypot(p[:, None, 0] - closest[:, :, 0],
                        p[:, None, 1] - closest[:, :, 1])
        best[lo:lo + chunk] = dist.min(axis=1)
    return best


def trajectory_errors(trajectory: np.ndarray,
                      reference: np.ndarray) -> RunMetrics:
    """Aggregate per-sample distance-to-reference errors.

    sigma is the standard deviation of the error samples about their mean,
    so rmse**2 == mae**2 + sigma**2 holds by construction.
    """
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    e = point_segment_distances(traj, reference)
    mae = float(np.mean(e))
    rmse = float(np.sqrt(np.mean(e ** 2)))
    sigma = float(np.std(e))
    return RunMetrics(n_samples=len(e), min_error=float(e.min()),
                      max_error=float(e.max()), mae=mae, rmse=rmse,
                      sigma=sigma)


def mission_metrics(result, reference: np.ndarray,
                    intra_row_only: bool = False) -> RunMetrics:
    """RunMetrics for a finished mission against the planned reference path.

    With intra_row_only=True, only ticks spent in FOLLOW_ROW are scored
    (turn segments excluded) while the reference stays the full path.
    """
    traj = result.true_pose[:, :2]
    if intra_row_only:
        keep = np.array([m == "FOLLOW_ROW" for m in result.mode])
        if not keep.any():
            raise ValueError("mission has no FOLLOW_ROW samples")
        traj = traj[keep]
    m = trajectory_errors(traj, reference)
    m.collisions = 0 if result.status != "collision" else 1
    m.completed = result.completed
    m.duration = result.duration
    return m


def coverage_report(result, world, ordered, visit_radius: float = 1.0) -> dict:
    """Post-mission coverage summary.

    A traversal row counts as visited when the trajectory approaches both
    of its ordered waypoints within visit_radius; conformance requires the
    first-visit order to match the planner order.
    """
    res = world.spec.resolution
    wps = ordered.points * res
    traj = result.true_pose[:, :2]
    n_rows = len(wps) // 2
    first_tick = []
    visited = []
    for i in range(n_rows):
        d0 = np.hypot(*(traj - wps[2 * i]).T)
        d1 = np.hypot(*(traj - wps[2 * i + 1]).T)
        hit0 = np.nonzero(d0 < visit_radius)[0]
        hit1 = np.nonzero(d1 < visit_radius)[0]
        if len(hit0) and len(hit1):
            visited.append(i)
            first_tick.append(int(min(hit0[0], hit1[0])))
    order_ok = all(a < b for a, b in zip(first_tick, first_tick[1:]))
    mode_time = {}
    for m in result.mode:
        mode_time[m] = mode_time.get(m, 0) + 1
    dt = float(result.t[1] - result.t[0]) if len(result.t) > 1 else 0.0
    return {
        "rows_visited": len(visited),
        "visited_indices": visited,
        "in_order": bool(order_ok),
        "abba_conformant": bool(order_ok and len(visited) == n_rows
                                and result.completed),
        "min_clearance_m": result.min_clearance,
        "mode_seconds": {m: n * dt for m, n in mode_time.items()},
        "status": result.status,
        "abort_tick": None if result.completed else len(result.t),
    }
