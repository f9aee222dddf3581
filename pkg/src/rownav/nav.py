"""Pose estimation and the local-planning supervisor.

A small 2D EKF fuses odometry increments with GNSS position fixes and
compass yaw. The supervisor watches the ordered waypoint list and switches
between pure-pursuit path following (turns, or the whole path in gnss_only
mode) and the segmentation-based row controller inside corridors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import unit, wrap_angle
from .planner import GlobalPath, OrderedWaypoints
from .rowctl import STOP, RowController, VelocityCommand

DEFAULT_WAYPOINT_TH_M = 0.5
DEFAULT_LOOKAHEAD_M = 1.0
DEFAULT_V_REF = 0.5


class PathExhausted(RuntimeError):
    """No path point remains ahead of the robot."""


@dataclass
class PoseEstimate:
    x: float
    y: float
    yaw: float
    cov: np.ndarray   # 3x3

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


class EKF:
    """Loosely-coupled odometry + GNSS + compass filter on (x, y, yaw).

    The prediction uses an omnidirectional model: odometry displacement is
    applied along the current heading and covariance grows isotropically in
    position, without a nonholonomic constraint.
    """

    def __init__(self, x0: float, y0: float, yaw0: float,
                 sigma_xy: float = 0.02, sigma_yaw: float = 0.01,
                 p0: np.ndarray | None = None,
                 divergence_trace: float = 100.0):
        self.mu = np.array([x0, y0, wrap_angle(yaw0)], dtype=float)
        self.p = np.array(p0, dtype=float) if p0 is not None else \
            np.diag([0.05 ** 2, 0.05 ** 2, 0.01 ** 2])
        self.sigma_xy = sigma_xy
        self.sigma_yaw = sigma_yaw
        self.divergence_trace = divergence_trace
        self.reinit_pending = False
        self.reinit_count = 0
        self.min_cov_eig = float(np.min(np.linalg.eigvalsh(self.p)))

    def step(self, odom: tuple[float, float], dt: float,
             gnss: np.ndarray | None = None, gnss_sigma=None,
             compass: float | None = None,
             compass_sigma: float | None = None) -> PoseEstimate:
        """One predict/update cycle; any subset of measurements may arrive."""
        df, dyaw = odom
        yaw = self.mu[2]
        self.mu[0] += df * np.cos(yaw)
        self.mu[1] += df * np.sin(yaw)
        self.mu[2] = wrap_angle(self.mu[2] + dyaw)
        f = np.array([[1.0, 0.0, -df * np.sin(yaw)],
                      [0.0, 1.0, df * np.cos(yaw)],
                      [0.0, 0.0, 1.0]])
        q = np.diag([self.sigma_xy ** 2 * dt, self.sigma_xy ** 2 * dt,
                     self.sigma_yaw ** 2 * dt])
        self.p = f @ self.p @ f.T + q

        if np.trace(self.p) > self.divergence_trace:
            self.reinit_pending = True
        if gnss is not None:
            if self.reinit_pending:
                self.mu[0], self.mu[1] = gnss
                self.p[:2, :] = 0.0
                self.p[:, :2] = 0.0
                sg = np.broadcast_to(np.asarray(gnss_sigma, float), (2,))
                self.p[0, 0] = max(sg[0] ** 2, 1e-12)
                self.p[1, 1] = max(sg[1] ** 2, 1e-12)
                self.reinit_pending = False
                self.reinit_count += 1
            else:
                sg = np.broadcast_to(np.asarray(gnss_sigma, float), (2,))
                h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
                r = np.diag(np.maximum(sg, 1e-6) ** 2)
                self._update(np.asarray(gnss, float) - self.mu[:2], h, r)
        if compass is not None:
            h = np.array([[0.0, 0.0, 1.0]])
            r = np.array([[max(compass_sigma, 1e-6) ** 2]])
            innov = np.array([wrap_angle(compass - self.mu[2])])
            self._update(innov, h, r)

        self.p = 0.5 * (self.p + self.p.T)
        self.min_cov_eig = min(self.min_cov_eig,
                               float(np.min(np.linalg.eigvalsh(self.p))))
        return self.estimate

    def _update(self, innov: np.ndarray, h: np.ndarray, r: np.ndarray) -> None:
        s = h @ self.p @ h.T + r
        k = self.p @ h.T @ np.linalg.inv(s)
        self.mu = self.mu + k @ innov
        self.mu[2] = wrap_angle(self.mu[2])
        ikh = np.eye(3) - k @ h
        # Joseph form keeps the covariance positive semi-definite
        self.p = ikh @ self.p @ ikh.T + k @ r @ k.T

    @property
    def estimate(self) -> PoseEstimate:
        return PoseEstimate(float(self.mu[0]), float(self.mu[1]),
                            float(self.mu[2]), self.p.copy())


def pure_pursuit_command(est: PoseEstimate, segment: np.ndarray,
                         lookahead: float = DEFAULT_LOOKAHEAD_M,
                         v_ref: float = DEFAULT_V_REF,
                         start_index: int = 0,
                         curvature_slowdown: float = 1.0
                         ) -> tuple[VelocityCommand, int]:
    """Classic pure pursuit toward the first point at chord distance >=
    lookahead beyond the nearest path point. Returns the command and the
    nearest index (callers pass it back as start_index to avoid
    backtracking on self-crossing paths)."""
    seg = np.atleast_2d(np.asarray(segment, dtype=float))
    if len(seg) == 0:
        raise PathExhausted("empty segment")
    pos = est.xy
    tail = seg[start_index:]
    d = np.hypot(tail[:, 0] - pos[0], tail[:, 1] - pos[1])
    nearest = start_index + int(np.argmin(d))
    if nearest >= len(seg) - 1 and \
            np.hypot(*(seg[-1] - pos)) < 0.25 * lookahead:
        raise PathExhausted("robot at the end of the segment")
    beyond = np.hypot(seg[nearest:, 0] - pos[0], seg[nearest:, 1] - pos[1])
    hits = np.nonzero(beyond >= lookahead)[0]
    target = seg[nearest + hits[0]] if len(hits) else seg[-1]
    chord = float(np.hypot(*(target - pos)))
    heading_err = wrap_angle(np.arctan2(target[1] - pos[1],
                                        target[0] - pos[0]) - est.yaw)
    kappa = 2.0 * np.sin(heading_err) / max(chord, 1e-9)
    v = v_ref / (1.0 + curvature_slowdown * abs(kappa))
    return VelocityCommand(float(v), float(v * kappa)), nearest


FOLLOW_ROW = "FOLLOW_ROW"
TURN = "TURN"
DONE = "DONE"


@dataclass
class ModeTransition:
    t: float
    waypoint_index: int
    old_mode: str
    new_mode: str
    distance: float


@dataclass
class Supervisor:
    """Waypoint-arrival mode switching and command dispatch.

    Waypoint arrival compares the EKF estimate (not the true pose) against
    the next ordered waypoint; arrival at an even index (row start) selects
    the segmentation controller, at an odd index (row end) pure pursuit on
    the matching turn segment. The policy "gnss_only" runs pure pursuit
    over the entire global path instead.
    """

    waypoints_m: np.ndarray
    path: GlobalPath
    controller: RowController
    policy: str = "hybrid"
    waypoint_th: float = DEFAULT_WAYPOINT_TH_M
    lookahead: float = DEFAULT_LOOKAHEAD_M
    v_ref: float = DEFAULT_V_REF
    mode: str = TURN
    next_index: int = 0
    transitions: list[ModeTransition] = field(default_factory=list)
    watchdog_events: list[tuple[float, int]] = field(default_factory=list)
    _segment: np.ndarray | None = None
    _pp_index: int = 0
    _intra_runs: list[np.ndarray] = None
    _turn_runs: list[np.ndarray] = None

    def __post_init__(self):
        if self.policy not in ("hybrid", "gnss_only"):
            raise ValueError(f"unknown policy {self.policy!r}")
        self._intra_runs = []
        self._turn_runs = []
        for (kind, _), sl in self.path.runs():
            pts = self.path.points_m[sl]
            (self._intra_runs if kind == "intra_row" else self._turn_runs).append(pts)
        self._segment = self._approach_segment()

    def _approach_segment(self) -> np.ndarray:
        if self.policy == "gnss_only":
            return self.path.points_m
        return self._intra_runs[0]

    def step(self, est: PoseEstimate, frame, t: float) -> tuple[VelocityCommand, str]:
        self._check_arrival(est, t)
        if self.mode == DONE:
            return STOP, DONE
        if self.policy == "gnss_only":
            try:
                cmd, self._pp_index = pure_pursuit_command(
                    est, self._segment, self.lookahead, self.v_ref,
                    self._pp_index)
            except PathExhausted:
                self._set_mode(DONE, t, est, -1)
                return STOP, DONE
            return cmd, self.mode
        if self.mode == FOLLOW_ROW:
            return self.controller.step(frame), FOLLOW_ROW
        try:
            cmd, self._pp_index = pure_pursuit_command(
                est, self._segment, self.lookahead, self.v_ref, self._pp_index)
        except PathExhausted:
            cmd = STOP
        return cmd, self.mode

    def _check_arrival(self, est: PoseEstimate, t: float) -> None:
        idx = self.next_index
        wps = self.waypoints_m
        if idx >= len(wps):
            return
        dist = float(np.hypot(*(wps[idx] - est.xy)))
        if dist < self.waypoint_th:
            self.next_index = idx + 1
            if idx == len(wps) - 1:
                new_mode = DONE
            elif idx % 2 == 0:
                new_mode = FOLLOW_ROW
            else:
                new_mode = TURN
            self._set_mode(new_mode, t, est, idx, dist)
        else:
            self._watchdog(est, idx, t)

    def _set_mode(self, new_mode: str, t: float, est: PoseEstimate,
                  idx: int, dist: float = 0.0) -> None:
        if self.policy == "hybrid" and new_mode != self.mode:
            self.controller.reset()
        self.transitions.append(ModeTransition(t, idx, self.mode, new_mode, dist))
        self.mode = new_mode
        self._pp_index = 0
        if self.policy == "gnss_only" or new_mode == DONE:
            return
        if new_mode == TURN:
            corridor = idx // 2   # just finished corridor idx//2
            seg = [self._turn_runs[corridor]]
            if corridor + 1 < len(self._intra_runs):
                seg.append(self._intra_runs[corridor + 1])
            self._segment = np.concatenate(seg, axis=0)

    def _watchdog(self, est: PoseEstimate, idx: int, t: float) -> None:
        """Log when the estimate crosses the waypoint's row-normal line
        without having triggered the arrival radius."""
        wps = self.waypoints_m
        if idx % 2 == 0:
            ref = wps[idx + 1] if idx + 1 < len(wps) else None
            travel = unit(ref - wps[idx]) if ref is not None else None
        else:
            travel = unit(wps[idx] - wps[idx - 1])
        if travel is None:
            return
        if float(np.dot(est.xy - wps[idx], travel)) > self.waypoint_th:
            if not self.watchdog_events or self.watchdog_events[-1][1] != idx:
                self.watchdog_events.append((t, idx))
