"""Deterministic 2D differential-drive simulation.

World frame: meters, x right and y down (matching the raster grid). The
camera model casts one ray per image column against the plant circles and
fills the mask vertically by pinhole projection of the plant height; this
stands in exactly for the segmentation network plus depth sensor. GNSS
noise switches to a degraded sigma while the robot is inside a corridor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .field import FieldWorld
from .geometry import wrap_angle
from .nav import DONE, EKF, Supervisor
from .planner import GlobalPath, OrderedWaypoints
from .rowctl import MaskFrame, RowController, VelocityCommand


@dataclass
class RobotState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    v: float = 0.0
    omega: float = 0.0
    time: float = 0.0


@dataclass
class SensorFrame:
    mask: MaskFrame
    gnss: np.ndarray            # (2,) meters
    gnss_sigma: np.ndarray      # (2,) per-axis sigma used
    gnss_fresh: bool
    compass_yaw: float
    compass_sigma: float
    odom: tuple[float, float]   # (forward meters, yaw radians) since last tick


@dataclass
class SimConfig:
    dt: float = 1.0 / 30.0
    img_size: int = 224
    fov: float = np.pi / 2.0
    cam_range: float = 10.0
    plant_height: float = 1.8
    sigma_gnss_open: float = 0.08
    sigma_gnss_row: float = 1.0
    sigma_compass: float = 0.01
    wheel_noise: float = 0.01
    v_max: float = 0.5
    omega_max: float = 1.5
    gnss_every: int = 3         # camera ticks per GNSS fix (30 Hz / 10 Hz)
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def step_kinematics(state: RobotState, cmd: VelocityCommand, dt: float,
                    v_max: float = np.inf,
                    omega_max: float = np.inf) -> RobotState:
    """Exact unicycle integration over dt with clamped velocities."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = float(np.clip(cmd.v_x, 0.0, v_max))
    w = float(np.clip(cmd.omega_z, -omega_max, omega_max))
    yaw = state.yaw
    if abs(w) < 1e-9:
        x = state.x + v * dt * np.cos(yaw)
        y = state.y + v * dt * np.sin(yaw)
        new_yaw = yaw
    else:
        x = state.x + v / w * (np.sin(yaw + w * dt) - np.sin(yaw))
        y = state.y + v / w * (np.cos(yaw) - np.cos(yaw + w * dt))
        new_yaw = yaw + w * dt
    return RobotState(x=x, y=y, yaw=wrap_angle(new_yaw), v=v, omega=w,
                      time=state.time + dt)


def render_frame(world: FieldWorld, state: RobotState, cfg: SimConfig,
                 tick: int = 0, odom_true: tuple[float, float] = (0.0, 0.0)
                 ) -> SensorFrame:
    """Synthesize one tick of sensor data; deterministic per (seed, tick).

    Image columns map to bearings from +fov/2 (column 0) down to -fov/2,
    which renders objects on the positive-rotation side of the heading on
    the left of the image; this matches the steering sign of the control
    law in this y-down world frame.
    """
    rng = np.random.default_rng([cfg.seed, tick])
    n = cfg.img_size
    pos = np.array([state.x, state.y])

    centers = world.plants[:, :2]
    radii = world.plants[:, 2]
    rel = centers - pos
    near = np.hypot(rel[:, 0], rel[:, 1]) <= cfg.cam_range + radii
    rel, radii = rel[near], radii[near]

    bearings = state.yaw + (0.5 - np.arange(n) / (n - 1)) * cfg.fov
    dirs = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)
    if len(rel):
        proj = rel @ dirs.T                          # plants x columns
        perp2 = (rel ** 2).sum(axis=1)[:, None] - proj ** 2
        inside = radii[:, None] ** 2 - perp2
        hit = (inside >= 0.0) & (proj > 0.0)
        t = np.where(hit, proj - np.sqrt(np.maximum(inside, 0.0)), np.inf)
        depth_cols = t.min(axis=0)
    else:
        depth_cols = np.full(n, np.inf)
    depth_cols = np.where(depth_cols <= cfg.cam_range, depth_cols, np.inf)

    focal = (n / 2.0) / np.tan(cfg.fov / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        half_extent = np.where(np.isfinite(depth_cols),
                               focal * (cfg.plant_height / 2.0) / depth_cols,
                               0.0)
    half_extent = np.minimum(half_extent, n / 2.0)
    rows = np.abs(np.arange(n)[:, None] - (n - 1) / 2.0)
    seg = (rows <= half_extent[None, :]).astype(np.uint8)
    depth = np.where(seg > 0, depth_cols[None, :], np.inf)
    mask = MaskFrame(seg=seg, depth=depth, t=state.time)

    sigma = cfg.sigma_gnss_row if world.in_corridor(pos) else cfg.sigma_gnss_open
    gnss_sigma = np.array([sigma, sigma])
    gnss = pos + gnss_sigma * rng.standard_normal(2)
    compass = wrap_angle(state.yaw + cfg.sigma_compass * rng.standard_normal())
    df, dyaw = odom_true
    odom = (df * (1.0 + cfg.wheel_noise * rng.standard_normal()),
            dyaw * (1.0 + cfg.wheel_noise * rng.standard_normal()))
    return SensorFrame(mask=mask, gnss=gnss, gnss_sigma=gnss_sigma,
                       gnss_fresh=(tick % cfg.gnss_every == 0),
                       compass_yaw=float(compass),
                       compass_sigma=cfg.sigma_compass, odom=odom)


@dataclass
class MissionResult:
    status: str                  # complete | collision | timeout
    t: np.ndarray
    true_pose: np.ndarray        # (n, 3)
    est_pose: np.ndarray         # (n, 3)
    command: np.ndarray          # (n, 2) executed v, omega
    mode: list[str]
    clearance: np.ndarray
    transitions: list
    watchdog_events: list
    min_clearance: float
    duration: float
    ekf_min_cov_eig: float
    ekf_reinits: int

    @property
    def completed(self) -> bool:
        return self.status == "complete"

    def summary(self) -> dict:
        return {
            "status": self.status,
            "duration_s": self.duration,
            "ticks": len(self.t),
            "min_clearance_m": self.min_clearance,
            "ekf_min_cov_eig": self.ekf_min_cov_eig,
            "ekf_reinits": self.ekf_reinits,
            "mode_trace": [tr.new_mode for tr in self.transitions],
            "watchdog_events": len(self.watchdog_events),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


@dataclass
class MissionParams:
    waypoint_th: float = 0.5
    lookahead: float = 1.0
    v_ref: float = 0.5
    ekf_sigma_xy: float = 0.02
    ekf_sigma_yaw: float = 0.01
    ctl_window: int = 4
    ctl_depth_gate: float = 5.0
    ctl_ema_alpha: float = 0.18
    ctl_v_max: float = 1.0
    ctl_omega_gain: float = 0.01
    timeout_s: float | None = None


def run_mission(world: FieldWorld, path: GlobalPath,
                ordered: OrderedWaypoints, cfg: SimConfig,
                policy: str = "hybrid",
                params: MissionParams | None = None) -> MissionResult:
    """Closed-loop mission at camera rate; single-threaded, deterministic."""
    params = params or MissionParams()
    res = world.spec.resolution
    wps_m = ordered.points * res
    controller = RowController(window=params.ctl_window,
                               d_depth=params.ctl_depth_gate,
                               ema_alpha=params.ctl_ema_alpha,
                               v_max=params.ctl_v_max,
                               omega_gain=params.ctl_omega_gain)
    sup = Supervisor(waypoints_m=wps_m, path=path, controller=controller,
                     policy=policy, waypoint_th=params.waypoint_th,
                     lookahead=params.lookahead, v_ref=params.v_ref)
    start = wps_m[0]
    head = wps_m[1] - wps_m[0]
    state = RobotState(x=float(start[0]), y=float(start[1]),
                       yaw=float(np.arctan2(head[1], head[0])))
    ekf = EKF(state.x, state.y, state.yaw,
              sigma_xy=params.ekf_sigma_xy, sigma_yaw=params.ekf_sigma_yaw)

    seg_lengths = np.hypot(*np.diff(path.points_m, axis=0).T)
    path_len = float(seg_lengths.sum())
    timeout = params.timeout_s if params.timeout_s is not None else \
        4.0 * path_len / params.v_ref + 60.0
    max_ticks = int(np.ceil(timeout / cfg.dt))

    plants_xy = world.plants[:, :2]
    plants_r = world.plants[:, 2]

    rows_t, rows_true, rows_est, rows_cmd, rows_mode, rows_clear = \
        [], [], [], [], [], []
    status = "timeout"
    odom_true = (0.0, 0.0)
    for tick in range(max_ticks):
        frame = render_frame(world, state, cfg, tick, odom_true)
        est = ekf.step(frame.odom, cfg.dt,
                       gnss=frame.gnss if frame.gnss_fresh else None,
                       gnss_sigma=frame.gnss_sigma if frame.gnss_fresh else None,
                       compass=frame.compass_yaw,
                       compass_sigma=frame.compass_sigma)
        cmd, mode = sup.step(est, frame.mask, state.time)
        new_state = step_kinematics(state, cmd, cfg.dt,
                                    v_max=cfg.v_max, omega_max=cfg.omega_max)
        odom_true = (np.hypot(new_state.x - state.x, new_state.y - state.y),
                     wrap_angle(new_state.yaw - state.yaw))
        state = new_state

        clearance = float(np.min(
            np.hypot(plants_xy[:, 0] - state.x, plants_xy[:, 1] - state.y)
            - plants_r))
        rows_t.append(state.time)
        rows_true.append((state.x, state.y, state.yaw))
        rows_est.append((est.x, est.y, est.yaw))
        rows_cmd.append((state.v, state.omega))
        rows_mode.append(mode)
        rows_clear.append(clearance)

        if clearance <= 0.0:
            status = "collision"
            break
        if mode == DONE:
            status = "complete"
            break

    clear_arr = np.array(rows_clear)
    return MissionResult(
        status=status,
        t=np.array(rows_t),
        true_pose=np.array(rows_true),
        est_pose=np.array(rows_est),
        command=np.array(rows_cmd),
        mode=rows_mode,
        clearance=clear_arr,
        transitions=sup.transitions,
        watchdog_events=sup.watchdog_events,
        min_clearance=float(clear_arr.min()) if len(clear_arr) else np.inf,
        duration=float(rows_t[-1]) if rows_t else 0.0,
        ekf_min_cov_eig=ekf.min_cov_eig,
        ekf_reinits=ekf.reinit_count,
    )
