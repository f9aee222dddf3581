import numpy as np
import pytest

from rownav import nav
from rownav.planner import GlobalPath
from rownav.rowctl import MaskFrame, RowController


def spd_check(p):
    assert np.allclose(p, p.T)
    assert np.min(np.linalg.eigvalsh(p)) > 0.0


def test_ekf_stationary_converges_below_gnss_sigma():
    sigma = 0.08
    rng = np.random.default_rng(0)
    errs = []
    for run in range(50):
        ekf = nav.EKF(0.0, 0.0, 0.0)
        for t in range(300):
            gnss = sigma * rng.standard_normal(2) if t % 3 == 0 else None
            est = ekf.step((0.0, 0.0), 1 / 30.0,
                           gnss=gnss, gnss_sigma=(sigma, sigma),
                           compass=0.01 * rng.standard_normal(),
                           compass_sigma=0.01)
            spd_check(est.cov)
        errs.append(np.hypot(est.x, est.y))
    rms = float(np.sqrt(np.mean(np.square(errs))))
    assert rms < sigma
    assert ekf.min_cov_eig > 0.0


def test_ekf_prediction_moves_along_heading():
    ekf = nav.EKF(0.0, 0.0, np.pi / 2.0)
    est = ekf.step((1.0, 0.0), 0.1)
    assert np.isclose(est.x, 0.0, atol=1e-12)
    assert np.isclose(est.y, 1.0)
    # covariance grows without measurements
    assert np.trace(est.cov) > np.trace(np.diag([0.05 ** 2] * 2 + [0.01 ** 2]))


def test_ekf_gnss_update_pulls_estimate():
    ekf = nav.EKF(0.0, 0.0, 0.0)
    before = np.trace(ekf.p[:2, :2])
    est = ekf.step((0.0, 0.0), 0.1, gnss=np.array([1.0, 0.0]),
                   gnss_sigma=(0.05, 0.05))
    assert 0.0 < est.x < 1.0
    assert np.trace(est.cov[:2, :2]) < before


def test_ekf_compass_update_wraps_innovation():
    ekf = nav.EKF(0.0, 0.0, np.pi - 0.01)
    est = ekf.step((0.0, 0.0), 0.1, compass=-np.pi + 0.01,
                   compass_sigma=0.01)
    # the shortest way from pi-0.01 to -pi+0.01 is +0.02, not -2pi+0.02
    assert abs(nav.wrap_angle(est.yaw - (np.pi - 0.01))) < 0.05


def test_ekf_reinit_on_divergence():
    ekf = nav.EKF(0.0, 0.0, 0.0, divergence_trace=1e-6)
    ekf.step((0.0, 0.0), 0.1)   # trips the divergence watch, no GNSS yet
    assert ekf.reinit_pending
    est = ekf.step((0.0, 0.0), 0.1, gnss=np.array([5.0, -3.0]),
                   gnss_sigma=(0.1, 0.1))
    assert ekf.reinit_count == 1
    assert np.isclose(est.x, 5.0) and np.isclose(est.y, -3.0)
    spd_check(est.cov)


def _est(x, y, yaw=0.0):
    return nav.PoseEstimate(x, y, yaw, np.eye(3) * 1e-4)


def test_pure_pursuit_straight_ahead():
    seg = np.stack([np.linspace(0, 10, 101), np.zeros(101)], axis=1)
    cmd, nearest = nav.pure_pursuit_command(_est(0.0, 0.0), seg,
                                            lookahead=1.0, v_ref=0.5)
    assert abs(cmd.omega_z) < 1e-9
    assert np.isclose(cmd.v_x, 0.5)
    assert nearest == 0


def test_pure_pursuit_curvature_formula():
    seg = np.stack([np.linspace(0, 10, 101), np.zeros(101)], axis=1)
    yaw = 0.3
    cmd, _ = nav.pure_pursuit_command(_est(0.0, 0.0, yaw), seg,
                                      lookahead=1.0, v_ref=0.5)
    # target is the first point at chord >= lookahead: (1.0, 0)
    heading_err = nav.wrap_angle(np.arctan2(0.0 - 0.0, 1.0) - yaw)
    kappa = 2.0 * np.sin(heading_err) / 1.0
    assert np.isclose(cmd.omega_z / cmd.v_x, kappa)


def test_pure_pursuit_steers_back_to_path():
    seg = np.stack([np.linspace(0, 10, 101), np.zeros(101)], axis=1)
    above, _ = nav.pure_pursuit_command(_est(2.0, -1.0), seg)
    below, _ = nav.pure_pursuit_command(_est(2.0, 1.0), seg)
    assert above.omega_z > 0 > below.omega_z   # y grows downward


def test_pure_pursuit_exhausted():
    seg = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(nav.PathExhausted):
        nav.pure_pursuit_command(_est(1.0, 0.0), seg)
    with pytest.raises(nav.PathExhausted):
        nav.pure_pursuit_command(_est(0.0, 0.0), np.empty((0, 2)))


def _two_row_plan():
    """Hand-built two-corridor plan: rows along +x, turn at the far end."""
    wps = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 2.0], [0.0, 2.0]])
    intra0 = np.stack([np.linspace(0, 10, 51), np.zeros(51)], axis=1)
    turn = np.stack([np.full(21, 10.0), np.linspace(0, 2, 21)], axis=1)
    intra1 = np.stack([np.linspace(10, 0, 51), np.full(51, 2.0)], axis=1)
    pts = np.concatenate([intra0, turn[1:], intra1[1:]])
    tags = ([("intra_row", 0)] * 51 + [("turn", 0)] * 20
            + [("intra_row", 1)] * 50)
    path = GlobalPath(points_m=pts, tags=tags, step=0.2)
    return wps, path


def test_supervisor_mode_sequence():
    wps, path = _two_row_plan()
    sup = nav.Supervisor(waypoints_m=wps, path=path,
                         controller=RowController(), policy="hybrid",
                         waypoint_th=0.5)
    seg = np.zeros((8, 16), np.uint8)
    seg[:, :6] = 1
    seg[:, 10:] = 1
    frame = MaskFrame(seg=seg, depth=np.where(seg > 0, 2.0, np.inf))
    trace = []
    for pos in [(0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (10.0, 1.0),
                (10.0, 2.0), (5.0, 2.0), (0.0, 2.0)]:
        _, mode = sup.step(_est(*pos), frame, 0.0)
        trace.append(mode)
    assert trace == ["FOLLOW_ROW", "FOLLOW_ROW", "TURN", "TURN",
                     "FOLLOW_ROW", "FOLLOW_ROW", "DONE"]
    modes = [tr.new_mode for tr in sup.transitions]
    assert modes == ["FOLLOW_ROW", "TURN", "FOLLOW_ROW", "DONE"]


def test_supervisor_gnss_only_never_uses_controller():
    wps, path = _two_row_plan()
    ctl = RowController()
    sup = nav.Supervisor(waypoints_m=wps, path=path, controller=ctl,
                         policy="gnss_only")
    frame = MaskFrame(seg=np.zeros((8, 16), np.uint8),
                      depth=np.full((8, 16), np.inf))
    cmd, mode = sup.step(_est(0.0, 0.0), frame, 0.0)
    assert len(ctl.frames) == 0
    assert cmd.v_x > 0


def test_supervisor_rejects_unknown_policy():
    wps, path = _two_row_plan()
    with pytest.raises(ValueError):
        nav.Supervisor(waypoints_m=wps, path=path,
                       controller=RowController(), policy="dwa")
