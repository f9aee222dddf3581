"""Waypoint output-map codec and detection scoring.

The map is a (U_H x U_W) grid of cells covering the occupancy grid at a
subsampling factor k. Channel `conf` is a per-cell confidence; `dx`/`dy`
are offsets normalized to [-1, 1] locating the point inside its cell. The
encoder is the exact inverse of the decoder projection
p = k * (cell + (delta + 1) / 2), so an un-perturbed round trip is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_K = 8
DEFAULT_CONF_THRESHOLD = 0.9
DEFAULT_SUPPRESS_PX = 8.0


class CellCollision(ValueError):
    """Two waypoints landed in the same output cell: k too coarse."""

    def __init__(self, cell):
        self.cell = cell
        super().__init__(f"two waypoints map to output cell {tuple(cell)}")


@dataclass
class WaypointMap:
    conf: np.ndarray   # (U_H, U_W) in [0, 1]
    dx: np.ndarray     # (U_H, U_W) in [-1, 1]
    dy: np.ndarray
    k: int

    @property
    def u_h(self) -> int:
        return self.conf.shape[0]

    @property
    def u_w(self) -> int:
        return self.conf.shape[1]

    def copy(self) -> "WaypointMap":
        return WaypointMap(self.conf.copy(), self.dx.copy(), self.dy.copy(), self.k)

    def validate(self) -> None:
        if self.conf.shape != self.dx.shape or self.conf.shape != self.dy.shape:
            raise ValueError("channel shapes differ")
        if np.any(self.conf < 0) or np.any(self.conf > 1):
            raise ValueError("confidence outside [0, 1]")
        for ch in (self.dx, self.dy):
            if np.any(ch < -1) or np.any(ch > 1):
                raise ValueError("offset outside [-1, 1]")


@dataclass(frozen=True)
class PredictedWaypoint:
    x: float
    y: float
    confidence: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def encode_waypoint_map(points, h: int, w: int, k: int = DEFAULT_K,
                        confidence=1.0) -> WaypointMap:
    """Place waypoints into the 3-channel map; inverse of decode.

    `confidence` is a scalar or a per-point sequence. Raises CellCollision
    when two points fall into the same cell.
    """
    if h % k or w % k:
        raise ValueError(f"grid {h}x{w} not divisible by k={k}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    conf = np.broadcast_to(np.asarray(confidence, dtype=float), (len(pts),))
    u_h, u_w = h // k, w // k
    wmap = WaypointMap(conf=np.zeros((u_h, u_w)), dx=np.zeros((u_h, u_w)),
                       dy=np.zeros((u_h, u_w)), k=k)
    for (x, y), c in zip(pts, conf):
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"waypoint ({x}, {y}) outside the {h}x{w} grid")
        ux, uy = int(x // k), int(y // k)
        if wmap.conf[uy, ux] > 0:
            raise CellCollision((ux, uy))
        wmap.conf[uy, ux] = c
        wmap.dx[uy, ux] = 2.0 * (x / k - ux) - 1.0
        wmap.dy[uy, ux] = 2.0 * (y / k - uy) - 1.0
    return wmap


def decode_waypoint_map(wmap: WaypointMap,
                        c_thr: float = DEFAULT_CONF_THRESHOLD,
                        d_thr: float = DEFAULT_SUPPRESS_PX) -> list[PredictedWaypoint]:
    """Project cells with confidence strictly above c_thr and suppress
    near-duplicates, keeping the maximum-confidence point of any group
    within d_thr. Result sorted by descending confidence."""
    uy, ux = np.nonzero(wmap.conf > c_thr)
    if len(uy) == 0:
        return []
    k = wmap.k
    xs = k * (ux + (wmap.dx[uy, ux] + 1.0) / 2.0)
    ys = k * (uy + (wmap.dy[uy, ux] + 1.0) / 2.0)
    confs = wmap.conf[uy, ux]
    order = np.argsort(-confs, kind="stable")
    kept: list[PredictedWaypoint] = []
    kept_xy = np.empty((0, 2))
    for i in order:
        p = np.array([xs[i], ys[i]])
        if len(kept) and np.min(np.hypot(*(kept_xy - p).T)) <= d_thr:
            continue
        kept.append(PredictedWaypoint(float(p[0]), float(p[1]), float(confs[i])))
        kept_xy = np.vstack([kept_xy, p])
    return kept


def suppress(points: list[PredictedWaypoint],
             d_thr: float = DEFAULT_SUPPRESS_PX) -> list[PredictedWaypoint]:
    """Greedy max-confidence suppression of points within d_thr of a kept one."""
    order = sorted(points, key=lambda p: -p.confidence)
    kept: list[PredictedWaypoint] = []
    for p in order:
        if all(np.hypot(p.x - q.x, p.y - q.y) > d_thr for q in kept):
            kept.append(p)
    return kept


def perturb_map(wmap: WaypointMap, conf_noise: float = 0.0,
                offset_noise: float = 0.0, spurious_rate: float = 0.0,
                dropout_rate: float = 0.0, seed: int = 0) -> WaypointMap:
    """Model an imperfect predictor on top of an oracle-encoded map.

    True cells are dropped independently with dropout_rate; each true cell
    spawns, with probability spurious_rate, a confident spurious cell at a
    random empty location. Channel noise is clipped Gaussian. Deterministic
    per seed; all-zero parameters return the map unchanged.
    """
    for rate in (spurious_rate, dropout_rate):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("rates must be in [0, 1]")
    rng = np.random.default_rng(seed)
    out = wmap.copy()
    true_cells = np.argwhere(wmap.conf > 0)

    if dropout_rate > 0:
        drop = rng.random(len(true_cells)) < dropout_rate
        for uy, ux in true_cells[drop]:
            out.conf[uy, ux] = 0.0
            out.dx[uy, ux] = 0.0
            out.dy[uy, ux] = 0.0

    if spurious_rate > 0:
        n_spurious = int(np.sum(rng.random(len(true_cells)) < spurious_rate))
        for _ in range(n_spurious):
            for _attempt in range(100):
                uy = int(rng.integers(0, out.u_h))
                ux = int(rng.integers(0, out.u_w))
                if out.conf[uy, ux] == 0.0:
                    out.conf[uy, ux] = rng.uniform(0.9, 1.0)
                    out.dx[uy, ux] = rng.uniform(-1.0, 1.0)
                    out.dy[uy, ux] = rng.uniform(-1.0, 1.0)
                    break

    if conf_noise > 0:
        out.conf = np.clip(
            out.conf + conf_noise * rng.standard_normal(out.conf.shape), 0.0, 1.0)
    if offset_noise > 0:
        out.dx = np.clip(
            out.dx + offset_noise * rng.standard_normal(out.dx.shape), -1.0, 1.0)
        out.dy = np.clip(
            out.dy + offset_noise * rng.standard_normal(out.dy.shape), -1.0, 1.0)
    return out


def average_precision(pred: list[PredictedWaypoint], truth,
                      d_r: float) -> float | None:
    """AP with greedy nearest-truth matching within d_r.

    Predictions are ranked by descending confidence; each matches the
    nearest still-unmatched truth within d_r (TP) else counts as FP. The
    PR curve is integrated with the all-points precision-envelope rule.
    Returns None when there is no truth to score against.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float)) if len(truth) else \
        np.empty((0, 2))
    if len(truth) == 0:
        return None
    if len(pred) == 0:
        return 0.0
    order = sorted(pred, key=lambda p: -p.confidence)
    matched = np.zeros(len(truth), dtype=bool)
    tp = np.zeros(len(order))
    for i, p in enumerate(order):
        d = np.hypot(truth[:, 0] - p.x, truth[:, 1] - p.y)
        d[matched] = np.inf
        j = int(np.argmin(d))
        if d[j] <= d_r:
            matched[j] = True
            tp[i] = 1.0
    return _ap_from_tp_flags(tp, len(truth))


def _ap_from_tp_flags(tp: np.ndarray, n_truth: int) -> float:
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_truth
    precision = cum_tp / (np.arange(len(tp)) + 1.0)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, e, flag in zip(recall, envelope, tp):
        if flag:
            ap += (r - prev_r) * e
            prev_r = r
    return float(ap)


def pooled_average_precision(per_field, d_r: float) -> float | None:
    """AP over a batch: rank all predictions globally by confidence and
    match each within its own field. `per_field` is a list of
    (predictions, truth_points) pairs."""
    entries = []
    n_truth = 0
    matched = []
    truths = []
    for preds, truth in per_field:
        truth = np.atleast_2d(np.asarray(truth, dtype=float)) if len(truth) \
            else np.empty((0, 2))
        fid = len(truths)
        truths.append(truth)
        matched.append(np.zeros(len(truth), dtype=bool))
        n_truth += len(truth)
        entries.extend((p.confidence, fid, p.x, p.y) for p in preds)
    if n_truth == 0:
        return None
    if not entries:
        return 0.0
    entries.sort(key=lambda e: -e[0])
    tp = np.zeros(len(entries))
    for i, (_, fid, x, y) in enumerate(entries):
        truth = truths[fid]
        if len(truth) == 0:
            continue
        d = np.hypot(truth[:, 0] - x, truth[:, 1] - y)
        d[matched[fid]] = np.inf
        j = int(np.argmin(d))
        if d[j] <= d_r:
            matched[fid][j] = True
            tp[i] = 1.0
    return _ap_from_tp_flags(tp, n_truth)
