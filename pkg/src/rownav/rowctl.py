"""Segmentation-based in-row proportional controller.

Consumes a short window of binary plant masks plus depth, reduces them to a
column histogram, finds the widest free gap and steers toward its center.
A gap spanning 80% of the image width is treated as an anomaly and stops
the platform. Commands are low-passed with an exponential moving average.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

DEFAULT_WINDOW = 4          # S: frames summed are t-S..t
DEFAULT_DEPTH_GATE_M = 5.0
DEFAULT_EMA_ALPHA = 0.18
DEFAULT_OMEGA_GAIN = 0.01   # rad/s per pixel of gap-center offset
DEFAULT_V_MAX = 1.0
ANOMALY_FRACTION = 0.8
NOISE_ROW_FRACTION = 0.03


@dataclass
class MaskFrame:
    seg: np.ndarray     # (h, w) binary, 1 = plant
    depth: np.ndarray   # (h, w) meters, inf where nothing visible
    t: float = 0.0

    @property
    def shape(self):
        return self.seg.shape


@dataclass
class ControlInput:
    x_ctrl: np.ndarray      # (h, w) binary
    histogram: np.ndarray   # (w,) column sums


@dataclass(frozen=True)
class VelocityCommand:
    v_x: float
    omega_z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.omega_z])


STOP = VelocityCommand(0.0, 0.0)


@dataclass(frozen=True)
class Gap:
    center: float
    length: int


def accumulate_and_gate(frames, d_depth: float = DEFAULT_DEPTH_GATE_M) -> ControlInput:
    """Sum the window of masks, gate by the latest depth map (strictly
    below d_depth), binarize, and compute the column histogram."""
    if not frames:
        raise ValueError("need at least one frame")
    cum = np.zeros(frames[-1].shape, dtype=np.int32)
    for f in frames:
        cum += f.seg.astype(np.int32)
    depth_gate = frames[-1].depth < d_depth
    x_ctrl = ((cum > 0) & depth_gate).astype(np.uint8)
    return ControlInput(x_ctrl=x_ctrl, histogram=x_ctrl.sum(axis=0))


def reduce_noise(x_ctrl: np.ndarray,
                 row_fraction: float = NOISE_ROW_FRACTION) -> np.ndarray:
    """Zero image rows whose pixel count is below row_fraction of the
    strongest row; a fully empty image is returned unchanged."""
    g = x_ctrl.sum(axis=1)
    g_max = g.max()
    if g_max == 0:
        return x_ctrl.copy()
    out = x_ctrl.copy()
    out[g < row_fraction * g_max, :] = 0
    return out


def locate_gap(c: np.ndarray,
               anomaly_fraction: float = ANOMALY_FRACTION) -> Gap | None:
    """Find the widest run of zeros in the column histogram.

    Returns None (anomaly: caller must stop) when the widest zero run
    covers at least anomaly_fraction of the width. When the histogram has
    no zeros at all, the widest run of the minimum value is used instead,
    never triggering the anomaly stop. Ties pick the leftmost run.
    """
    c = np.asarray(c)
    w = len(c)
    target = 0 if np.any(c == 0) else int(c.min())
    first, length = _widest_run(c == target)
    if target == 0 and length >= anomaly_fraction * w:
        return None
    # continuous image coordinates (column i spans [i, i+1)) so that a
    # centered gap reads exactly w/2 and mirroring a mask negates d
    return Gap(center=first + length / 2.0, length=int(length))


def _widest_run(mask: np.ndarray) -> tuple[int, int]:
    padded = np.concatenate([[0], mask.astype(np.int8), [0]])
    d = np.diff(padded)
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0]
    lengths = ends - starts
    i = int(np.argmax(lengths))   # argmax keeps the leftmost maximum
    return int(starts[i]), int(lengths[i])


def control_law(x_c: float, w: int, v_max: float = DEFAULT_V_MAX,
                omega_gain: float = DEFAULT_OMEGA_GAIN) -> VelocityCommand:
    """Proportional steering toward the gap center with speed falling off
    quadratically with the offset."""
    d = x_c - w / 2.0
    omega = -omega_gain * d
    v = v_max * (1.0 - d * d / (w / 2.0) ** 2)
    return VelocityCommand(v, omega)


def ema_smooth(prev: VelocityCommand, raw: VelocityCommand,
               alpha: float) -> VelocityCommand:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    return VelocityCommand(prev.v_x * (1 - alpha) + raw.v_x * alpha,
                           prev.omega_z * (1 - alpha) + raw.omega_z * alpha)


class RowController:
    """Stateful wrapper: keeps the frame window and EMA memory."""

    def __init__(self, window: int = DEFAULT_WINDOW,
                 d_depth: float = DEFAULT_DEPTH_GATE_M,
                 ema_alpha: float = DEFAULT_EMA_ALPHA,
                 v_max: float = DEFAULT_V_MAX,
                 omega_gain: float = DEFAULT_OMEGA_GAIN):
        self.window = window
        self.d_depth = d_depth
        self.ema_alpha = ema_alpha
        self.v_max = v_max
        self.omega_gain = omega_gain
        self.frames: deque[MaskFrame] = deque(maxlen=window + 1)
        self.ema = STOP
        self.last_gap: Gap | None = None

    def reset(self) -> None:
        """Clear frame window and EMA memory (used on mode switches)."""
        self.frames.clear()
        self.ema = STOP
        self.last_gap = None

    def step(self, frame: MaskFrame) -> VelocityCommand:
        self.frames.append(frame)
        ctrl = accumulate_and_gate(list(self.frames), self.d_depth)
        cleaned = reduce_noise(ctrl.x_ctrl)
        gap = locate_gap(cleaned.sum(axis=0))
        self.last_gap = gap
        if gap is None:
            raw = STOP
        else:
            raw = control_law(gap.center, frame.shape[1],
                              self.v_max, self.omega_gain)
        self.ema = ema_smooth(self.ema, raw, self.ema_alpha)
        return self.ema
