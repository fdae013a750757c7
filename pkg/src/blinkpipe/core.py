"""Domain types, units, and validation shared by the whole pipeline.

Conventions used everywhere downstream:

* Timestamps are integer nanoseconds on a monotonic clock. At the nominal
  200 Hz sampling rate consecutive frames are 5 ms apart, which is exact in
  integer nanoseconds (no float drift over long windows).
* A frame carries the 10 tracker features in a fixed canonical order:
  left/right pupil diameter (mm), left/right eye openness ([0, 1]),
  left gaze direction x/y/z, right gaze direction x/y/z (unit vectors).
* Feature values are quantized to float32 precision during validation.
  The wire format transports float32, so quantizing at the validation
  boundary makes in-process and over-the-wire processing bit-identical.
* Invalid tracking frames (valid=False) reuse the last valid feature
  values (forward fill only, never future interpolation).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

SAMPLE_RATE_HZ = 200
FRAME_INTERVAL_NS = 1_000_000_000 // SAMPLE_RATE_HZ  # 5 ms

DEFAULT_CLOSED_THRESHOLD = 0.7
DEFAULT_HYSTERESIS_BAND = 0.05

FEATURE_NAMES = (
    "left_pupil_mm",
    "right_pupil_mm",
    "left_openness",
    "right_openness",
    "left_dir_x",
    "left_dir_y",
    "left_dir_z",
    "right_dir_x",
    "right_dir_y",
    "right_dir_z",
)
NUM_FEATURES = len(FEATURE_NAMES)

Vec3 = Tuple[float, float, float]

_DIR_NORM_TOL = 1e-3
_DEGENERATE_NORM = 1e-6
# Fallback gaze when nothing valid has been seen yet: straight ahead (+z).
_DEFAULT_DIR: Vec3 = (0.0, 0.0, 1.0)


class BlinkPipeError(Exception):
    """Base class for all typed pipeline errors."""


class NonMonotonicTimestamp(BlinkPipeError):
    """A frame timestamp did not strictly increase within its stream."""


class DegenerateDirection(BlinkPipeError):
    """A gaze direction with near-zero norm arrived on a valid frame."""


class NoGazeYet(BlinkPipeError):
    """Effective gaze requested before any valid frame was seen."""


class BlinkKind(enum.Enum):
    BOTH_EYES = "both_eyes"
    LEFT_WINK = "left_wink"
    RIGHT_WINK = "right_wink"


class BlinkLabel(enum.Enum):
    VOLUNTARY = 0
    INVOLUNTARY = 1


@dataclass
class GazeFrame:
    """One raw 200 Hz sample of the 10 tracker features plus timestamp."""

    timestamp_ns: int
    left_pupil_mm: float
    right_pupil_mm: float
    left_openness: float
    right_openness: float
    left_dir: Vec3
    right_dir: Vec3
    valid: bool = True


@dataclass(frozen=True)
class ValidatedFrame:
    """A frame with clamped openness, renormalized unit directions, and
    float32-quantized features. Immutable and safe to share."""

    timestamp_ns: int
    left_pupil_mm: float
    right_pupil_mm: float
    left_openness: float
    right_openness: float
    left_dir: Vec3
    right_dir: Vec3
    valid: bool = True

    def features(self) -> Tuple[float, ...]:
        """The 10 features in canonical order (see FEATURE_NAMES)."""
        return (
            self.left_pupil_mm,
            self.right_pupil_mm,
            self.left_openness,
            self.right_openness,
            self.left_dir[0],
            self.left_dir[1],
            self.left_dir[2],
            self.right_dir[0],
            self.right_dir[1],
            self.right_dir[2],
        )

    def binocular_dir(self) -> Vec3:
        """Renormalized mean of the two gaze directions."""
        return _normalize(
            (
                self.left_dir[0] + self.right_dir[0],
                self.left_dir[1] + self.right_dir[1],
                self.left_dir[2] + self.right_dir[2],
            )
        )


@dataclass(frozen=True)
class HeadPose:
    timestamp_ns: int
    position: Vec3
    forward: Vec3

    def __post_init__(self):
        n = _norm(self.forward)
        if abs(n - 1.0) > _DIR_NORM_TOL:
            raise ValueError(f"head forward vector norm {n:.6f} not within 1e-3 of 1")


@dataclass(frozen=True)
class PinchSample:
    timestamp_ns: int
    pinch_strength: float
    hand_position: Vec3

    def __post_init__(self):
        if not 0.0 <= self.pinch_strength <= 1.0:
            raise ValueError(f"pinch strength {self.pinch_strength} outside [0, 1]")


@dataclass(frozen=True)
class BlinkEvent:
    """A completed closure interval. `offset_ns` is the timestamp of the
    frame on which the last closed eye reopened."""

    onset_ns: int
    offset_ns: int
    kind: BlinkKind
    min_openness_left: float
    min_openness_right: float

    def __post_init__(self):
        if self.offset_ns <= self.onset_ns:
            raise ValueError("blink offset must be after onset")

    @property
    def duration_ns(self) -> int:
        return self.offset_ns - self.onset_ns


@dataclass(frozen=True)
class CalibrationProfile:
    """Per-eye closure thresholds plus the reopen hysteresis band.

    An eye counts as closed below its threshold and reopens at
    threshold + hysteresis_band. Band 0 reproduces the single-threshold
    baseline behaviour exactly.
    """

    closed_threshold_left: float = DEFAULT_CLOSED_THRESHOLD
    closed_threshold_right: float = DEFAULT_CLOSED_THRESHOLD
    hysteresis_band: float = DEFAULT_HYSTERESIS_BAND

    def __post_init__(self):
        for name in ("closed_threshold_left", "closed_threshold_right"):
            t = getattr(self, name)
            if not 0.0 < t < 1.0:
                raise ValueError(f"{name}={t} outside (0, 1)")
            if t + self.hysteresis_band >= 1.0:
                raise ValueError(f"{name}+band must stay below 1")
        if not 0.0 <= self.hysteresis_band <= 0.3:
            raise ValueError("hysteresis_band outside [0, 0.3]")

    def reopen_threshold_left(self) -> float:
        return self.closed_threshold_left + self.hysteresis_band

    def reopen_threshold_right(self) -> float:
        return self.closed_threshold_right + self.hysteresis_band


def _norm(v: Sequence[float]) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def _normalize(v: Sequence[float]) -> Vec3:
    n = _norm(v)
    if n < _DEGENERATE_NORM:
        raise DegenerateDirection(f"direction {tuple(v)} has near-zero norm")
    if abs(n - 1.0) <= 1e-6:
        # Already unit within float32 resolution; dividing again would
        # perturb quantized components, breaking validate-twice stability.
        return (v[0], v[1], v[2])
    return (v[0] / n, v[1] / n, v[2] / n)


def _f32(x: float) -> float:
    # Quantize to the wire precision; the result is exactly float32-representable.
    return float(np.float32(x))


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


class FrameValidator:
    """Stateful per-stream validator.

    Enforces strictly increasing timestamps, clamps openness, renormalizes
    directions, quantizes features to float32 precision, and forward-fills
    invalid frames from the last valid one.
    """

    def __init__(self):
        self._last_timestamp_ns: Optional[int] = None
        self._last_valid: Optional[ValidatedFrame] = None

    @property
    def last_timestamp_ns(self) -> Optional[int]:
        return self._last_timestamp_ns

    def validate(self, frame: GazeFrame) -> ValidatedFrame:
        if self._last_timestamp_ns is not None and frame.timestamp_ns <= self._last_timestamp_ns:
            raise NonMonotonicTimestamp(
                f"timestamp {frame.timestamp_ns} not after {self._last_timestamp_ns}"
            )

        if frame.valid:
            try:
                left_dir = _normalize(frame.left_dir)
                right_dir = _normalize(frame.right_dir)
            except DegenerateDirection:
                raise DegenerateDirection(
                    f"zero-norm gaze direction on valid frame at t={frame.timestamp_ns}"
                )
            out = ValidatedFrame(
                timestamp_ns=frame.timestamp_ns,
                left_pupil_mm=_f32(max(frame.left_pupil_mm, 0.0)),
                right_pupil_mm=_f32(max(frame.right_pupil_mm, 0.0)),
                left_openness=_f32(_clamp01(frame.left_openness)),
                right_openness=_f32(_clamp01(frame.right_openness)),
                left_dir=(_f32(left_dir[0]), _f32(left_dir[1]), _f32(left_dir[2])),
                right_dir=(_f32(right_dir[0]), _f32(right_dir[1]), _f32(right_dir[2])),
                valid=True,
            )
            self._last_valid = out
        elif self._last_valid is not None:
            # Forward fill: keep the previous valid features, new timestamp.
            prev = self._last_valid
            out = ValidatedFrame(
                timestamp_ns=frame.timestamp_ns,
                left_pupil_mm=prev.left_pupil_mm,
                right_pupil_mm=prev.right_pupil_mm,
                left_openness=prev.left_openness,
                right_openness=prev.right_openness,
                left_dir=prev.left_dir,
                right_dir=prev.right_dir,
                valid=False,
            )
        else:
            # Invalid before anything valid arrived: fall back to a neutral
            # open-eyes frame so tensors never carry sentinel values.
            try:
                left_dir = _normalize(frame.left_dir)
            except DegenerateDirection:
                left_dir = _DEFAULT_DIR
            try:
                right_dir = _normalize(frame.right_dir)
            except DegenerateDirection:
                right_dir = _DEFAULT_DIR
            out = ValidatedFrame(
                timestamp_ns=frame.timestamp_ns,
                left_pupil_mm=_f32(max(frame.left_pupil_mm, 0.0)),
                right_pupil_mm=_f32(max(frame.right_pupil_mm, 0.0)),
                left_openness=_f32(_clamp01(frame.left_openness)),
                right_openness=_f32(_clamp01(frame.right_openness)),
                left_dir=(_f32(left_dir[0]), _f32(left_dir[1]), _f32(left_dir[2])),
                right_dir=(_f32(right_dir[0]), _f32(right_dir[1]), _f32(right_dir[2])),
                valid=False,
            )

        self._last_timestamp_ns = frame.timestamp_ns
        return out


def validate_frame(frame: GazeFrame, last_timestamp_ns: Optional[int] = None) -> ValidatedFrame:
    """One-shot validation of a single frame.

    For streams prefer a FrameValidator instance, which also forward-fills
    invalid frames.
    """
    v = FrameValidator()
    if last_timestamp_ns is not None:
        v._last_timestamp_ns = last_timestamp_ns
    return v.validate(frame)
