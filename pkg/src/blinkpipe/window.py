"""Rolling feature history and fixed-length window extraction.

The classifier consumes a window of the most recent `capacity` validated
frames (default 5000, i.e. 25 s at 200 Hz) ending exactly at a blink's
offset frame, flattened time-major into a single vector of
capacity * NUM_FEATURES values. The buffer keeps a small lookback margin
beyond `capacity` so that windows ending a few frames before the newest
sample, and shift-augmented windows starting up to `lookback` frames
earlier, can still be materialized.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    NUM_FEATURES,
    BlinkEvent,
    BlinkPipeError,
    NonMonotonicTimestamp,
    ValidatedFrame,
)

DEFAULT_WINDOW_FRAMES = 5000
DEFAULT_LOOKBACK_FRAMES = 32
MAX_SHIFT_FRAMES = 10


class NotReady(BlinkPipeError):
    """Raised when fewer frames than one full window precede the requested end."""


@dataclass(frozen=True)
class WindowTensor:
    """Flattened time-major feature window: frame 0 first, frame N-1 last."""

    values: np.ndarray  # shape (window_frames * NUM_FEATURES,), float64
    end_timestamp_ns: int
    window_frames: int

    def __post_init__(self):
        if self.values.shape != (self.window_frames * NUM_FEATURES,):
            raise ValueError(
                f"values shape {self.values.shape} does not match"
                f" {self.window_frames} frames x {NUM_FEATURES} features"
            )

    def as_matrix(self) -> np.ndarray:
        return self.values.reshape(self.window_frames, NUM_FEATURES)


class HistoryBuffer:
    """Ring buffer of validated frames with timestamp-indexed window cuts."""

    def __init__(self, capacity: int = DEFAULT_WINDOW_FRAMES,
                 lookback: int = DEFAULT_LOOKBACK_FRAMES):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        if lookback < 0:
            raise ValueError("lookback must be non-negative")
        self.capacity = capacity
        self.lookback = lookback
        self._ring = capacity + lookback
        self._features = np.zeros((self._ring, NUM_FEATURES), dtype=np.float64)
        self._timestamps = np.zeros(self._ring, dtype=np.int64)
        self._count = 0  # total frames ever pushed
        self._last_ts: Optional[int] = None

    @property
    def fill_count(self) -> int:
        """Number of frames currently available, saturating at capacity."""
        return min(self._count, self.capacity)

    @property
    def total_pushed(self) -> int:
        return self._count

    def push(self, frame: ValidatedFrame) -> None:
        if self._last_ts is not None and frame.timestamp_ns <= self._last_ts:
            raise NonMonotonicTimestamp(
                f"timestamp {frame.timestamp_ns} not after {self._last_ts}"
            )
        slot = self._count % self._ring
        self._features[slot, :] = frame.features()
        self._timestamps[slot] = frame.timestamp_ns
        self._count += 1
        self._last_ts = frame.timestamp_ns

    def _index_at_or_before(self, timestamp_ns: int) -> Optional[int]:
        """Absolute index of the newest stored frame with ts <= timestamp_ns."""
        if self._count == 0:
            return None
        oldest = max(0, self._count - self._ring)
        # Stored timestamps are strictly increasing; binary search over the
        # logical [oldest, count) range.
        lo, hi = oldest, self._count
        while lo < hi:
            mid = (lo + hi) // 2
            if self._timestamps[mid % self._ring] <= timestamp_ns:
                lo = mid + 1
            else:
                hi = mid
        # lo is now the first index with ts > timestamp_ns.
        return lo - 1 if lo > oldest else None

    def _slice(self, end_index: int, frames: int) -> np.ndarray:
        start = end_index - frames + 1
        out = np.empty((frames, NUM_FEATURES), dtype=np.float64)
        for row, abs_idx in enumerate(range(start, end_index + 1)):
            out[row, :] = self._features[abs_idx % self._ring, :]
        return out

    def window_ending_at(self, end_index: int) -> WindowTensor:
        """Window of `capacity` frames whose last frame is `end_index` (absolute)."""
        start = end_index - self.capacity + 1
        oldest = max(0, self._count - self._ring)
        if start < oldest:
            raise NotReady(
                f"window start {start} evicted (oldest retained {oldest})"
            )
        if end_index >= self._count:
            raise NotReady(f"end index {end_index} beyond newest {self._count - 1}")
        mat = self._slice(end_index, self.capacity)
        return WindowTensor(
            values=mat.reshape(-1),
            end_timestamp_ns=int(self._timestamps[end_index % self._ring]),
            window_frames=self.capacity,
        )

    def snapshot_at_blink_end(self, blink: BlinkEvent) -> WindowTensor:
        """Window ending at the newest frame at or before the blink offset.

        Raises NotReady during warm-up, i.e. when fewer than `capacity`
        frames exist at or before that offset.
        """
        end = self._index_at_or_before(blink.offset_ns)
        if end is None or end - self.capacity + 1 < 0:
            have = 0 if end is None else end + 1
            raise NotReady(
                f"{have} frames at or before blink offset; need {self.capacity}"
            )
        return self.window_ending_at(end)

    def augment_shift(self, window: WindowTensor,
                      rng: np.random.Generator) -> WindowTensor:
        """Random +/-MAX_SHIFT_FRAMES re-cut of `window` from the buffer.

        The shift is drawn uniformly from [-10, 10] and clipped to the range
        the buffer can still serve, so augmented windows near the stream
        edges degrade gracefully instead of failing.
        """
        end = self._index_at_or_before(window.end_timestamp_ns)
        if end is None:
            raise NotReady("window end timestamp no longer in buffer")
        shift = int(rng.integers(-MAX_SHIFT_FRAMES, MAX_SHIFT_FRAMES + 1))
        oldest = max(0, self._count - self._ring)
        lo = oldest + self.capacity - 1 - end  # most negative admissible shift
        hi = self._count - 1 - end
        shift = max(lo, min(hi, shift))
        return self.window_ending_at(end + shift)
