"""Shared builders for synthetic frames and recordings."""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from blinkpipe.core import FRAME_INTERVAL_NS, NUM_FEATURES, GazeFrame
from blinkpipe.dataset import Recording
from blinkpipe.net import BlinkNet


def make_frame(
    ts_ns: int,
    lopen: float = 1.0,
    ropen: float = 1.0,
    ldir: Tuple[float, float, float] = (0.0, 0.0, 1.0),
    rdir: Tuple[float, float, float] = (0.0, 0.0, 1.0),
    lpupil: float = 4.0,
    rpupil: float = 4.0,
    valid: bool = True,
) -> GazeFrame:
    return GazeFrame(
        timestamp_ns=ts_ns,
        left_pupil_mm=lpupil,
        right_pupil_mm=rpupil,
        left_openness=lopen,
        right_openness=ropen,
        left_dir=ldir,
        right_dir=rdir,
        valid=valid,
    )


def openness_frames(
    values: Sequence[Tuple[float, float]],
    start_ns: int = 0,
) -> List[GazeFrame]:
    """One frame per (left, right) openness pair on the 200 Hz grid."""
    return [
        make_frame(start_ns + i * FRAME_INTERVAL_NS, lopen=lo, ropen=ro)
        for i, (lo, ro) in enumerate(values)
    ]


def square_blink_recording(
    blink_starts: Sequence[int],
    closed_frames: int = 20,
    n_frames: Optional[int] = None,
    presses: Sequence[int] = (),
    participant_id: str = "P00",
) -> Recording:
    """Recording with rectangular both-eye closures at the given frame indices.

    Openness drops to 0 for `closed_frames` frames, so each blink's offset
    is exactly the timestamp of the first open frame after the dip.
    """
    if n_frames is None:
        n_frames = max(blink_starts) + closed_frames + 50 if blink_starts else 100
    open_vals = np.ones(n_frames)
    for s in blink_starts:
        open_vals[s:s + closed_frames] = 0.0
    frames = [
        make_frame(i * FRAME_INTERVAL_NS, lopen=float(v), ropen=float(v))
        for i, v in enumerate(open_vals)
    ]
    return Recording(
        participant_id=participant_id,
        frames=frames,
        button_presses=sorted(int(p) for p in presses),
        metadata={"device": "test"},
    )


def square_blink_offset_ns(start_idx: int, closed_frames: int) -> int:
    """Offset timestamp for a rectangular closure starting at start_idx."""
    return (start_idx + closed_frames) * FRAME_INTERVAL_NS


def tiny_net(window_frames: int, seed: int = 0) -> BlinkNet:
    """Small random-weight classifier sized for the given window."""
    return BlinkNet(
        input_dim=window_frames * NUM_FEATURES,
        stem_width=16,
        block_dims=((16, 16), (16, 8)),
        seed=seed,
    )
