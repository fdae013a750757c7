"""Blink segmentation: hysteresis, glitch suppression, winks, gaze hold."""
from __future__ import annotations

import numpy as np
import pytest

from blinkpipe.core import (
    FRAME_INTERVAL_NS,
    BlinkKind,
    CalibrationProfile,
    FrameValidator,
    NoGazeYet,
)
from blinkpipe.segmenter import (
    BlinkSegmenter,
    EyeOpenState,
    EyeState,
    effective_gaze,
)

from conftest import make_frame, openness_frames


def run_segmenter(frames, profile=None, min_closure_samples=2):
    seg = BlinkSegmenter(profile, min_closure_samples)
    validator = FrameValidator()
    states, events = [], []
    for fr in frames:
        state, ev = seg.update(validator.validate(fr))
        states.append(state)
        if ev is not None:
            events.append(ev)
    return states, events


def test_simple_blink_produces_one_event():
    vals = [(1.0, 1.0)] * 3 + [(0.1, 0.1)] * 4 + [(1.0, 1.0)] * 3
    states, events = run_segmenter(openness_frames(vals))
    assert len(events) == 1
    ev = events[0]
    assert ev.kind is BlinkKind.BOTH_EYES
    assert ev.onset_ns == 3 * FRAME_INTERVAL_NS
    assert ev.offset_ns == 7 * FRAME_INTERVAL_NS
    assert ev.min_openness_left == pytest.approx(0.1, abs=1e-6)
    assert states[4].both_closed
    assert states[8].both_open


def test_single_sample_glitch_is_dropped():
    vals = [(1.0, 1.0)] * 3 + [(0.0, 0.0)] + [(1.0, 1.0)] * 3
    _, events = run_segmenter(openness_frames(vals))
    assert events == []


def test_two_sample_closure_is_kept():
    vals = [(1.0, 1.0)] * 3 + [(0.0, 0.0)] * 2 + [(1.0, 1.0)] * 3
    _, events = run_segmenter(openness_frames(vals))
    assert len(events) == 1


def test_hysteresis_band_blocks_reopen_inside_band():
    # Threshold 0.7, band 0.05: 0.72 is open on approach but still closed
    # on the way back up, so the dip below and hover inside the band is one
    # continuous closure.
    vals = [(1.0, 1.0), (0.72, 0.72), (0.5, 0.5), (0.72, 0.72), (0.72, 0.72),
            (0.76, 0.76), (1.0, 1.0)]
    states, events = run_segmenter(openness_frames(vals))
    assert states[1].both_open
    assert states[2].both_closed
    assert states[3].both_closed
    assert states[4].both_closed
    assert states[5].both_open
    assert len(events) == 1
    assert events[0].onset_ns == 2 * FRAME_INTERVAL_NS
    assert events[0].offset_ns == 5 * FRAME_INTERVAL_NS


def test_zero_band_reopens_at_threshold():
    profile = CalibrationProfile(hysteresis_band=0.0)
    vals = [(1.0, 1.0), (0.5, 0.5), (0.5, 0.5), (0.72, 0.72), (1.0, 1.0)]
    states, events = run_segmenter(openness_frames(vals), profile)
    assert states[3].both_open
    assert len(events) == 1


def test_left_wink_kind():
    vals = [(1.0, 1.0)] * 2 + [(0.1, 1.0)] * 5 + [(1.0, 1.0)] * 2
    _, events = run_segmenter(openness_frames(vals))
    assert len(events) == 1
    assert events[0].kind is BlinkKind.LEFT_WINK


def test_right_wink_kind():
    vals = [(1.0, 1.0)] * 2 + [(1.0, 0.1)] * 5 + [(1.0, 1.0)] * 2
    _, events = run_segmenter(openness_frames(vals))
    assert events[0].kind is BlinkKind.RIGHT_WINK


def test_staggered_closure_counts_as_both_eyes():
    # Eyes overlap while closed at frame 4, so this is a blink even though
    # they closed and reopened at different times.
    vals = [(1.0, 1.0), (0.1, 1.0), (0.1, 1.0), (0.1, 0.1), (1.0, 0.1),
            (1.0, 0.1), (1.0, 1.0)]
    _, events = run_segmenter(openness_frames(vals))
    assert len(events) == 1
    assert events[0].kind is BlinkKind.BOTH_EYES
    assert events[0].onset_ns == 1 * FRAME_INTERVAL_NS
    assert events[0].offset_ns == 6 * FRAME_INTERVAL_NS


def test_per_eye_thresholds_respected():
    profile = CalibrationProfile(
        closed_threshold_left=0.4, closed_threshold_right=0.8,
        hysteresis_band=0.05,
    )
    # 0.6 openness: left (thr 0.4) stays open, right (thr 0.8) closes.
    vals = [(1.0, 1.0)] * 2 + [(0.6, 0.6)] * 4 + [(1.0, 1.0)] * 2
    _, events = run_segmenter(openness_frames(vals), profile)
    assert len(events) == 1
    assert events[0].kind is BlinkKind.RIGHT_WINK


def test_gaze_held_at_last_both_open_direction():
    frames = [
        make_frame(0, ldir=(0.0, 0.0, 1.0), rdir=(0.0, 0.0, 1.0)),
        make_frame(FRAME_INTERVAL_NS, lopen=0.1, ropen=0.1,
                   ldir=(1.0, 0.0, 0.0), rdir=(1.0, 0.0, 0.0)),
        make_frame(2 * FRAME_INTERVAL_NS, lopen=0.1, ropen=0.1,
                   ldir=(0.0, 1.0, 0.0), rdir=(0.0, 1.0, 0.0)),
    ]
    seg = BlinkSegmenter()
    validator = FrameValidator()
    for fr in frames:
        state, _ = seg.update(validator.validate(fr))
    held = seg.effective_gaze()
    assert held == pytest.approx((0.0, 0.0, 1.0), abs=1e-6)
    assert state.held_gaze_dir == pytest.approx((0.0, 0.0, 1.0), abs=1e-6)


def test_effective_gaze_tracks_when_open():
    seg = BlinkSegmenter()
    validator = FrameValidator()
    seg.update(validator.validate(make_frame(0, ldir=(0.0, 1.0, 0.0), rdir=(0.0, 1.0, 0.0))))
    assert seg.effective_gaze() == pytest.approx((0.0, 1.0, 0.0), abs=1e-6)


def test_effective_gaze_before_any_frame_raises():
    seg = BlinkSegmenter()
    with pytest.raises(NoGazeYet):
        seg.effective_gaze()
    with pytest.raises(NoGazeYet):
        effective_gaze(EyeState(), None)


def test_eye_state_predicates():
    oo = EyeState(EyeOpenState.OPEN, EyeOpenState.OPEN)
    cc = EyeState(EyeOpenState.CLOSED, EyeOpenState.CLOSED)
    co = EyeState(EyeOpenState.CLOSED, EyeOpenState.OPEN)
    assert oo.both_open and not oo.any_closed
    assert cc.both_closed and cc.any_closed and not cc.exactly_one_closed
    assert co.exactly_one_closed and co.any_closed and not co.both_closed


def test_long_stream_event_count_matches_dip_count():
    rng = np.random.default_rng(11)
    vals = []
    expected = 0
    for _ in range(60):
        vals += [(1.0, 1.0)] * int(rng.integers(5, 15))
        k = int(rng.integers(1, 8))
        vals += [(0.05, 0.05)] * k
        if k >= 2:
            expected += 1
    vals += [(1.0, 1.0)] * 3
    _, events = run_segmenter(openness_frames(vals))
    assert len(events) == expected
    offs = [e.offset_ns for e in events]
    assert offs == sorted(offs)
    assert all(e.onset_ns < e.offset_ns for e in events)
