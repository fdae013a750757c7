"""Recording persistence, blink labeling, and participant-level splits.

A blink is labeled Voluntary iff some button press falls within 200 ms of
the blink offset (symmetric, inclusive). Winks never enter the
classification dataset: they drive drags, not selections.

Recording file format: an optional `# key=value ...` comment line carrying
participant id and metadata, a CSV header, then one row per frame:

    timestamp_ns,lpupil,rpupil,lopen,ropen,ldx,ldy,ldz,rdx,rdy,rdz,valid

Button presses live in a sidecar file (same stem, `.presses` suffix), one
nanosecond timestamp per line. Files whose name ends in `.gz` are
transparently gzip-compressed.
"""
from __future__ import annotations

import gzip
import os
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    FRAME_INTERVAL_NS,
    BlinkEvent,
    BlinkKind,
    BlinkLabel,
    BlinkPipeError,
    CalibrationProfile,
    FrameValidator,
    GazeFrame,
)
from .segmenter import BlinkSegmenter
from .window import (
    DEFAULT_LOOKBACK_FRAMES,
    DEFAULT_WINDOW_FRAMES,
    MAX_SHIFT_FRAMES,
    HistoryBuffer,
    NotReady,
    WindowTensor,
)

INTENT_MARGIN_NS = 200_000_000  # press within this of blink offset = voluntary

_CSV_HEADER = "timestamp_ns,lpupil,rpupil,lopen,ropen,ldx,ldy,ldz,rdx,rdy,rdz,valid"


class TooFewParticipants(BlinkPipeError):
    """Participant-level splitting needs at least 3 participants."""


class RecordingFormatError(BlinkPipeError):
    """A recording file does not parse."""


@dataclass
class Recording:
    participant_id: str
    frames: List[GazeFrame]
    button_presses: List[int]
    metadata: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class LabeledBlink:
    blink: BlinkEvent
    label: BlinkLabel
    window: Optional[WindowTensor] = None
    participant_id: str = ""


# --------------------------------------------------------------------------
# recording files


def _sidecar_path(path: str) -> str:
    base = path
    gz = base.endswith(".gz")
    if gz:
        base = base[:-3]
    stem, _ = os.path.splitext(base)
    return stem + ".presses" + (".gz" if gz else "")


def _open_text(path: str, mode: str):
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="ascii", newline="")
    return open(path, mode, encoding="ascii", newline="")


def save_recording(rec: Recording, path: str) -> None:
    meta = dict(rec.metadata)
    tokens = [f"participant={rec.participant_id}"]
    tokens += [f"{k}={meta[k]}" for k in sorted(meta)]
    for tok in tokens:
        if any(c in tok for c in (" ", ",", "\n")) or tok.count("=") != 1:
            raise ValueError(f"metadata token not representable: {tok!r}")
    with _open_text(path, "w") as f:
        f.write("# " + " ".join(tokens) + "\n")
        f.write(_CSV_HEADER + "\n")
        for fr in rec.frames:
            ldx, ldy, ldz = fr.left_dir
            rdx, rdy, rdz = fr.right_dir
            f.write(
                f"{fr.timestamp_ns},{fr.left_pupil_mm!r},{fr.right_pupil_mm!r},"
                f"{fr.left_openness!r},{fr.right_openness!r},"
                f"{ldx!r},{ldy!r},{ldz!r},{rdx!r},{rdy!r},{rdz!r},"
                f"{1 if fr.valid else 0}\n"
            )
    with _open_text(_sidecar_path(path), "w") as f:
        for ts in rec.button_presses:
            f.write(f"{ts}\n")


def load_recording(path: str) -> Recording:
    participant = ""
    metadata: Dict[str, str] = {}
    frames: List[GazeFrame] = []
    with _open_text(path, "r") as f:
        line = f.readline()
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" not in tok:
                    raise RecordingFormatError(f"bad metadata token {tok!r}")
                k, v = tok.split("=", 1)
                if k == "participant":
                    participant = v
                else:
                    metadata[k] = v
            line = f.readline()
        if line.strip() != _CSV_HEADER:
            raise RecordingFormatError(
                f"unexpected column header {line.strip()!r}"
            )
        for lineno, row in enumerate(f, start=3):
            row = row.strip()
            if not row:
                continue
            parts = row.split(",")
            if len(parts) != 12:
                raise RecordingFormatError(
                    f"line {lineno}: expected 12 columns, got {len(parts)}"
                )
            try:
                frames.append(GazeFrame(
                    timestamp_ns=int(parts[0]),
                    left_pupil_mm=float(parts[1]),
                    right_pupil_mm=float(parts[2]),
                    left_openness=float(parts[3]),
                    right_openness=float(parts[4]),
                    left_dir=(float(parts[5]), float(parts[6]), float(parts[7])),
                    right_dir=(float(parts[8]), float(parts[9]), float(parts[10])),
                    valid=parts[11] == "1",
                ))
            except ValueError as e:
                raise RecordingFormatError(f"line {lineno}: {e}") from e
    presses: List[int] = []
    sidecar = _sidecar_path(path)
    if os.path.exists(sidecar):
        with _open_text(sidecar, "r") as f:
            for row in f:
                row = row.strip()
                if row:
                    presses.append(int(row))
    return Recording(participant, frames, presses, metadata)


# --------------------------------------------------------------------------
# labeling


def label_blinks(rec: Recording,
                 profile: Optional[CalibrationProfile] = None) -> List[LabeledBlink]:
    """Segment the recording and label every both-eye blink.

    Voluntary iff a button press lies in [offset - 200 ms, offset + 200 ms]
    (inclusive); winks are dropped.
    """
    validator = FrameValidator()
    seg = BlinkSegmenter(profile)
    presses = np.asarray(sorted(rec.button_presses), dtype=np.int64)
    out: List[LabeledBlink] = []
    for fr in rec.frames:
        _, event = seg.update(validator.validate(fr))
        if event is None or event.kind is not BlinkKind.BOTH_EYES:
            continue
        lo = np.searchsorted(presses, event.offset_ns - INTENT_MARGIN_NS, side="left")
        hi = np.searchsorted(presses, event.offset_ns + INTENT_MARGIN_NS, side="right")
        label = BlinkLabel.VOLUNTARY if hi > lo else BlinkLabel.INVOLUNTARY
        out.append(LabeledBlink(event, label, None, rec.participant_id))
    return out


def materialize_windows(
    rec: Recording,
    labeled: Sequence[LabeledBlink],
    window_frames: int = DEFAULT_WINDOW_FRAMES,
    lookback: int = DEFAULT_LOOKBACK_FRAMES,
    augment_copies: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> List[LabeledBlink]:
    """Attach feature windows to labeled blinks by streaming the recording.

    Blinks that end before `window_frames` frames have accumulated (the
    warm-up period) are silently dropped. `augment_copies` adds that many
    randomly shifted (within +/-10 frames) re-cuts of each window, sharing
    the original's label; requires `rng`.
    """
    if augment_copies > 0 and rng is None:
        raise ValueError("augmentation requires an rng")
    validator = FrameValidator()
    # Retention must cover the snapshot delay below plus a full backward
    # shift, on top of whatever slack the caller asked for.
    buf = HistoryBuffer(window_frames, lookback + 2 * MAX_SHIFT_FRAMES)
    pending = sorted(labeled, key=lambda lb: lb.blink.offset_ns)
    out: List[LabeledBlink] = []
    pi = 0

    def emit(lb: LabeledBlink) -> None:
        try:
            w = buf.snapshot_at_blink_end(lb.blink)
        except NotReady:
            return
        out.append(replace(lb, window=w))
        for _ in range(augment_copies):
            out.append(replace(lb, window=buf.augment_shift(w, rng)))

    # Snapshots wait MAX_SHIFT_FRAMES past the offset so forward shifts
    # have real frames to land on.
    margin_ns = MAX_SHIFT_FRAMES * FRAME_INTERVAL_NS
    for fr in rec.frames:
        buf.push(validator.validate(fr))
        while pi < len(pending) and pending[pi].blink.offset_ns + margin_ns <= fr.timestamp_ns:
            emit(pending[pi])
            pi += 1
    while pi < len(pending):
        emit(pending[pi])
        pi += 1
    return out


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    """Participant split: either explicit id sets or 80/10/10-style ratios."""

    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    train: Optional[FrozenSet[str]] = None
    val: Optional[FrozenSet[str]] = None
    test: Optional[FrozenSet[str]] = None

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if min(self.train_frac, self.val_frac, self.test_frac) <= 0:
            raise ValueError("split fractions must be positive")
        explicit = [self.train, self.val, self.test]
        if any(s is not None for s in explicit):
            if any(s is None for s in explicit):
                raise ValueError("explicit split sets must all be given")
            if (self.train & self.val) or (self.train & self.test) \
                    or (self.val & self.test):
                raise ValueError("explicit split sets must be pairwise disjoint")

    @property
    def is_explicit(self) -> bool:
        return self.train is not None


def assign_participants(participant_ids: Iterable[str], spec: SplitSpec,
                        seed: int = 0) -> SplitSpec:
    """Resolve ratio-based splitting into explicit disjoint participant sets.

    Validation and test each receive at least one participant
    (max(1, round(frac * n))); training takes the remainder.
    """
    pids = sorted(set(participant_ids))
    n = len(pids)
    if n < 3:
        raise TooFewParticipants(f"need >= 3 participants, got {n}")
    if spec.is_explicit:
        claimed = spec.train | spec.val | spec.test
        if claimed != set(pids):
            raise ValueError(
                f"explicit split covers {sorted(claimed)}, data has {pids}"
            )
        return spec
    rng = np.random.default_rng(seed)
    order = [pids[i] for i in rng.permutation(n)]
    n_val = max(1, round(n * spec.val_frac))
    n_test = max(1, round(n * spec.test_frac))
    if n_val + n_test >= n:
        n_val = n_test = 1
    val = frozenset(order[:n_val])
    test = frozenset(order[n_val:n_val + n_test])
    train = frozenset(order[n_val + n_test:])
    return replace(spec, train=train, val=val, test=test)


def split_by_participant(
    recordings: Iterable[Recording],
    spec: Optional[SplitSpec] = None,
    seed: int = 0,
    profile: Optional[CalibrationProfile] = None,
) -> Tuple[List[LabeledBlink], List[LabeledBlink], List[LabeledBlink]]:
    """Label every recording and split blinks by participant.

    No participant contributes to more than one of (train, val, test).
    """
    recs = list(recordings)
    resolved = assign_participants(
        (r.participant_id for r in recs), spec or SplitSpec(), seed
    )
    splits: Tuple[List[LabeledBlink], ...] = ([], [], [])
    for rec in recs:
        blinks = label_blinks(rec, profile)
        if rec.participant_id in resolved.train:
            splits[0].extend(blinks)
        elif rec.participant_id in resolved.val:
            splits[1].extend(blinks)
        else:
            splits[2].extend(blinks)
    return splits


# --------------------------------------------------------------------------
# summary statistics


@dataclass(frozen=True)
class DatasetStats:
    n: int
    n_voluntary: int
    n_involuntary: int
    voluntary_fraction: float
    blinks_per_minute: float
    mean_interval_s: float
    mean_duration_ms: float


def dataset_stats(blinks: Sequence[LabeledBlink]) -> DatasetStats:
    n = len(blinks)
    if n == 0:
        return DatasetStats(0, 0, 0, 0.0, 0.0, 0.0, 0.0)
    n_vol = sum(1 for b in blinks if b.label is BlinkLabel.VOLUNTARY)
    events = sorted(blinks, key=lambda b: b.blink.onset_ns)
    span_s = (events[-1].blink.offset_ns - events[0].blink.onset_ns) / 1e9
    per_min = 60.0 * n / span_s if span_s > 0 else 0.0
    interval = span_s / (n - 1) if n > 1 else 0.0
    duration_ms = sum(b.blink.duration_ns for b in blinks) / n / 1e6
    return DatasetStats(
        n=n,
        n_voluntary=n_vol,
        n_involuntary=n - n_vol,
        voluntary_fraction=n_vol / n,
        blinks_per_minute=per_min,
        mean_interval_s=interval,
        mean_duration_ms=duration_ms,
    )
