"""Command line interface for the blinkpipe toolkit.

Subcommands
-----------
simulate    synthesize gaze recordings plus ground-truth ledgers
train       fit the blink classifier on labeled recordings
eval        score a checkpoint against held-out recordings
serve       run the TCP prediction service
replay      stream a recording to a running server and print predictions
fsm-trace   run the interaction state machine over a recording
calibrate   estimate per-eye closure thresholds from a recording
stats       summarize blink statistics for a dataset

Every subcommand accepts --seed, --log-level, and --config. A config file
holds one ``key = value`` pair per line (keys are the long flag names,
dashes or underscores); values given on the command line win over the
file. ``#`` starts a comment. The BLINKPIPE_LOG environment variable sets
the default log level; --log-level overrides it.

Exit codes: 0 success, 2 usage error, 3 data error, 4 I/O error,
5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .core import (
    DEFAULT_HYSTERESIS_BAND,
    NUM_FEATURES,
    BlinkLabel,
    BlinkPipeError,
    CalibrationProfile,
    FrameValidator,
    HeadPose,
    NonMonotonicTimestamp,
)
from .segmenter import BlinkSegmenter
from .window import DEFAULT_LOOKBACK_FRAMES, DEFAULT_WINDOW_FRAMES, NotReady
from .net import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    BatchTooSmallForTrainMode,
    BlinkNet,
    CheckpointFormatError,
    EmptySplit,
    ModelCheckpoint,
    ShapeMismatch,
    classify,
    train as train_model,
)
from .dataset import (
    LabeledBlink,
    Recording,
    RecordingFormatError,
    SplitSpec,
    TooFewParticipants,
    assign_participants,
    dataset_stats,
    label_blinks,
    load_recording,
    materialize_windows,
    save_recording,
)
from .eval import (
    ConfusionMatrix,
    EmptyMatrix,
    format_metrics_table,
    metrics,
    metrics_report,
)
from .proto import (
    DEFAULT_PORT,
    BadMagic,
    BlinkServer,
    TruncatedMessage,
    UnknownType,
    replay_over_tcp,
    validate_frames,
)
from .fsm import (
    DEFAULT_DEAD_ZONE_DEG,
    DEFAULT_PLANE_DISTANCE_M,
    InteractionMachine,
    UIPlane,
    format_trace_line,
)
from . import sim

log = logging.getLogger("blinkpipe.cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_IO = 4
EXIT_INTERNAL = 5

_DATA_ERRORS = (
    RecordingFormatError,
    TooFewParticipants,
    CheckpointFormatError,
    EmptySplit,
    EmptyMatrix,
    BadMagic,
    TruncatedMessage,
    UnknownType,
    NotReady,
    NonMonotonicTimestamp,
    ShapeMismatch,
    BatchTooSmallForTrainMode,
)

_SMALL_BLOCK_DIMS = ((64, 64), (64, 32), (32, 32))


def _coerce(text: str):
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _load_config_file(path: str, known_keys: Set[str]) -> Dict[str, object]:
    pairs: Dict[str, object] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = line.split("=", 1)
            dest = key.strip().replace("-", "_")
            if dest not in known_keys:
                raise ValueError(f"{path}:{lineno}: unknown option {key.strip()!r}")
            pairs[dest] = _coerce(val.strip())
    return pairs


def _scan_config_flag(argv: List[str]) -> Optional[str]:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _setup_logging(flag_level: Optional[str]) -> None:
    name = flag_level or os.environ.get("BLINKPIPE_LOG", "warning")
    level = getattr(logging, name.upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"unknown log level {name!r}")
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parse_hostport(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _load_recordings(path: str) -> List[Recording]:
    if os.path.isdir(path):
        names = sorted(
            n for n in os.listdir(path)
            if n.endswith(".csv") or n.endswith(".csv.gz")
        )
        if not names:
            raise RecordingFormatError(f"no *.csv or *.csv.gz recordings in {path}")
        return [load_recording(os.path.join(path, n)) for n in names]
    return [load_recording(path)]


def _load_profile(path: Optional[str]) -> Optional[CalibrationProfile]:
    if path is None:
        return None
    with open(path, "r", encoding="ascii") as fh:
        data = json.load(fh)
    try:
        return CalibrationProfile(
            closed_threshold_left=float(data["closed_threshold_left"]),
            closed_threshold_right=float(data["closed_threshold_right"]),
            hysteresis_band=float(data["hysteresis_band"]),
        )
    except KeyError as exc:
        raise RecordingFormatError(f"{path}: missing profile key {exc}") from exc


def _net_from_checkpoint(path: str) -> Tuple[BlinkNet, int]:
    net = ModelCheckpoint.load(path).build_net()
    if net.input_dim % NUM_FEATURES:
        raise CheckpointFormatError(
            f"input dim {net.input_dim} is not a multiple of {NUM_FEATURES}"
        )
    return net, net.input_dim // NUM_FEATURES


def _print_json(payload: Dict, path: Optional[str] = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.minutes <= 0:
        log.warning("simulating 0 minutes: recordings will be empty")
    total_blinks = total_presses = 0
    for i in range(args.participants):
        pid = f"P{i:02d}"
        cfg = sim.SimConfig(
            seed=args.seed + i,
            duration_s=args.minutes * 60.0,
            participant_id=pid,
            spontaneous_rate_per_min=args.spontaneous_rate,
            voluntary_rate_per_min=args.voluntary_rate,
            wink_rate_per_min=args.wink_rate,
            hard_mode=args.hard_mode,
        )
        rec, ledger = sim.generate_session(cfg)
        ext = ".csv.gz" if args.gzip else ".csv"
        save_recording(rec, os.path.join(args.out, pid + ext))
        sim.save_ledger(ledger, os.path.join(args.out, pid + ".ledger.json"))
        n_vol = sum(1 for e in ledger.entries if e.label is BlinkLabel.VOLUNTARY)
        print(
            f"{pid}: {len(ledger.entries)} blink events"
            f" ({n_vol} voluntary, {len(ledger.entries) - n_vol} spontaneous),"
            f" {len(ledger.button_presses)} presses"
        )
        total_blinks += len(ledger.entries)
        total_presses += len(ledger.button_presses)
    print(
        f"wrote {args.participants} recordings to {args.out}:"
        f" {total_blinks} blink events, {total_presses} presses"
    )
    return EXIT_OK


def _materialized_split(
    recs: List[Recording],
    seed: int,
    window_frames: int,
    lookback: int,
    augment: int,
    profile: Optional[CalibrationProfile],
) -> Tuple[SplitSpec, Dict[str, List[LabeledBlink]]]:
    spec = assign_participants((r.participant_id for r in recs), SplitSpec(), seed)
    rng = np.random.default_rng(seed)
    buckets: Dict[str, List[LabeledBlink]] = {"train": [], "val": [], "test": []}
    for rec in recs:
        if rec.participant_id in spec.train:
            bucket, copies = "train", augment
        elif rec.participant_id in spec.val:
            bucket, copies = "val", 0
        else:
            bucket, copies = "test", 0
        labeled = label_blinks(rec, profile)
        buckets[bucket].extend(
            materialize_windows(rec, labeled, window_frames, lookback, copies, rng)
        )
    return spec, buckets


def cmd_train(args: argparse.Namespace) -> int:
    recs = _load_recordings(args.data)
    profile = _load_profile(args.profile)
    try:
        spec, buckets = _materialized_split(
            recs, args.seed, args.window, args.lookback, args.augment, profile
        )
    except TooFewParticipants as exc:
        raise TooFewParticipants(
            f"{exc}; training needs recordings from at least 3"
            " distinct participants so validation and test splits"
            " can each hold one out"
        ) from exc
    pairs = {
        name: [(lb.window, lb.label) for lb in blinks]
        for name, blinks in buckets.items()
    }
    log.info(
        "split sizes: train=%d val=%d test=%d (windows)",
        len(pairs["train"]), len(pairs["val"]), len(pairs["test"]),
    )
    os.makedirs(args.out, exist_ok=True)
    block_dims = _SMALL_BLOCK_DIMS if args.arch == "small" else None
    stem_width = 64 if args.arch == "small" else 128
    best, history = train_model(
        pairs["train"],
        pairs["val"],
        epochs=args.epochs,
        seed=args.seed,
        lr=args.lr,
        batch_size=args.batch_size,
        checkpoint_dir=args.out,
        stem_width=stem_width,
        block_dims=block_dims,
        log=log.info,
    )
    payload = {
        "version": 1,
        "lr": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "window_frames": args.window,
        "arch": args.arch,
        "augment": args.augment,
        "participants": {
            "train": sorted(spec.train),
            "val": sorted(spec.val),
            "test": sorted(spec.test),
        },
        "best_epoch": best.epoch,
        "history": [dataclasses.asdict(s) for s in history],
    }
    _print_json(payload, os.path.join(args.out, "history.json"))
    final = history[-1]
    print(
        f"trained {len(history)} epochs: final train loss {final.train_loss!r},"
        f" best val loss {best.validation_loss!r} (epoch {best.epoch})"
    )
    print(f"checkpoints in {args.out} (best.bnet, epoch_NNNN.bnet, history.json)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    net, window_frames = _net_from_checkpoint(args.checkpoint)
    profile = _load_profile(args.profile)
    truth: List[BlinkLabel] = []
    predicted: List[BlinkLabel] = []
    for rec in _load_recordings(args.test):
        labeled = label_blinks(rec, profile)
        for lb in materialize_windows(rec, labeled, window_frames, args.lookback):
            truth.append(lb.label)
            predicted.append(classify(net, lb.window)[0])
    cm = ConfusionMatrix.from_predictions(truth, predicted)
    _print_json(metrics_report(cm), args.out)
    if args.table:
        print(format_metrics_table({"test": metrics(cm)}))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    net, window_frames = _net_from_checkpoint(args.checkpoint)
    host, port = _parse_hostport(args.listen)
    profile = _load_profile(args.profile)
    server = BlinkServer(
        net,
        host=host,
        port=port,
        warmup_policy=args.warmup_policy,
        profile=profile,
        window_frames=window_frames,
        lookback=args.lookback,
    )
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    for s in server.sessions:
        log.info(
            "session %s: %d frames, %d predictions, %d dropped",
            s.peer, s.frames_received, s.predictions_sent, s.frames_dropped,
        )
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    rec = load_recording(args.input)
    frames = validate_frames(rec.frames)
    host, port = _parse_hostport(args.connect)
    preds = replay_over_tcp((host, port), frames, speed_multiplier=args.speed)
    for p in preds:
        print(f"{p.blink_end_ns}\t{p.label.name.lower()}\t{p.confidence!r}")
    log.info("sent %d frames, received %d predictions", len(frames), len(preds))
    return EXIT_OK


def cmd_fsm_trace(args: argparse.Namespace) -> int:
    rec = load_recording(args.input)
    validator = FrameValidator()
    segmenter = BlinkSegmenter(_load_profile(args.profile))
    machine = InteractionMachine(
        plane=UIPlane.facing_user(args.plane_distance),
        dead_zone_deg=args.dead_zone,
    )
    lines = []
    for fr in rec.frames:
        vf = validator.validate(fr)
        state, _ = segmenter.update(vf)
        # No head tracker channel in recordings: the binocular gaze ray
        # stands in for head forward so winks plus eye motion drive drags.
        head = HeadPose(vf.timestamp_ns, (0.0, 0.0, 0.0), vf.binocular_dir())
        events = machine.step(state, head)
        lines.append(format_trace_line(vf.timestamp_ns, machine.state.mode, events))
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text + ("\n" if lines else ""))
    else:
        print(text)
    return EXIT_OK


def _two_means_threshold(values: np.ndarray) -> Optional[float]:
    """Midpoint of p5(open cluster) and p95(closed cluster), or None.

    The clusters come from 1-D two-means with fixed initial centers, so
    the estimate is deterministic for a given recording.
    """
    center_open, center_closed = 0.95, 0.2
    open_vals = closed_vals = None
    for _ in range(64):
        mid = (center_open + center_closed) / 2.0
        open_vals = values[values >= mid]
        closed_vals = values[values < mid]
        if open_vals.size == 0 or closed_vals.size == 0:
            return None
        new_open = float(open_vals.mean())
        new_closed = float(closed_vals.mean())
        if abs(new_open - center_open) < 1e-9 and abs(new_closed - center_closed) < 1e-9:
            break
        center_open, center_closed = new_open, new_closed
    threshold = (np.percentile(open_vals, 5) + np.percentile(closed_vals, 95)) / 2.0
    return float(min(max(threshold, 0.05), 0.9))


def cmd_calibrate(args: argparse.Namespace) -> int:
    rec = load_recording(args.input)
    frames = validate_frames(rec.frames)
    if not frames:
        raise RecordingFormatError(f"{args.input}: recording has no frames")
    left = np.array([f.left_openness for f in frames])
    right = np.array([f.right_openness for f in frames])
    thresholds = {}
    for eye, vals in (("left", left), ("right", right)):
        thr = _two_means_threshold(vals)
        if thr is None:
            log.warning("%s eye never closed; using default threshold", eye)
            thr = CalibrationProfile().closed_threshold_left
        thresholds[eye] = thr
    # Constructing validates the threshold/band ranges before anything is written.
    profile = CalibrationProfile(
        closed_threshold_left=thresholds["left"],
        closed_threshold_right=thresholds["right"],
        hysteresis_band=args.band,
    )
    _print_json(
        {
            "closed_threshold_left": profile.closed_threshold_left,
            "closed_threshold_right": profile.closed_threshold_right,
            "hysteresis_band": profile.hysteresis_band,
        },
        args.out,
    )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    profile = _load_profile(args.profile)
    per_pid: Dict[str, List[LabeledBlink]] = {}
    everything: List[LabeledBlink] = []
    for rec in _load_recordings(args.data):
        labeled = label_blinks(rec, profile)
        per_pid.setdefault(rec.participant_id, []).extend(labeled)
        everything.extend(labeled)
    payload = {
        "overall": dataclasses.asdict(dataset_stats(everything)),
        "participants": {
            pid: dataclasses.asdict(dataset_stats(blinks))
            for pid, blinks in sorted(per_pid.items())
        },
    }
    _print_json(payload, args.out)
    return EXIT_OK


@dataclasses.dataclass
class _CommandSpec:
    """One subcommand's parser plus the option dests it accepts."""

    parser: argparse.ArgumentParser
    dests: Set[str]

    def opt(self, *names: str, **kwargs) -> None:
        self.dests.add(self.parser.add_argument(*names, **kwargs).dest)


def _build_parser() -> Tuple[argparse.ArgumentParser, List[_CommandSpec]]:
    common = argparse.ArgumentParser(add_help=False)
    common_dests = {
        common.add_argument("--seed", type=int, default=0,
                            help="RNG seed (default 0)").dest,
        common.add_argument("--log-level",
                            choices=("debug", "info", "warning", "error"),
                            default=None, help="overrides BLINKPIPE_LOG").dest,
        common.add_argument("--config", metavar="FILE", default=None,
                            help="key = value defaults file; explicit"
                                 " flags win").dest,
    }

    parser = argparse.ArgumentParser(
        prog="blinkpipe",
        description="Blink-driven interaction toolkit: simulate, train, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    commands: List[_CommandSpec] = []

    def new_command(name: str, func, help_text: str) -> _CommandSpec:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        spec = _CommandSpec(p, set(common_dests))
        commands.append(spec)
        return spec

    c = new_command("simulate", cmd_simulate,
                    "synthesize recordings plus ground-truth ledgers")
    c.opt("--out", required=True, help="output directory")
    c.opt("--minutes", type=float, default=10.0,
          help="session length per participant")
    c.opt("--participants", type=int, default=1,
          help="number of sessions; participant i uses seed+i")
    c.opt("--spontaneous-rate", type=float, default=17.0, help="per minute")
    c.opt("--voluntary-rate", type=float, default=15.0, help="per minute")
    c.opt("--wink-rate", type=float, default=2.0, help="per minute")
    c.opt("--hard-mode", action="store_true",
          help="draw voluntary blinks from the spontaneous-overlap regime")
    c.opt("--gzip", action="store_true", help="write .csv.gz recordings")

    c = new_command("train", cmd_train,
                    "fit the classifier on a directory of recordings")
    c.opt("--data", required=True, help="directory of recordings (.csv/.csv.gz)")
    c.opt("--out", required=True, help="checkpoint + history output directory")
    c.opt("--epochs", type=int, default=DEFAULT_EPOCHS)
    c.opt("--lr", type=float, default=DEFAULT_LR)
    c.opt("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    c.opt("--window", type=int, default=DEFAULT_WINDOW_FRAMES,
          help="frames per input window")
    c.opt("--lookback", type=int, default=DEFAULT_LOOKBACK_FRAMES)
    c.opt("--augment", type=int, default=1,
          help="extra shifted copies of each training window")
    c.opt("--arch", choices=("full", "small"), default="full",
          help="small = narrow stem and 3 blocks, for toy runs")
    c.opt("--profile", default=None, help="calibration profile JSON")

    c = new_command("eval", cmd_eval, "score a checkpoint against recordings")
    c.opt("--checkpoint", required=True)
    c.opt("--test", required=True, help="recording file or directory")
    c.opt("--lookback", type=int, default=DEFAULT_LOOKBACK_FRAMES)
    c.opt("--profile", default=None, help="calibration profile JSON")
    c.opt("--table", action="store_true", help="also print a plain-text table")
    c.opt("--out", default=None,
          help="write the JSON report here instead of stdout")

    c = new_command("serve", cmd_serve, "run the TCP prediction server")
    c.opt("--checkpoint", required=True)
    c.opt("--listen", default=f"127.0.0.1:{DEFAULT_PORT}", metavar="HOST:PORT")
    c.opt("--warmup-policy", choices=("voluntary", "suppress"),
          default="voluntary",
          help="prediction for blinks that end before the window fills")
    c.opt("--lookback", type=int, default=DEFAULT_LOOKBACK_FRAMES)
    c.opt("--profile", default=None, help="calibration profile JSON")

    c = new_command("replay", cmd_replay,
                    "stream a recording to a server, print its predictions")
    c.opt("--in", dest="input", required=True, help="recording file")
    c.opt("--connect", required=True, metavar="HOST:PORT")
    c.opt("--speed", type=float, default=1.0,
          help="pacing multiplier; 0 sends as fast as possible")

    c = new_command("fsm-trace", cmd_fsm_trace,
                    "run the interaction machine over a recording")
    c.opt("--in", dest="input", required=True, help="recording file")
    c.opt("--out", default=None, help="trace file (default stdout)")
    c.opt("--plane-distance", type=float, default=DEFAULT_PLANE_DISTANCE_M)
    c.opt("--dead-zone", type=float, default=DEFAULT_DEAD_ZONE_DEG,
          help="degrees of head rotation treated as noise")
    c.opt("--profile", default=None, help="calibration profile JSON")

    c = new_command("calibrate", cmd_calibrate,
                    "estimate per-eye closure thresholds from a recording")
    c.opt("--in", dest="input", required=True, help="guided recording file")
    c.opt("--band", type=float, default=DEFAULT_HYSTERESIS_BAND,
          help="hysteresis band to record in the profile")
    c.opt("--out", default=None, help="profile JSON path (default stdout)")

    c = new_command("stats", cmd_stats,
                    "summarize blink statistics for a dataset")
    c.opt("--data", required=True, help="recording file or directory")
    c.opt("--profile", default=None, help="calibration profile JSON")
    c.opt("--out", default=None,
          help="write the JSON report here instead of stdout")

    return parser, commands


def main(argv: Optional[List[str]] = None) -> int:
    args_list = list(sys.argv[1:] if argv is None else argv)
    parser, commands = _build_parser()
    cfg_path = _scan_config_flag(args_list)
    if cfg_path is not None:
        known_keys = set().union(*(c.dests for c in commands))
        try:
            pairs = _load_config_file(cfg_path, known_keys)
        except OSError as exc:
            print(f"blinkpipe: {exc}", file=sys.stderr)
            return EXIT_IO
        except ValueError as exc:
            print(f"blinkpipe: {exc}", file=sys.stderr)
            return EXIT_USAGE
        # Subcommands parse into a fresh namespace, so file-sourced defaults
        # must land on each subparser, filtered to the options it accepts.
        for c in commands:
            c.parser.set_defaults(
                **{k: v for k, v in pairs.items() if k in c.dests}
            )
    try:
        args = parser.parse_args(args_list)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        _setup_logging(args.log_level)
        return args.func(args)
    except ValueError as exc:
        print(f"blinkpipe: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"blinkpipe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"blinkpipe: {exc}", file=sys.stderr)
        return EXIT_IO
    except BlinkPipeError as exc:
        print(f"blinkpipe: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
