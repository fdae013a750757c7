"""Binary TCP protocol, the prediction server, and the client-side 100 ms
association rule.

Wire format (all little-endian, fixed-size, magic "GZF1"):

    header      magic 4 bytes, msg_type u8
    type 0      gaze frame: timestamp_ns u64, 10 features f32  (53 bytes)
    type 1      prediction: timestamp_ns u64, blink_end_ns u64,
                class u8 (0 = Voluntary, 1 = Involuntary),
                confidence f32                                  (26 bytes)
    type 2      session control: timestamp_ns u64, command u8
                (0 = end session, 1 = reset session state)      (14 bytes)

Validation (and its float32 feature quantization) happens on the producer
side; the server ingests wire features as-is. Every feature value is
exactly representable in f32, so a session fed over TCP and the same
session fed in process see bit-identical inputs and produce identical
predictions.
"""
from __future__ import annotations

import enum
import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    BlinkKind,
    BlinkLabel,
    BlinkPipeError,
    CalibrationProfile,
    FrameValidator,
    GazeFrame,
    NUM_FEATURES,
    ValidatedFrame,
)
from .net import BlinkNet, ModelCheckpoint, classify
from .segmenter import BlinkSegmenter
from .window import (
    DEFAULT_LOOKBACK_FRAMES,
    DEFAULT_WINDOW_FRAMES,
    HistoryBuffer,
    NotReady,
)

_log = logging.getLogger("blinkpipe.proto")

MAGIC = b"GZF1"
MSG_GAZE = 0
MSG_PREDICTION = 1
MSG_CONTROL = 2

GAZE_MSG_SIZE = 53
PREDICTION_MSG_SIZE = 26
CONTROL_MSG_SIZE = 14
_HEADER_SIZE = 5
MESSAGE_SIZES = {
    MSG_GAZE: GAZE_MSG_SIZE,
    MSG_PREDICTION: PREDICTION_MSG_SIZE,
    MSG_CONTROL: CONTROL_MSG_SIZE,
}

CONTROL_END = 0
CONTROL_RESET = 1

DEFAULT_PORT = 48200
ASSOCIATION_WINDOW_NS = 100_000_000
DEFAULT_QUEUE_DEPTH = 4096

WARMUP_POLICIES = ("voluntary", "suppress")


class BadMagic(BlinkPipeError):
    """Message does not start with the protocol magic."""


class TruncatedMessage(BlinkPipeError):
    """Fewer bytes than the fixed message size."""


class UnknownType(BlinkPipeError):
    """Unrecognized message type or enumeration byte."""


@dataclass(frozen=True)
class GazeFrameMsg:
    timestamp_ns: int
    features: Tuple[float, ...]  # canonical 10-feature order, f32 precision

    def __post_init__(self):
        if len(self.features) != NUM_FEATURES:
            raise ValueError(f"expected {NUM_FEATURES} features, got {len(self.features)}")


@dataclass(frozen=True)
class PredictionMsg:
    timestamp_ns: int
    blink_end_ns: int
    label: BlinkLabel
    confidence: float


@dataclass(frozen=True)
class ControlMsg:
    timestamp_ns: int
    command: int

    def __post_init__(self):
        if self.command not in (CONTROL_END, CONTROL_RESET):
            raise ValueError(f"unknown control command {self.command}")


Message = Union[GazeFrameMsg, PredictionMsg, ControlMsg]


def encode(msg: Message) -> bytes:
    if isinstance(msg, GazeFrameMsg):
        return struct.pack("<4sBQ10f", MAGIC, MSG_GAZE, msg.timestamp_ns,
                           *msg.features)
    if isinstance(msg, PredictionMsg):
        return struct.pack("<4sBQQBf", MAGIC, MSG_PREDICTION, msg.timestamp_ns,
                           msg.blink_end_ns, msg.label.value, msg.confidence)
    if isinstance(msg, ControlMsg):
        return struct.pack("<4sBQB", MAGIC, MSG_CONTROL, msg.timestamp_ns,
                           msg.command)
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def _decode_body(msg_type: int, body: bytes) -> Message:
    if msg_type == MSG_GAZE:
        vals = struct.unpack("<Q10f", body)
        return GazeFrameMsg(vals[0], tuple(float(v) for v in vals[1:]))
    if msg_type == MSG_PREDICTION:
        ts, blink_end, cls, conf = struct.unpack("<QQBf", body)
        if cls not in (0, 1):
            raise UnknownType(f"prediction class byte {cls}")
        return PredictionMsg(ts, blink_end, BlinkLabel(cls), float(conf))
    ts, command = struct.unpack("<QB", body)
    if command not in (CONTROL_END, CONTROL_RESET):
        raise UnknownType(f"control command byte {command}")
    return ControlMsg(ts, command)


def decode(data: bytes, offset: int = 0) -> Tuple[Message, int]:
    """Parse one message starting at `offset`; returns (message, next offset)."""
    if len(data) - offset < _HEADER_SIZE:
        raise TruncatedMessage(
            f"{len(data) - offset} bytes, header alone needs {_HEADER_SIZE}"
        )
    magic = data[offset:offset + 4]
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    msg_type = data[offset + 4]
    size = MESSAGE_SIZES.get(msg_type)
    if size is None:
        raise UnknownType(f"message type byte {msg_type}")
    if len(data) - offset < size:
        raise TruncatedMessage(
            f"type {msg_type} needs {size} bytes, got {len(data) - offset}"
        )
    msg = _decode_body(msg_type, data[offset + _HEADER_SIZE:offset + size])
    return msg, offset + size


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    """Read exactly n bytes; None on clean EOF at a message boundary."""
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise TruncatedMessage(
                f"connection closed after {len(buf)} of {n} bytes"
            )
        buf += chunk
    return bytes(buf)


def read_message(sock: socket.socket) -> Optional[Message]:
    """Read one whole message from a socket; None on clean EOF."""
    head = _recv_exact(sock, _HEADER_SIZE)
    if head is None:
        return None
    magic, msg_type = struct.unpack("<4sB", head)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    size = MESSAGE_SIZES.get(msg_type)
    if size is None:
        raise UnknownType(f"message type byte {msg_type}")
    body = _recv_exact(sock, size - _HEADER_SIZE)
    if body is None:
        raise TruncatedMessage("connection closed between header and body")
    return _decode_body(msg_type, body)


def gaze_msg_from_frame(frame: ValidatedFrame) -> GazeFrameMsg:
    return GazeFrameMsg(frame.timestamp_ns, frame.features())


def validated_frame_from_msg(msg: GazeFrameMsg) -> ValidatedFrame:
    """Rebuild a validated frame from wire features without re-normalizing."""
    f = msg.features
    return ValidatedFrame(
        timestamp_ns=msg.timestamp_ns,
        left_pupil_mm=f[0],
        right_pupil_mm=f[1],
        left_openness=f[2],
        right_openness=f[3],
        left_dir=(f[4], f[5], f[6]),
        right_dir=(f[7], f[8], f[9]),
        valid=True,
    )


def validate_frames(frames: Iterable[GazeFrame]) -> List[ValidatedFrame]:
    v = FrameValidator()
    return [v.validate(f) for f in frames]


# --------------------------------------------------------------------------
# session pipeline (shared by the server and by in-process evaluation)


class SessionPipeline:
    """Segmentation -> history window -> classification for one stream.

    Emits one PredictionMsg per both-eye blink end. During warm-up (buffer
    not yet holding a full window) the prediction is a fallback with
    confidence 0: class Voluntary under the "voluntary" policy (plain
    blink-selection behavior), Involuntary under "suppress". The message
    timestamp is the triggering frame's timestamp, keeping output
    independent of wall clock.
    """

    def __init__(self, net: BlinkNet, profile: Optional[CalibrationProfile] = None,
                 window_frames: int = DEFAULT_WINDOW_FRAMES,
                 lookback: int = DEFAULT_LOOKBACK_FRAMES,
                 warmup_policy: str = "voluntary"):
        if warmup_policy not in WARMUP_POLICIES:
            raise ValueError(f"warmup_policy must be one of {WARMUP_POLICIES}")
        self.net = net
        self.warmup_policy = warmup_policy
        self._segmenter = BlinkSegmenter(profile)
        self._buffer = HistoryBuffer(window_frames, lookback)

    def ingest(self, frame: ValidatedFrame) -> Optional[PredictionMsg]:
        self._buffer.push(frame)
        _, event = self._segmenter.update(frame)
        if event is None or event.kind is not BlinkKind.BOTH_EYES:
            return None
        try:
            window = self._buffer.snapshot_at_blink_end(event)
        except NotReady:
            label = (BlinkLabel.VOLUNTARY if self.warmup_policy == "voluntary"
                     else BlinkLabel.INVOLUNTARY)
            return PredictionMsg(frame.timestamp_ns, event.offset_ns, label, 0.0)
        label, confidence = classify(self.net, window)
        # Confidence is quantized to f32 so the in-process value equals the
        # wire-decoded one bit for bit.
        return PredictionMsg(frame.timestamp_ns, event.offset_ns, label,
                             float(np.float32(confidence)))


def predictions_for_frames(
    frames: Iterable[ValidatedFrame],
    net: BlinkNet,
    profile: Optional[CalibrationProfile] = None,
    window_frames: int = DEFAULT_WINDOW_FRAMES,
    lookback: int = DEFAULT_LOOKBACK_FRAMES,
    warmup_policy: str = "voluntary",
) -> List[PredictionMsg]:
    """In-process reference path: identical output to a TCP session."""
    pipe = SessionPipeline(net, profile, window_frames, lookback, warmup_policy)
    out = []
    for vf in frames:
        pred = pipe.ingest(vf)
        if pred is not None:
            out.append(pred)
    return out


# --------------------------------------------------------------------------
# server


@dataclass
class SessionStats:
    peer: str = ""
    frames_received: int = 0
    frames_dropped: int = 0
    predictions_sent: int = 0
    max_queue_depth: int = 0
    error: Optional[str] = None


class BlinkServer:
    """Threaded TCP prediction server.

    One reader thread and one inference worker per connection, joined by a
    bounded queue so ingestion keeps pace with 200 Hz input regardless of
    inference latency; a full queue drops frames (counted in SessionStats)
    rather than blocking the socket. Model parameters are shared read-only
    across sessions; all per-stream state lives in the session.
    """

    def __init__(self, model: Union[BlinkNet, ModelCheckpoint],
                 host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 warmup_policy: str = "voluntary",
                 profile: Optional[CalibrationProfile] = None,
                 window_frames: int = DEFAULT_WINDOW_FRAMES,
                 lookback: int = DEFAULT_LOOKBACK_FRAMES,
                 queue_depth: int = DEFAULT_QUEUE_DEPTH):
        if warmup_policy not in WARMUP_POLICIES:
            raise ValueError(f"warmup_policy must be one of {WARMUP_POLICIES}")
        self.net = model.build_net() if isinstance(model, ModelCheckpoint) else model
        self.warmup_policy = warmup_policy
        self.profile = profile
        self.window_frames = window_frames
        self.lookback = lookback
        self.queue_depth = queue_depth
        self._listener = socket.create_server((host, port))
        # A blocking accept() is not reliably interrupted by close() from
        # another thread; poll with a short timeout so stop() can land.
        self._listener.settimeout(0.2)
        self.host, self.port = self._listener.getsockname()[:2]
        self._shutdown = threading.Event()
        self._accept_thread: Optional[threading.Thread] = None
        self._conn_threads: List[threading.Thread] = []
        self.sessions: List[SessionStats] = []

    @property
    def address(self) -> Tuple[str, int]:
        return self.host, self.port

    def _new_pipeline(self) -> SessionPipeline:
        return SessionPipeline(self.net, self.profile, self.window_frames,
                               self.lookback, self.warmup_policy)

    def start(self) -> None:
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="blinkpipe-accept", daemon=True
        )
        self._accept_thread.start()
        _log.info("listening on %s:%d", self.host, self.port)

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._shutdown.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self, join_timeout: float = 5.0) -> None:
        self._shutdown.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(join_timeout)
        for t in self._conn_threads:
            t.join(join_timeout)

    def _accept_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                conn, addr = self._listener.accept()
            except TimeoutError:
                continue
            except OSError:
                return
            conn.settimeout(None)
            t = threading.Thread(target=self._handle_connection,
                                 args=(conn, addr), daemon=True)
            t.start()
            self._conn_threads.append(t)

    def _handle_connection(self, conn: socket.socket, addr) -> None:
        stats = SessionStats(peer=f"{addr[0]}:{addr[1]}")
        self.sessions.append(stats)
        frames: "queue.Queue[Optional[Message]]" = queue.Queue(self.queue_depth)

        def worker() -> None:
            pipeline = self._new_pipeline()
            while True:
                item = frames.get()
                if item is None:
                    return
                if isinstance(item, ControlMsg):
                    if item.command == CONTROL_RESET:
                        pipeline = self._new_pipeline()
                    continue
                pred = pipeline.ingest(validated_frame_from_msg(item))
                if pred is not None:
                    try:
                        conn.sendall(encode(pred))
                        stats.predictions_sent += 1
                    except OSError as e:
                        stats.error = f"send failed: {e}"
                        return

        worker_thread = threading.Thread(target=worker, daemon=True)
        worker_thread.start()
        try:
            while True:
                msg = read_message(conn)
                if msg is None:
                    break
                if isinstance(msg, ControlMsg) and msg.command == CONTROL_END:
                    break
                if isinstance(msg, PredictionMsg):
                    continue  # clients do not send predictions; ignore
                if isinstance(msg, GazeFrameMsg):
                    stats.frames_received += 1
                try:
                    frames.put_nowait(msg)
                    stats.max_queue_depth = max(stats.max_queue_depth,
                                                frames.qsize())
                except queue.Full:
                    stats.frames_dropped += 1
        except (BadMagic, TruncatedMessage, UnknownType, OSError) as e:
            stats.error = f"{type(e).__name__}: {e}"
            _log.warning("session %s terminated: %s", stats.peer, stats.error)
        finally:
            frames.put(None)
            worker_thread.join()
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
            _log.info("session %s closed: %d frames, %d predictions, %d dropped",
                      stats.peer, stats.frames_received, stats.predictions_sent,
                      stats.frames_dropped)

    def __enter__(self) -> "BlinkServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


# --------------------------------------------------------------------------
# client helpers


def replay_over_tcp(address: Tuple[str, int],
                    frames: Sequence[ValidatedFrame],
                    speed_multiplier: float = 0.0,
                    timeout: float = 60.0) -> List[PredictionMsg]:
    """Stream validated frames to a server and collect its predictions.

    speed_multiplier scales real-time pacing (1 = wall-clock cadence);
    0 sends as fast as possible. Returns predictions in arrival order.
    """
    preds: List[PredictionMsg] = []
    with socket.create_connection(address, timeout=timeout) as sock:
        done = threading.Event()

        def reader() -> None:
            try:
                while True:
                    msg = read_message(sock)
                    if msg is None:
                        return
                    if isinstance(msg, PredictionMsg):
                        preds.append(msg)
            except (BlinkPipeError, OSError) as e:
                _log.warning("prediction reader stopped: %s", e)
            finally:
                done.set()

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        wall0 = time.monotonic()
        ts0 = frames[0].timestamp_ns if frames else 0
        for vf in frames:
            if speed_multiplier > 0:
                target = wall0 + (vf.timestamp_ns - ts0) / 1e9 / speed_multiplier
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            sock.sendall(encode(gaze_msg_from_frame(vf)))
        last_ts = frames[-1].timestamp_ns if frames else 0
        sock.sendall(encode(ControlMsg(last_ts, CONTROL_END)))
        done.wait(timeout)
    return preds


class AssociationOutcome(enum.Enum):
    ACCEPTED = "accepted"
    STALE = "stale"


class ClientPredictionGate:
    """Client-side rule tying predictions back to locally observed blinks.

    A prediction is accepted iff its blink_end matches a blink the client
    saw AND it arrives within 100 ms of that blink end; otherwise it is
    stale. An accepted Voluntary prediction releases the pending Selection,
    an accepted Involuntary one suppresses it; stale predictions suppress
    by default (no action fires late).
    """

    def __init__(self, window_ns: int = ASSOCIATION_WINDOW_NS,
                 retention_ns: int = 10_000_000_000):
        self.window_ns = window_ns
        self.retention_ns = retention_ns
        self._blink_ends: List[int] = []

    def record_blink_end(self, blink_end_ns: int) -> None:
        self._blink_ends.append(blink_end_ns)
        horizon = blink_end_ns - self.retention_ns
        while self._blink_ends and self._blink_ends[0] < horizon:
            self._blink_ends.pop(0)

    def associate(self, prediction: PredictionMsg,
                  now_ns: int) -> AssociationOutcome:
        if (prediction.blink_end_ns in self._blink_ends
                and abs(now_ns - prediction.blink_end_ns) <= self.window_ns):
            return AssociationOutcome.ACCEPTED
        return AssociationOutcome.STALE

    def should_release_selection(self, prediction: PredictionMsg,
                                 now_ns: int) -> bool:
        return (self.associate(prediction, now_ns) is AssociationOutcome.ACCEPTED
                and prediction.label is BlinkLabel.VOLUNTARY)
