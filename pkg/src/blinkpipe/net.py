"""Blink-intent classifier: a residual MLP with hand-written forward and
backward passes, an Adam training loop, and a versioned binary checkpoint
format.

Architecture: a stem (Linear 50000->128, BatchNorm, Mish) followed by nine
residual blocks (128->128, 128->128, 128->64, 64->64, 64->64, 64->32,
32->32, 32->32, 32->32) and a Linear 32->2 head with softmax. Each block is
two (Linear, BatchNorm, Mish) sub-blocks with a skip connection around
both: the identity when input and output widths match, a linear projection
otherwise.

Class order in the output 2-vector: index 0 = Voluntary, index 1 =
Involuntary. Ties break toward Involuntary so an ambiguous blink is
suppressed rather than acted on.

All training math is double precision. Determinism: a fixed seed fixes the
initialization, the per-epoch shuffles, and therefore every parameter.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import BlinkLabel, BlinkPipeError
from .window import WindowTensor

INPUT_DIM = 50000
STEM_WIDTH = 128
N_CLASSES = 2
DEFAULT_BLOCK_DIMS: Tuple[Tuple[int, int], ...] = (
    (128, 128), (128, 128), (128, 64),
    (64, 64), (64, 64), (64, 32),
    (32, 32), (32, 32), (32, 32),
)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5

DEFAULT_LR = 1e-4
DEFAULT_EPOCHS = 500
DEFAULT_BATCH_SIZE = 32
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"BNET"
CHECKPOINT_FORMAT_VERSION = 1
_TAG_LINEAR = 0x01
_TAG_BATCHNORM = 0x02


class ShapeMismatch(BlinkPipeError):
    """Input, label, or parameter shapes do not line up."""


class BatchTooSmallForTrainMode(BlinkPipeError):
    """Train-mode batch norm needs at least 2 rows for batch statistics."""


class EmptySplit(BlinkPipeError):
    """Training requires non-empty train and validation sets."""


class CheckpointFormatError(BlinkPipeError):
    """Checkpoint bytes do not parse as a well-formed model file."""


# --------------------------------------------------------------------------
# activations and loss


def softplus(x):
    """Overflow-safe log(1 + e^x)."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def mish(x):
    """x * tanh(softplus(x))."""
    x = np.asarray(x, dtype=np.float64)
    return x * np.tanh(softplus(x))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mish_grad(x):
    """Derivative of mish: tanh(sp(x)) + x * (1 - tanh^2(sp(x))) * sigmoid(x)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(softplus(x))
    return t + x * (1.0 - t * t) * _sigmoid(x)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray,
                          labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Log-probabilities are computed via log-sum-exp, never by logging a
    softmax output.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeMismatch(
            f"labels shape {labels.shape} does not match {logits.shape[0]} logits rows"
        )
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - log_norm
    n = logits.shape[0]
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


# --------------------------------------------------------------------------
# layers


class Param:
    """Mutable parameter holder: value plus the gradient of the last backward."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


class LinearLayer:
    """y = x @ W.T + b with uniform +/-sqrt(1/fan_in) initialization."""

    def __init__(self, in_dim: int, out_dim: int,
                 rng: Optional[np.random.Generator] = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        bound = math.sqrt(1.0 / in_dim)
        if rng is None:
            w = np.zeros((out_dim, in_dim))
            b = np.zeros(out_dim)
        else:
            w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
            b = rng.uniform(-bound, bound, size=out_dim)
        self.weight = Param(w)
        self.bias = Param(b)
        self._x: Optional[np.ndarray] = None

    def params(self) -> List[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"expected {self.in_dim} input features, got {x.shape[1]}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None or dy.shape != (self._x.shape[0], self.out_dim):
            raise ShapeMismatch("backward called without a matching forward")
        self.weight.grad[...] = dy.T @ self._x
        self.bias.grad[...] = dy.sum(axis=0)
        return dy @ self.weight.value


class BatchNormLayer:
    """Per-feature batch normalization with running statistics.

    Train mode normalizes by the biased batch variance and folds the
    unbiased variance into the running estimate (momentum 0.1). Eval mode
    uses only running statistics, so it is batch-size-1 safe and
    batch-composition invariant.
    """

    def __init__(self, num_features: int, momentum: float = BN_MOMENTUM,
                 eps: float = BN_EPS):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(num_features))
        self.beta = Param(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._cache = None

    def params(self) -> List[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.shape[1] != self.num_features:
            raise ShapeMismatch(
                f"expected {self.num_features} features, got {x.shape[1]}"
            )
        if train:
            n = x.shape[0]
            if n < 2:
                raise BatchTooSmallForTrainMode(
                    f"train-mode batch norm needs >= 2 rows, got {n}"
                )
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            self._cache = ("train", xhat, inv_std)
            self.running_mean = (1.0 - self.momentum) * self.running_mean \
                + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var \
                + self.momentum * var * n / (n - 1)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            self._cache = ("eval", xhat, inv_std)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise ShapeMismatch("backward called before forward")
        mode, xhat, inv_std = self._cache
        self.gamma.grad[...] = (dy * xhat).sum(axis=0)
        self.beta.grad[...] = dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        if mode == "eval":
            return dxhat * inv_std
        return (dxhat - dxhat.mean(axis=0)
                - xhat * (dxhat * xhat).mean(axis=0)) * inv_std


class MishActivation:
    def __init__(self):
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._x = x
        return mish(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise ShapeMismatch("backward called before forward")
        return dy * mish_grad(self._x)


class ResNetBlock:
    """Two (Linear, BatchNorm, Mish) sub-blocks plus a skip around both.

    skip is the identity when in_dim == out_dim (type b), otherwise a
    linear projection (type a).
    """

    def __init__(self, in_dim: int, out_dim: int,
                 rng: Optional[np.random.Generator] = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.lin1 = LinearLayer(in_dim, out_dim, rng)
        self.bn1 = BatchNormLayer(out_dim)
        self.act1 = MishActivation()
        self.lin2 = LinearLayer(out_dim, out_dim, rng)
        self.bn2 = BatchNormLayer(out_dim)
        self.act2 = MishActivation()
        self.skip: Optional[LinearLayer] = (
            None if in_dim == out_dim else LinearLayer(in_dim, out_dim, rng)
        )

    def params(self) -> List[Param]:
        out = (self.lin1.params() + self.bn1.params()
               + self.lin2.params() + self.bn2.params())
        if self.skip is not None:
            out += self.skip.params()
        return out

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        h = self.act1.forward(self.bn1.forward(self.lin1.forward(x, train), train), train)
        h = self.act2.forward(self.bn2.forward(self.lin2.forward(h, train), train), train)
        s = x if self.skip is None else self.skip.forward(x, train)
        return h + s

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dh = self.act2.backward(dy)
        dh = self.bn2.backward(dh)
        dh = self.lin2.backward(dh)
        dh = self.act1.backward(dh)
        dh = self.bn1.backward(dh)
        dx = self.lin1.backward(dh)
        ds = dy if self.skip is None else self.skip.backward(dy)
        return dx + ds


class BlinkNet:
    """Full classifier stack. `forward` returns row-wise class probabilities."""

    def __init__(self, input_dim: int = INPUT_DIM, stem_width: int = STEM_WIDTH,
                 block_dims: Optional[Sequence[Tuple[int, int]]] = None,
                 n_classes: int = N_CLASSES, seed: int = 0,
                 rng: Optional[np.random.Generator] = None):
        if block_dims is None:
            block_dims = DEFAULT_BLOCK_DIMS
        block_dims = tuple((int(a), int(b)) for a, b in block_dims)
        width = stem_width
        for i, (bin_, bout) in enumerate(block_dims):
            if bin_ != width:
                raise ValueError(
                    f"block {i} input width {bin_} does not follow previous width {width}"
                )
            width = bout
        self.input_dim = input_dim
        self.stem_width = stem_width
        self.block_dims = block_dims
        self.n_classes = n_classes
        if rng is None:
            rng = np.random.default_rng(seed)
        self.stem_lin = LinearLayer(input_dim, stem_width, rng)
        self.stem_bn = BatchNormLayer(stem_width)
        self.stem_act = MishActivation()
        self.blocks = [ResNetBlock(a, b, rng) for a, b in block_dims]
        self.head = LinearLayer(width, n_classes, rng)

    @classmethod
    def zero_initialized(cls, **kwargs) -> "BlinkNet":
        """All linear weights and biases zero; batch-norm at gamma=1, beta=0."""
        net = cls(**kwargs)
        for lin in net._linear_layers():
            lin.weight.value[...] = 0.0
            lin.bias.value[...] = 0.0
        return net

    def _linear_layers(self) -> Iterator[LinearLayer]:
        yield self.stem_lin
        for b in self.blocks:
            yield b.lin1
            yield b.lin2
            if b.skip is not None:
                yield b.skip
        yield self.head

    def params(self) -> List[Param]:
        out = self.stem_lin.params() + self.stem_bn.params()
        for b in self.blocks:
            out += b.params()
        out += self.head.params()
        return out

    def _as_batch(self, x) -> np.ndarray:
        if isinstance(x, WindowTensor):
            x = x.values
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeMismatch(
                f"expected rows of {self.input_dim} features, got shape {x.shape}"
            )
        return x

    def forward_logits(self, x, train: bool = False) -> np.ndarray:
        x = self._as_batch(x)
        if train and x.shape[0] < 2:
            raise BatchTooSmallForTrainMode(
                f"train-mode forward needs a batch of >= 2, got {x.shape[0]}"
            )
        h = self.stem_act.forward(
            self.stem_bn.forward(self.stem_lin.forward(x, train), train), train
        )
        for block in self.blocks:
            h = block.forward(h, train)
        return self.head.forward(h, train)

    def forward(self, x, train: bool = False) -> np.ndarray:
        return softmax(self.forward_logits(x, train))

    def backward_from_logits(self, dlogits: np.ndarray) -> np.ndarray:
        """Propagate a logits gradient through the whole stack; fills Param.grad."""
        dy = self.head.backward(dlogits)
        for block in reversed(self.blocks):
            dy = block.backward(dy)
        dy = self.stem_act.backward(dy)
        dy = self.stem_bn.backward(dy)
        return self.stem_lin.backward(dy)

    def loss_and_gradients(self, x, labels) -> float:
        """Train-mode forward + mean cross-entropy + full backward pass."""
        logits = self.forward_logits(x, train=True)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        self.backward_from_logits(dlogits)
        return loss


def classify(net: BlinkNet, tensor) -> Tuple[BlinkLabel, float]:
    """Eval-mode argmax over (Voluntary, Involuntary); ties go to Involuntary."""
    probs = net.forward(tensor, train=False)[0]
    if probs[0] > probs[1]:
        return BlinkLabel.VOLUNTARY, float(probs[0])
    return BlinkLabel.INVOLUNTARY, float(probs[1])


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              lr: float = DEFAULT_LR, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPS) -> AdamState:
    """One bias-corrected Adam update, applied to `param` in place."""
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ShapeMismatch("Adam state shape does not match parameter shape")
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * (grad * grad)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Param], lr: float = DEFAULT_LR,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = [AdamState(np.zeros_like(p.value), np.zeros_like(p.value))
                       for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            adam_step(p.value, p.grad, s, self.lr, self.beta1, self.beta2, self.eps)


# --------------------------------------------------------------------------
# checkpoints


@dataclass(frozen=True)
class LinearRecord:
    weight: np.ndarray  # (out, in), row-major
    bias: np.ndarray


@dataclass(frozen=True)
class BatchNormRecord:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float
    eps: float


LayerRecord = Union[LinearRecord, BatchNormRecord]


def _f64_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


@dataclass(frozen=True)
class ModelCheckpoint:
    """Snapshot of every parameter and running statistic of a BlinkNet.

    Byte layout (all little-endian):
      header: magic "BNET" (4 bytes), format_version u32, epoch u32,
              validation_loss f64
      then one record per layer in forward order (stem linear, stem batch
      norm, then per block lin1, bn1, lin2, bn2, and the projection linear
      when input and output widths differ, then the head linear):
        linear:     tag u8 = 0x01, out u32, in u32,
                    weights out*in f64 row-major, bias out f64
        batch norm: tag u8 = 0x02, features u32, u32 = 0,
                    gamma, beta, running_mean, running_var (features f64
                    each), momentum f64, eps f64

    Loading then saving is byte-identical.
    """

    format_version: int
    epoch: int
    validation_loss: float
    records: Tuple[LayerRecord, ...]

    @classmethod
    def from_net(cls, net: BlinkNet, epoch: int,
                 validation_loss: float) -> "ModelCheckpoint":
        records: List[LayerRecord] = []
        for kind, layer in _layers_in_order(net):
            if kind == "linear":
                records.append(LinearRecord(layer.weight.value.copy(),
                                            layer.bias.value.copy()))
            else:
                records.append(BatchNormRecord(
                    layer.gamma.value.copy(), layer.beta.value.copy(),
                    layer.running_mean.copy(), layer.running_var.copy(),
                    layer.momentum, layer.eps,
                ))
        return cls(CHECKPOINT_FORMAT_VERSION, epoch, float(validation_loss),
                   tuple(records))

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<4sIId", CHECKPOINT_MAGIC, self.format_version,
                             self.epoch, self.validation_loss)]
        for rec in self.records:
            if isinstance(rec, LinearRecord):
                out_dim, in_dim = rec.weight.shape
                parts.append(struct.pack("<BII", _TAG_LINEAR, out_dim, in_dim))
                parts.append(_f64_bytes(rec.weight))
                parts.append(_f64_bytes(rec.bias))
            else:
                n = rec.gamma.shape[0]
                parts.append(struct.pack("<BII", _TAG_BATCHNORM, n, 0))
                parts.append(_f64_bytes(rec.gamma))
                parts.append(_f64_bytes(rec.beta))
                parts.append(_f64_bytes(rec.running_mean))
                parts.append(_f64_bytes(rec.running_var))
                parts.append(struct.pack("<dd", rec.momentum, rec.eps))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        r = _Reader(data)
        magic, version, epoch, val_loss = struct.unpack("<4sIId", r.take(20))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported format version {version}")
        records: List[LayerRecord] = []
        while not r.exhausted:
            tag, d0, d1 = struct.unpack("<BII", r.take(9))
            if tag == _TAG_LINEAR:
                weight = r.f64_array(d0 * d1).reshape(d0, d1)
                bias = r.f64_array(d0)
                records.append(LinearRecord(weight, bias))
            elif tag == _TAG_BATCHNORM:
                gamma = r.f64_array(d0)
                beta = r.f64_array(d0)
                rmean = r.f64_array(d0)
                rvar = r.f64_array(d0)
                momentum, eps = struct.unpack("<dd", r.take(16))
                records.append(BatchNormRecord(gamma, beta, rmean, rvar,
                                               momentum, eps))
            else:
                raise CheckpointFormatError(f"unknown layer tag 0x{tag:02x}")
        return cls(version, epoch, val_loss, tuple(records))

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def build_net(self) -> BlinkNet:
        """Reconstruct the network from the stored records."""
        recs = self.records
        if (len(recs) < 3 or not isinstance(recs[0], LinearRecord)
                or not isinstance(recs[1], BatchNormRecord)
                or not isinstance(recs[-1], LinearRecord)):
            raise CheckpointFormatError("records do not form a stem/blocks/head stack")
        stem_w = recs[0].weight
        input_dim, stem_width = stem_w.shape[1], stem_w.shape[0]
        block_dims: List[Tuple[int, int]] = []
        i = 2
        while i < len(recs) - 1:
            group = recs[i:i + 4]
            if (len(group) < 4 or not isinstance(group[0], LinearRecord)
                    or not isinstance(group[1], BatchNormRecord)
                    or not isinstance(group[2], LinearRecord)
                    or not isinstance(group[3], BatchNormRecord)):
                raise CheckpointFormatError(f"malformed block at record {i}")
            out_dim, in_dim = group[0].weight.shape
            block_dims.append((in_dim, out_dim))
            i += 4
            if in_dim != out_dim:
                if i >= len(recs) - 1 or not isinstance(recs[i], LinearRecord):
                    raise CheckpointFormatError(
                        f"missing projection record for block ending at record {i}"
                    )
                i += 1
        head = recs[-1]
        net = BlinkNet(input_dim=input_dim, stem_width=stem_width,
                       block_dims=block_dims, n_classes=head.weight.shape[0])
        for rec, (kind, layer) in zip(recs, _layers_in_order(net)):
            if kind == "linear":
                layer.weight.value[...] = rec.weight
                layer.bias.value[...] = rec.bias
            else:
                layer.gamma.value[...] = rec.gamma
                layer.beta.value[...] = rec.beta
                layer.running_mean[...] = rec.running_mean
                layer.running_var[...] = rec.running_var
                layer.momentum = rec.momentum
                layer.eps = rec.eps
        return net


def _layers_in_order(net: BlinkNet):
    """(kind, layer) pairs in forward/serialization order."""
    yield "linear", net.stem_lin
    yield "bn", net.stem_bn
    for b in net.blocks:
        yield "linear", b.lin1
        yield "bn", b.bn1
        yield "linear", b.lin2
        yield "bn", b.bn2
        if b.skip is not None:
            yield "linear", b.skip
    yield "linear", net.head


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def _as_xy(dataset, input_dim: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    xs: List[np.ndarray] = []
    ys: List[int] = []
    for features, label in dataset:
        if isinstance(features, WindowTensor):
            features = features.values
        v = np.asarray(features, dtype=np.float64).reshape(-1)
        if input_dim is not None and v.shape[0] != input_dim:
            raise ShapeMismatch(
                f"example has {v.shape[0]} features, expected {input_dim}"
            )
        xs.append(v)
        ys.append(int(label.value if isinstance(label, BlinkLabel) else label))
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def evaluate_loss(net: BlinkNet, x: np.ndarray,
                  labels: np.ndarray) -> Tuple[float, float]:
    """Eval-mode mean cross-entropy and accuracy (ties count as Involuntary)."""
    logits = net.forward_logits(x, train=False)
    loss, _ = softmax_cross_entropy(logits, labels)
    pred = np.where(logits[:, 0] > logits[:, 1], 0, 1)
    return loss, float((pred == labels).mean())


def train(
    train_set,
    val_set,
    epochs: int = DEFAULT_EPOCHS,
    seed: int = 0,
    lr: float = DEFAULT_LR,
    batch_size: int = DEFAULT_BATCH_SIZE,
    checkpoint_dir=None,
    net: Optional[BlinkNet] = None,
    input_dim: Optional[int] = None,
    stem_width: int = STEM_WIDTH,
    block_dims: Optional[Sequence[Tuple[int, int]]] = None,
    log=None,
) -> Tuple[ModelCheckpoint, List[EpochStats]]:
    """Adam training loop with per-epoch and best-by-validation checkpoints.

    `train_set` / `val_set` are sequences of (features, label) pairs, where
    features is a WindowTensor or flat vector and label a BlinkLabel or int
    (0 = Voluntary). Checkpoint files are written only when
    `checkpoint_dir` is given (epoch_NNNN.bnet plus best.bnet); the best
    checkpoint is also returned. Everything is deterministic given `seed`.

    A trailing batch of a single sample is folded into the previous batch,
    since train-mode batch norm cannot normalize a singleton.
    """
    train_pairs = list(train_set)
    val_pairs = list(val_set)
    if not train_pairs or not val_pairs:
        raise EmptySplit("train and validation sets must both be non-empty")
    x_train, y_train = _as_xy(train_pairs, input_dim)
    x_val, y_val = _as_xy(val_pairs, x_train.shape[1])

    rng = np.random.default_rng(seed)
    if net is None:
        net = BlinkNet(input_dim=x_train.shape[1], stem_width=stem_width,
                       block_dims=block_dims, rng=rng)
    elif net.input_dim != x_train.shape[1]:
        raise ShapeMismatch(
            f"net expects {net.input_dim} features, data has {x_train.shape[1]}"
        )
    if x_train.shape[0] < 2:
        raise BatchTooSmallForTrainMode(
            "training needs at least 2 examples for batch statistics"
        )

    optimizer = Adam(net.params(), lr=lr)
    n = x_train.shape[0]
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    best: Optional[ModelCheckpoint] = None
    history: List[EpochStats] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        starts = list(range(0, n, batch_size))
        if len(starts) > 1 and n - starts[-1] == 1:
            starts.pop()  # fold the trailing singleton into the previous batch
        total = 0.0
        for bi, s in enumerate(starts):
            e = starts[bi + 1] if bi + 1 < len(starts) else n
            idx = order[s:e]
            loss = net.loss_and_gradients(x_train[idx], y_train[idx])
            optimizer.step()
            total += loss * len(idx)
        train_loss = total / n
        val_loss, val_acc = evaluate_loss(net, x_val, y_val)
        history.append(EpochStats(epoch, train_loss, val_loss, val_acc))
        ckpt = ModelCheckpoint.from_net(net, epoch, val_loss)
        if checkpoint_dir is not None:
            ckpt.save(os.path.join(checkpoint_dir, f"epoch_{epoch:04d}.bnet"))
        if best is None or val_loss < best.validation_loss:
            best = ckpt
            if checkpoint_dir is not None:
                ckpt.save(os.path.join(checkpoint_dir, "best.bnet"))
        if log is not None:
            log(f"epoch {epoch}/{epochs} train_loss={train_loss:.6f} "
                f"val_loss={val_loss:.6f} val_acc={val_acc:.4f}")
    assert best is not None
    return best, history
