"""
nn.py

The beam prediction & tracking network on top of tensor.py:

    conv1d(5->128) -> conv1d(128->128) + batchnorm -> ReLU
    -> GRU encoder over the W observations (h0 = 0)
    -> context = final encoder state, fed as input to each of V+1 decoder GRU steps
    -> shared classifier per step: linear(128->64) -> ReLU -> linear(64->M) -> softmax

plus the cross-entropy loss, Adam, the step learning-rate schedule, parameter
counting and the binary checkpoint format.

Linear weights are stored (in, out) so a layer is `x @ W + b`; GRU weights the
same way, one tensor per gate.
"""
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from typing import Tuple

import numpy

from .exceptions import ChecksumMismatch, ModelError, ShapeMismatch, UsageError
from .geo import FEATURE_ORDER
from .tensor import Tensor, no_grad, parameter, stack
from .utils import derive_rng, sha256_bytes, units, STREAM_INIT

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_FLOOR = 1e-12

BITS_PER_PARAM = 32
BYTES_PER_PARAM = int((BITS_PER_PARAM * units.bit).to(units.byte).magnitude)

CHECKPOINT_MAGIC = b"GPSBEAM-CKPT\n"
CHECKPOINT_VERSION = 1

GRU_GATES = ("z", "r", "n")


# -----------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class ModelConfig:
    n_features: int = 5
    conv_channels: int = 128
    hidden: int = 128
    fc_hidden: int = 64
    M: int = 32
    W: int = 8
    V: int = 3
    decoder_h0: str = "context"
    dtype: str = "float64"

    def __post_init__(self):
        if self.decoder_h0 not in ("context", "zero"):
            raise UsageError("decoder_h0 must be 'context' or 'zero'")
        if self.dtype not in ("float64", "float32"):
            raise UsageError("dtype must be 'float64' or 'float32'")
        if min(self.n_features, self.conv_channels, self.hidden, self.fc_hidden, self.W) < 1 or self.M < 2 or self.V < 0:
            raise UsageError("model dimensions must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HyperParams:
    epochs: int = 20
    train_batch: int = 8
    val_batch: int = 1024
    test_batch: int = 1024
    lr: float = 5e-4
    weight_decay: float = 0.0
    lr_drop_factor: float = 0.1
    lr_drop_epochs: Tuple[int, ...] = (12, 18)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    W: int = 8
    V: int = 3
    M: int = 32

    def __post_init__(self):
        if min(self.epochs, self.train_batch, self.val_batch, self.test_batch, self.W, self.M) <= 0 or self.V < 0:
            raise UsageError("hyperparameters must be positive")
        if self.lr <= 0 or self.weight_decay < 0 or not 0 < self.lr_drop_factor <= 1:
            raise UsageError("invalid learning rate settings")
        if any(not 1 <= e <= self.epochs for e in self.lr_drop_epochs):
            raise UsageError("lr drop epochs {0} must lie within [1, {1}]".format(self.lr_drop_epochs, self.epochs))

    def to_dict(self):
        d = asdict(self)
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["lr_drop_epochs"] = tuple(d.get("lr_drop_epochs", (12, 18)))
        return cls(**d)


# -----------------------------------------------------------------------------
# Parameters

class ModelParams:
    """named trainable tensors in checkpoint order plus BN running statistics"""

    def __init__(self, config, tensors, buffers):
        self.config = config
        self.tensors = tensors
        self.buffers = buffers

    def __getitem__(self, name):
        return self.tensors[name]

    @property
    def dtype(self):
        return numpy.dtype(self.config.dtype)

    def named(self, prefix):
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self):
        return OrderedDict(
            (k, t.grad if t.grad is not None else numpy.zeros_like(t.data)) for k, t in self.tensors.items()
        )

    def copy(self):
        return ModelParams(
            self.config,
            OrderedDict((k, parameter(t.data)) for k, t in self.tensors.items()),
            OrderedDict((k, v.copy()) for k, v in self.buffers.items()),
        )


def param_shapes(cfg):
    """(name, shape, fan_in) for every trainable tensor, in checkpoint order"""
    C, H, F = cfg.conv_channels, cfg.hidden, cfg.fc_hidden
    shapes = [
        ("conv1.weight", (C, cfg.n_features, 3), cfg.n_features * 3),
        ("conv1.bias", (C,), cfg.n_features * 3),
        ("conv2.weight", (C, C, 3), C * 3),
        ("conv2.bias", (C,), C * 3),
        ("bn.weight", (C,), None),
        ("bn.bias", (C,), None),
    ]
    for prefix, n_in in (("encoder", C), ("decoder", H)):
        for g in GRU_GATES:
            shapes.append(("{0}.weight_i{1}".format(prefix, g), (n_in, H), n_in))
        for g in GRU_GATES:
            shapes.append(("{0}.weight_h{1}".format(prefix, g), (H, H), H))
        for g in GRU_GATES:
            shapes.append(("{0}.bias_i{1}".format(prefix, g), (H,), n_in))
        for g in GRU_GATES:
            shapes.append(("{0}.bias_h{1}".format(prefix, g), (H,), H))
    shapes += [
        ("fc1.weight", (H, F), H),
        ("fc1.bias", (F,), H),
        ("fc2.weight", (F, cfg.M), F),
        ("fc2.bias", (cfg.M,), F),
    ]
    return shapes


def buffer_shapes(cfg):
    return [("bn.running_mean", (cfg.conv_channels,)), ("bn.running_var", (cfg.conv_channels,))]


def init_params(cfg, seed=0):
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; BN starts at scale 1, shift 0"""
    rng = derive_rng(seed, STREAM_INIT)
    dtype = numpy.dtype(cfg.dtype)
    tensors = OrderedDict()
    for name, shape, fan_in in param_shapes(cfg):
        if name == "bn.weight":
            data = numpy.ones(shape)
        elif name == "bn.bias":
            data = numpy.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = parameter(data.astype(dtype))
    buffers = OrderedDict([
        ("bn.running_mean", numpy.zeros(cfg.conv_channels, dtype=dtype)),
        ("bn.running_var", numpy.ones(cfg.conv_channels, dtype=dtype)),
    ])
    return ModelParams(cfg, tensors, buffers)


def count_params(params):
    """(number of trainable scalars, size in bytes at 32 bits per parameter)"""
    count = int(sum(t.size for t in params.tensors.values()))
    return count, count * BYTES_PER_PARAM


def size_mib(size_bytes):
    return (size_bytes * units.byte).to("MiB").magnitude


# -----------------------------------------------------------------------------
# Layers

def conv1d(x, weight, bias, stride=1, pad=1):
    """cross-correlation along the time axis.

    x: (B, L, C_in) or (L, C_in); weight: (C_out, C_in, k); bias: (C_out,)
    returns (B, L_out, C_out) with L_out = (L + 2*pad - k) // stride + 1
    """
    single = x.data.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    B, L, C_in = x.shape
    C_out, w_in, k = weight.shape
    if w_in != C_in or bias.shape != (C_out,):
        raise ShapeMismatch("conv1d input channels {0} vs weight {1} / bias {2}".format(C_in, weight.shape, bias.shape))
    L_out = (L + 2 * pad - k) // stride + 1
    if L_out < 1:
        raise ShapeMismatch("conv1d input of length {0} too short for kernel {1}".format(L, k))

    xp = numpy.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    idx = numpy.arange(L_out)[:, None] * stride + numpy.arange(k)[None, :]
    cols = xp[:, idx, :]                                   # (B, L_out, k, C_in)
    cols2 = cols.reshape(B * L_out, k * C_in)
    w2 = weight.data.transpose(2, 1, 0).reshape(k * C_in, C_out)
    out_data = (cols2 @ w2).reshape(B, L_out, C_out) + bias.data
    out = x._make(out_data, (x, weight, bias), "conv1d")

    def _backward():
        g = out.grad
        g2 = g.reshape(B * L_out, C_out)
        if weight.requires_grad:
            dw2 = cols2.T @ g2
            weight._accumulate(dw2.reshape(k, C_in, C_out).transpose(2, 1, 0))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 1)))
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(B, L_out, k, C_in)
            dxp = numpy.zeros_like(xp)
            numpy.add.at(dxp, (slice(None), idx), dcols)
            x._accumulate(dxp[:, pad:pad + L, :])
    out._backward = _backward
    if single:
        return out[0]
    return out


def batchnorm(x, scale, shift, running_mean, running_var, mode="train", momentum=BN_MOMENTUM, eps=BN_EPS):
    """per-channel normalization over every axis but the last (batch x time).

    train mode uses batch statistics and updates the running buffers in place
    (unbiased variance); eval mode uses the
    running buffers.
    """
    C = x.shape[-1]
    if scale.shape != (C,) or shift.shape != (C,) or running_mean.shape != (C,):
        raise ShapeMismatch("batchnorm over {0} channels with scale {1}".format(C, scale.shape))
    if mode == "train":
        axes = tuple(range(x.data.ndim - 1))
        mu = x.mean(axis=axes, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        xhat = centered / (var + eps).sqrt()
        n = x.size // C
        batch_var = var.data.reshape(C)
        if n > 1:
            batch_var = batch_var * n / (n - 1)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.data.reshape(C)
        running_var *= (1.0 - momentum)
        running_var += momentum * batch_var
    elif mode == "eval":
        xhat = (x - running_mean) * (1.0 / numpy.sqrt(running_var + eps))
    else:
        raise UsageError("batchnorm mode must be 'train' or 'eval'")
    return xhat * scale + shift


def gru_cell(x, h, p):
    """one GRU step.

    z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
    r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
    n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
    h' = (1 - z) * n + z * h
    """
    if x.shape[-1] != p["weight_iz"].shape[0] or h.shape[-1] != p["weight_hz"].shape[0]:
        raise ShapeMismatch("gru_cell input {0} / hidden {1} vs weights {2}".format(
            x.shape, h.shape, p["weight_iz"].shape))
    z = (x @ p["weight_iz"] + p["bias_iz"] + h @ p["weight_hz"] + p["bias_hz"]).sigmoid()
    r = (x @ p["weight_ir"] + p["bias_ir"] + h @ p["weight_hr"] + p["bias_hr"]).sigmoid()
    n = (x @ p["weight_in"] + p["bias_in"] + r * (h @ p["weight_hn"] + p["bias_hn"])).tanh()
    return (1.0 - z) * n + z * h


def gru(xs, h0, p):
    """run gru_cell over a (B, T, C) sequence; returns the final hidden state"""
    h = h0
    for t in range(xs.shape[1]):
        h = gru_cell(xs[:, t, :], h, p)
    return h


def linear(x, weight, bias):
    return x @ weight + bias


# -----------------------------------------------------------------------------
# Model

def forward(params, window, mode="eval"):
    """score sequence(s) for one window (W x F) or a batch (B x W x F).

    Returns a Tensor of shape (V+1, M), or (B, V+1, M) for a batch; every row is
    a probability vector.
    """
    cfg = params.config
    x = numpy.asarray(window, dtype=params.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != cfg.n_features:
        raise ShapeMismatch("window of shape {0} does not match {1} input features".format(
            numpy.shape(window), cfg.n_features))
    B = x.shape[0]
    x = Tensor(x)

    h = conv1d(x, params["conv1.weight"], params["conv1.bias"])
    h = conv1d(h, params["conv2.weight"], params["conv2.bias"])
    h = batchnorm(h, params["bn.weight"], params["bn.bias"],
                  params.buffers["bn.running_mean"], params.buffers["bn.running_var"], mode)
    h = h.relu()

    zeros = Tensor(numpy.zeros((B, cfg.hidden), dtype=params.dtype))
    context = gru(h, zeros, params.named("encoder"))

    dec = params.named("decoder")
    state = context if cfg.decoder_h0 == "context" else zeros
    steps = []
    for _ in range(cfg.V + 1):
        state = gru_cell(context, state, dec)
        z = linear(state, params["fc1.weight"], params["fc1.bias"]).relu()
        steps.append(linear(z, params["fc2.weight"], params["fc2.bias"]).softmax(axis=-1))
    scores = stack(steps, axis=1)
    if single:
        return scores[0]
    return scores


def predict(params, X, batch_size=1024):
    """eval-mode scores for N windows -> (N, V+1, M) array"""
    out = []
    with no_grad():
        for start in range(0, len(X), batch_size):
            out.append(forward(params, X[start:start + batch_size], mode="eval").data)
    if not out:
        return numpy.zeros((0, params.config.V + 1, params.config.M))
    return numpy.concatenate(out, axis=0)


def decode(scores):
    """per-step argmax; ties go to the lowest index"""
    data = scores.data if isinstance(scores, Tensor) else numpy.asarray(scores)
    return numpy.argmax(data, axis=-1)


def cross_entropy(scores, labels):
    """sum over steps of -ln(score at the true label), floored at 1e-12, averaged
    over the batch. Accepts (V+1, M) with (V+1,) labels or a batch of them."""
    labels = numpy.asarray(labels, dtype=numpy.int64)
    if scores.shape[:-1] != labels.shape:
        raise ShapeMismatch("scores {0} vs labels {1}".format(scores.shape, labels.shape))
    if labels.size and (labels.min() < 0 or labels.max() >= scores.shape[-1]):
        raise ShapeMismatch("labels outside [0, {0})".format(scores.shape[-1]))
    nll = -(scores.pick(labels).clamp_min(PROB_FLOOR).log())
    if labels.ndim == 1:
        return nll.sum()
    return nll.sum(axis=-1).mean()


def backward(loss):
    """populate .grad on every trainable tensor reachable from loss"""
    loss.backward()


# -----------------------------------------------------------------------------
# Optimization

def lr_schedule(epoch, hp):
    """base lr times lr_drop_factor for every drop epoch reached (1-based epochs)"""
    if not 1 <= epoch <= hp.epochs:
        raise UsageError("epoch {0} outside [1, {1}]".format(epoch, hp.epochs))
    drops = sum(1 for e in hp.lr_drop_epochs if epoch >= e)
    return hp.lr * hp.lr_drop_factor ** drops


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state, hp, epoch):
    """one Adam update (bias-corrected) with the scheduled learning rate.

    params: ModelParams (updated in place); grads: name -> ndarray
    """
    lr = lr_schedule(epoch, hp)
    state.step += 1
    bc1 = 1.0 - hp.beta1 ** state.step
    bc2 = 1.0 - hp.beta2 ** state.step
    for name, t in params.tensors.items():
        g = grads[name]
        if hp.weight_decay:
            g = g + hp.weight_decay * t.data
        if name not in state.m:
            state.m[name] = numpy.zeros_like(t.data)
            state.v[name] = numpy.zeros_like(t.data)
        m = state.m[name]
        v = state.v[name]
        m *= hp.beta1
        m += (1.0 - hp.beta1) * g
        v *= hp.beta2
        v += (1.0 - hp.beta2) * (g * g)
        t.data = t.data - lr * (m / bc1) / (numpy.sqrt(v / bc2) + hp.adam_eps)
    return state


# -----------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path, params, meta):
    """header manifest (JSON text) followed by little-endian parameter buffers.

    meta carries the run context (bounds, hyperparameters, seed, feature set, ...);
    it is written into the header as-is.
    """
    dt = numpy.dtype(params.config.dtype).newbyteorder("<")
    entries = []
    chunks = []
    offset = 0
    items = [(k, t.data, True) for k, t in params.tensors.items()] + \
            [(k, v, False) for k, v in params.buffers.items()]
    for name, data, trainable in items:
        raw = numpy.ascontiguousarray(data, dtype=dt).tobytes()
        entries.append({
            "name": name,
            "shape": list(data.shape),
            "offset": offset,
            "nbytes": len(raw),
            "trainable": trainable,
        })
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": "gpsbeam-checkpoint",
        "version": CHECKPOINT_VERSION,
        "dtype": dt.str,
        "tensors": entries,
        "feature_order": list(FEATURE_ORDER),
        "model": params.config.to_dict(),
        "payload_sha256": sha256_bytes(payload),
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write("{0}\n".format(len(header_bytes)).encode("ascii"))
        f.write(header_bytes)
        f.write(payload)
    return path


def load_checkpoint(path):
    """-> (ModelParams, meta). Raises ChecksumMismatch on any corruption."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ChecksumMismatch("{0} is not a checkpoint (bad magic)".format(path))
    rest = blob[len(CHECKPOINT_MAGIC):]
    try:
        nl = rest.index(b"\n")
        n = int(rest[:nl])
        header = json.loads(rest[nl + 1:nl + 1 + n].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise ChecksumMismatch("corrupt checkpoint header in {0}: {1}".format(path, e))
    payload = rest[nl + 1 + n:]
    if sha256_bytes(payload) != header.get("payload_sha256"):
        raise ChecksumMismatch("checkpoint payload checksum mismatch in {0}".format(path))
    if header.get("feature_order") != list(FEATURE_ORDER):
        raise ModelError("checkpoint feature order {0} does not match {1}".format(
            header.get("feature_order"), list(FEATURE_ORDER)))

    cfg = ModelConfig(**header["model"])
    dt = numpy.dtype(header["dtype"])
    tensors = OrderedDict()
    buffers = OrderedDict()
    for e in header["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        data = numpy.frombuffer(raw, dtype=dt).reshape(e["shape"]).astype(cfg.dtype)
        if e["trainable"]:
            tensors[e["name"]] = parameter(data)
        else:
            buffers[e["name"]] = data.copy()
    expected = [name for name, _, _ in param_shapes(cfg)]
    if list(tensors) != expected:
        raise ChecksumMismatch("checkpoint tensors do not match the model layout")
    return ModelParams(cfg, tensors, buffers), header["meta"]
