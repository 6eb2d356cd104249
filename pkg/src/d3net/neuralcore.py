"""Minimal deterministic tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays and record their producing operation on a tape of
parent links and backward closures.  Compute dtype follows the input arrays:
float32 for normal training, float64 when tests need finite-difference
precision.  Convolutions are im2col + matmul; the transposed convolution is
implemented as the exact adjoint of the strided convolution, so a weight
array of shape (O, I, kh, kw) serves conv2d while the same memory viewed as
(in_c, out_c, kh, kw) serves conv2d_transposed, and
<conv2d(x, w), y> == <x, conv2d_transposed(y, w)> holds to rounding.
"""

import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np

_node_counter = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager: ops created inside record no tape links."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accumulate(t, delta):
    if t.grad is None:
        t.grad = np.array(delta)
    else:
        t.grad = t.grad + delta


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(
        p.requires_grad or p._parents for p in parents
    ):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def backward(loss):
    """Reverse-mode sweep from a scalar loss.  Gradients accumulate into
    .grad buffers; callers reset between steps (the trainer zero-fills)."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    # iterative post-order: recursion depth would scale with network depth
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# Convolution internals (im2col / col2im)
# ---------------------------------------------------------------------------

def _out_dim(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    ho = _out_dim(h, kh, stride, pad)
    wo = _out_dim(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride,
                                  j:j + stride * wo:stride]
    return cols.reshape(b, c * kh * kw, ho * wo), (ho, wo)


def _col2im(cols, xshape, kh, kw, stride, pad):
    b, c, h, w = xshape
    ho = _out_dim(h, kh, stride, pad)
    wo = _out_dim(w, kw, stride, pad)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols6 = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                cols6[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w] if pad else xp


def _conv_forward(x, w, stride, pad):
    o = w.shape[0]
    cols, (ho, wo) = _im2col(x, w.shape[2], w.shape[3], stride, pad)
    out = np.matmul(w.reshape(o, -1), cols)
    return out.reshape(x.shape[0], o, ho, wo)


def _conv_grad_input(gout, w, stride, pad, in_hw):
    b = gout.shape[0]
    o, c, kh, kw = w.shape
    g2 = gout.reshape(b, o, -1)
    cols = np.matmul(w.reshape(o, -1).T, g2)
    return _col2im(cols, (b, c, *in_hw), kh, kw, stride, pad)


def _conv_grad_weight(x, gout, stride, pad, kh, kw):
    b, o = gout.shape[0], gout.shape[1]
    cols, _ = _im2col(x, kh, kw, stride, pad)
    g2 = gout.reshape(b, o, -1)
    gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
    return gw.reshape(o, x.shape[1], kh, kw)


def _check_4d(t, role):
    if t.data.ndim != 4:
        raise ValueError(f"{role} must be 4-D (B,C,H,W), got {t.data.shape}")


# ---------------------------------------------------------------------------
# Differentiable operations
# ---------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Strided cross-correlation with zero padding; weight (out_c, in_c, kh, kw)."""
    _check_4d(x, "conv2d input")
    _check_4d(weight, "conv2d weight")
    o, c, kh, kw = weight.data.shape
    if x.data.shape[1] != c:
        raise ValueError(
            f"conv2d: input has {x.data.shape[1]} channels, weight expects {c}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape}, expected ({o},)")
    h, w_ = x.data.shape[2:]
    if _out_dim(h, kh, stride, pad) < 1 or _out_dim(w_, kw, stride, pad) < 1:
        raise ValueError(f"conv2d: {h}x{w_} input too small for kernel {kh}x{kw}")
    out = _conv_forward(x.data, weight.data, stride, pad)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        _accumulate(x, _conv_grad_input(g, weight.data, stride, pad, (h, w_)))
        _accumulate(weight, _conv_grad_weight(x.data, g, stride, pad, kh, kw))
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out, parents, back)


def conv2d_transposed(x, weight, bias=None, stride=1, pad=0):
    """Adjoint of conv2d; weight (in_c, out_c, kh, kw), output
    (H-1)*stride - 2*pad + kh per axis."""
    _check_4d(x, "conv2d_transposed input")
    _check_4d(weight, "conv2d_transposed weight")
    i, o, kh, kw = weight.data.shape
    if x.data.shape[1] != i:
        raise ValueError(
            f"conv2d_transposed: input has {x.data.shape[1]} channels, "
            f"weight expects {i}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise ValueError(
            f"conv2d_transposed: bias shape {bias.data.shape}, expected ({o},)"
        )
    hz, wz = x.data.shape[2:]
    hout = (hz - 1) * stride - 2 * pad + kh
    wout = (wz - 1) * stride - 2 * pad + kw
    if hout < 1 or wout < 1:
        raise ValueError(f"conv2d_transposed: output dims {hout}x{wout} invalid")
    out = _conv_grad_input(x.data, weight.data, stride, pad, (hout, wout))
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        _accumulate(x, _conv_forward(g, weight.data, stride, pad))
        _accumulate(weight, _conv_grad_weight(g, x.data, stride, pad, kh, kw))
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    return _make(out, parents, back)


def relu(x):
    mask = x.data > 0

    def back(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0), (x,), back)


def add(x, y):
    if x.data.shape != y.data.shape:
        raise ValueError(f"add: shapes differ {x.data.shape} vs {y.data.shape}")

    def back(g):
        _accumulate(x, g)
        _accumulate(y, g)

    return _make(x.data + y.data, (x, y), back)


def concat_channels(x, y):
    _check_4d(x, "concat input")
    _check_4d(y, "concat input")
    bx, cx = x.data.shape[:2]
    if x.data.shape[0] != y.data.shape[0] or x.data.shape[2:] != y.data.shape[2:]:
        raise ValueError(
            f"concat_channels: shapes {x.data.shape} and {y.data.shape} disagree"
        )

    def back(g):
        _accumulate(x, g[:, :cx])
        _accumulate(y, g[:, cx:])

    return _make(np.concatenate([x.data, y.data], axis=1), (x, y), back)


def upsample_nearest2x(x):
    _check_4d(x, "upsample input")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        b, c, h2, w2 = g.shape
        _accumulate(x, g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return _make(out, (x,), back)


def l1_loss(pred, target):
    """Mean absolute error; subgradient at exact zeros defined as 0."""
    if pred.data.shape != target.data.shape:
        raise ValueError(
            f"l1_loss: shapes differ {pred.data.shape} vs {target.data.shape}"
        )
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        s = np.sign(diff) * (float(g) / n)
        _accumulate(pred, s)
        _accumulate(target, -s)

    return _make(np.abs(diff).mean(), (pred, target), back)


# ---------------------------------------------------------------------------
# Parameters and optimization
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters plus per-parameter ADAM moments and a shared step
    counter.  He-uniform initialization draws from one seeded stream in
    creation order, so identical construction is bit-identical."""

    def __init__(self, rng_seed=0):
        self.params = {}
        self.m = {}
        self.v = {}
        self.t = 0
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng([self.rng_seed & 0xFFFFFFFFFFFFFFFF])

    def add(self, name, shape, fan_in=None, init="he", dtype=np.float32):
        if name in self.params:
            raise ValueError(f"duplicate parameter '{name}'")
        shape = tuple(shape)
        if init == "zeros":
            data = np.zeros(shape, dtype=dtype)
        elif init == "he":
            if not fan_in:
                raise ValueError(f"parameter '{name}' needs fan_in for He init")
            bound = math.sqrt(6.0 / fan_in)
            data = self._rng.uniform(-bound, bound, shape).astype(dtype)
        else:
            raise ValueError(f"unknown init '{init}'")
        self.params[name] = Tensor(data, requires_grad=True)
        self.m[name] = np.zeros(shape, dtype=dtype)
        self.v[name] = np.zeros(shape, dtype=dtype)
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def param_count(self):
        return sum(p.data.size for p in self.params.values())


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected ADAM update over every parameter in the store."""
    store.t += 1
    t = store.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.params.items():
        if p.grad is None:
            raise ValueError(f"parameter '{name}' has no gradient")
        g = p.grad
        store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * (g * g)
        m_hat = store.m[name] / bc1
        v_hat = store.v[name] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class LrSchedule:
    base_lr: float = 0.0004
    decrement: float = 0.00005
    interval: int = 1000
    floor: float = 0.00005


def lr_at(schedule, t):
    """Stepwise-decayed rate, clamped at the floor so it stays positive.

    The decimal step values (4e-4 minus multiples of 5e-5) are not exactly
    representable in binary; rounding to 12 decimals restores the intended
    lattice so logged rates compare exactly.
    """
    if t < 0:
        raise ValueError(f"iteration must be >= 0, got {t}")
    raw = schedule.base_lr - schedule.decrement * (t // schedule.interval)
    return max(schedule.floor, round(raw, 12))


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

_MAGIC = b"D3NC"
_CKPT_VERSION = 1


def save_checkpoint(store, path):
    """Versioned binary dump: parameters, ADAM moments, iteration counter.
    All floats 32-bit little-endian; byte-exact round trip."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(store.params)))
        for name, p in store.params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        for name in store.params:
            fh.write(np.ascontiguousarray(store.m[name], dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(store.v[name], dtype="<f4").tobytes())
        fh.write(struct.pack("<Q", store.t))


def load_checkpoint(path):
    def take(fh, n, what):
        raw = fh.read(n)
        if len(raw) != n:
            raise OSError(f"checkpoint '{path}' truncated reading {what}")
        return raw

    with open(path, "rb") as fh:
        if take(fh, 4, "magic") != _MAGIC:
            raise OSError(f"'{path}' is not a parameter checkpoint")
        version = struct.unpack("<I", take(fh, 4, "version"))[0]
        if version != _CKPT_VERSION:
            raise OSError(f"checkpoint '{path}' has unsupported version {version}")
        count = struct.unpack("<I", take(fh, 4, "parameter count"))[0]
        store = ParamStore()
        for _ in range(count):
            nlen = struct.unpack("<I", take(fh, 4, "name length"))[0]
            name = take(fh, nlen, "name").decode("utf-8")
            rank = struct.unpack("<I", take(fh, 4, "rank"))[0]
            shape = struct.unpack(f"<{rank}I", take(fh, 4 * rank, "dims"))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(
                take(fh, 4 * size, f"data of '{name}'"), dtype="<f4"
            ).reshape(shape).copy()
            store.params[name] = Tensor(data, requires_grad=True)
        for name, p in store.params.items():
            n = p.data.size
            store.m[name] = np.frombuffer(
                take(fh, 4 * n, f"adam m of '{name}'"), dtype="<f4"
            ).reshape(p.data.shape).copy()
            store.v[name] = np.frombuffer(
                take(fh, 4 * n, f"adam v of '{name}'"), dtype="<f4"
            ).reshape(p.data.shape).copy()
        store.t = struct.unpack("<Q", take(fh, 8, "iteration counter"))[0]
    return store
