"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of primitives the detector needs are provided. Every
primitive runs eagerly on numpy arrays; when a :class:`Tape` is active and an
input is tracked, the primitive also records a vector-Jacobian closure that
:func:`backward` replays in reverse order.

Multiply-accumulates of ``conv2d``, ``dense`` and ``matmul`` are added to a
process-wide counter during forward evaluation. Elementwise ops and backward
passes are not counted.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, DimensionError, TapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "mac_total",
    "reset_mac_counter",
    "conv2d",
    "dense",
    "matmul",
    "softmax",
    "log_softmax",
    "relu",
    "exp",
    "log",
    "maximum",
    "smooth_l1",
    "gather",
    "take_rows",
    "concat",
    "reshape",
    "tsum",
    "save_checkpoint",
    "load_checkpoint",
    "init_uniform",
]


_state = threading.local()


def _tapes():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


_mac_lock = threading.Lock()
_mac_count = 0


def _add_macs(n):
    global _mac_count
    with _mac_lock:
        _mac_count += int(n)


def mac_total():
    """Multiply-accumulates counted since the last reset."""
    return _mac_count


def reset_mac_counter():
    global _mac_count
    with _mac_lock:
        _mac_count = 0


class Tensor:
    """An n-dimensional float64 array that can take part in gradient recording."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class _Op:
    inputs: tuple
    output: Tensor
    vjp: Callable


class Tape:
    """Ordered record of primitive ops for one backward pass.

    Use as a context manager; ops executed inside the block whose inputs
    require gradients (or were produced on this tape) are recorded.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self._next_id = 0
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().pop()
        return False

    def _new_id(self):
        self._next_id += 1
        return self._next_id - 1

    def _track(self, t):
        if t._tape is self:
            return True
        if t.requires_grad:
            t._tape = self
            t.node_id = self._new_id()
            self._leaves[t.node_id] = t
            return True
        return False

    def backward(self, output):
        backward(self, output)


def _active_tape():
    tapes = _tapes()
    return tapes[-1] if tapes else None


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs, vjp):
    out = Tensor(data)
    tape = _active_tape()
    if tape is None:
        return out
    tracked = [tape._track(t) for t in inputs]
    if any(tracked):
        out._tape = tape
        out.node_id = tape._new_id()
        tape.ops.append(_Op(tuple(inputs), out, vjp))
    return out


def backward(tape, scalar_output):
    """Populate ``.grad`` on every tensor recorded on ``tape``.

    Gradients are overwritten, not accumulated across calls.
    """
    if scalar_output._tape is not tape:
        raise TapeError("output was not produced on this tape")
    if scalar_output.size != 1:
        raise DimensionError("backward", "a single-element output", list(scalar_output.shape))
    grads = {scalar_output.node_id: np.ones_like(scalar_output.data)}
    seen = {scalar_output.node_id: scalar_output}
    for op in reversed(tape.ops):
        g = grads.get(op.output.node_id)
        if g is None:
            continue
        in_grads = op.vjp(g)
        for t, gi in zip(op.inputs, in_grads):
            if gi is None or t._tape is not tape:
                continue
            if t.node_id in grads:
                grads[t.node_id] = grads[t.node_id] + gi
            else:
                grads[t.node_id] = gi
                seen[t.node_id] = t
    for op in tape.ops:
        op.output.grad = None
    for leaf in tape._leaves.values():
        leaf.grad = np.zeros_like(leaf.data)
    for node_id, t in seen.items():
        t.grad = np.asarray(grads[node_id], dtype=np.float64).reshape(t.shape)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def power(a, p):
    ad = a.data
    return _result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a):
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def maximum(a, floor):
    """Elementwise ``max(a, floor)`` for a constant ``floor``."""
    mask = a.data >= floor
    return _result(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


def smooth_l1(pred, target):
    """Elementwise smooth-L1 of ``pred - target``; ``target`` is a constant array."""
    d = pred.data - np.asarray(target, dtype=np.float64)
    ad = np.abs(d)
    small = ad < 1.0
    out = np.where(small, 0.5 * d * d, ad - 0.5)
    return _result(out, (pred,), lambda g: (g * np.where(small, d, np.sign(d)),))


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None):
    shape = a.shape
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.atleast_1d(out) if axis is None else out, (a,), vjp)


def reshape(a, shape):
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis=-1):
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(a, rows):
    """``a[rows]`` along the first axis; repeated rows accumulate gradient."""
    rows = np.asarray(rows, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, rows, g)
        return (out,)

    return _result(a.data[rows], (a,), vjp)


def gather(a, flat_index):
    """Gather from the flattened ``a``; index ``-1`` yields zero.

    The output has the shape of ``flat_index``.
    """
    idx = np.asarray(flat_index, dtype=np.int64)
    valid = idx >= 0
    src = a.data.reshape(-1)
    out = np.where(valid, src[np.where(valid, idx, 0)], 0.0)
    n = a.size

    def vjp(g):
        flat = np.bincount(idx[valid], weights=g[valid], minlength=n)
        return (flat.reshape(a.shape),)

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", "[m,k] @ [k,n]", f"{list(a.shape)} @ {list(b.shape)}")
    ad, bd = a.data, b.data
    _add_macs(ad.shape[0] * ad.shape[1] * bd.shape[1])
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def dense(x, weight, bias):
    """Affine map ``weight @ x + bias``; ``x`` is ``[n]`` or a batch ``[B, n]``."""
    xd, wd, bd = x.data, weight.data, bias.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[1] or bd.shape != (wd.shape[0],):
        raise DimensionError(
            "dense",
            f"input [..., {wd.shape[1] if wd.ndim == 2 else '?'}] and bias [{wd.shape[0]}]",
            f"input {list(xd.shape)}, weight {list(wd.shape)}, bias {list(bd.shape)}",
        )
    batch = xd.shape[0] if xd.ndim == 2 else 1
    _add_macs(batch * wd.shape[0] * wd.shape[1])
    out = xd @ wd.T + bd

    def vjp(g):
        if xd.ndim == 1:
            return (wd.T @ g, np.outer(g, xd), g)
        return (g @ wd, g.T @ xd, g.sum(axis=0))

    return _result(out, (x, weight, bias), vjp)


def _windows(xp, kh, kw, stride, oh, ow):
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
        writeable=False,
    )


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-D cross-correlation of a ``[C_in, H, W]`` input with ``[C_out, C_in, kh, kw]``."""
    xd, kd = x.data, kernel.data
    if xd.ndim != 3 or kd.ndim != 4 or xd.shape[0] != kd.shape[1]:
        raise DimensionError(
            "conv2d", "input [C_in,H,W] and kernel [C_out,C_in,kh,kw]",
            f"input {list(xd.shape)}, kernel {list(kd.shape)}",
        )
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d", "stride >= 1 and padding >= 0", (stride, padding))
    cin, h, w = xd.shape
    cout, _, kh, kw = kd.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError("conv2d", f"padded input at least {kh}x{kw}", (h, w))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = _windows(np.ascontiguousarray(xp), kh, kw, stride, oh, ow).reshape(cin * kh * kw, oh * ow)
    kmat = kd.reshape(cout, -1)
    out = kmat @ cols
    _add_macs(cout * cin * kh * kw * oh * ow)
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError("conv2d", f"bias [{cout}]", list(bias.shape))
        out = out + bias.data[:, None]
    out = out.reshape(cout, oh, ow)
    xp_shape = xp.shape

    def vjp(g):
        g2 = g.reshape(cout, -1)
        gk = (g2 @ cols.T).reshape(kd.shape)
        gcols = (kmat.T @ g2).reshape(cin, kh, kw, oh, ow)
        gxp = np.zeros(xp_shape)
        for a in range(kh):
            for b in range(kw):
                gxp[:, a : a + stride * oh : stride, b : b + stride * ow : stride] += gcols[:, a, b]
        gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, inputs, vjp)


# ---------------------------------------------------------------- softmax


def softmax(x, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p, (x,), vjp)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), vjp)


# ---------------------------------------------------------------- parameters and checkpoints


def init_uniform(rng, shape, fan_in):
    """Uniform in ``±sqrt(1/fan_in)``, drawn from a numpy Generator."""
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


_MAGIC = b"LATT"
_VERSION = 1


def save_checkpoint(path, tensors):
    """Write ``{name: array}`` in the flat ``LATT`` container format."""
    items = list(tensors.items())
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(items)))
        for name, value in items:
            arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Read a ``LATT`` container into an ordered ``{name: ndarray}`` dict."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != _MAGIC:
        raise DataError("not a LATT checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
            pos += 8 * n
            out[name] = arr.reshape(shape)
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated checkpoint: {exc}") from exc
    return out
