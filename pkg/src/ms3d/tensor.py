"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array and
remembers which op produced it.  Backward passes are themselves built out
of the registered ops, so a gradient returned with ``retain_higher_order``
is an ordinary graph node and can be differentiated again (double
backprop).  Everything is 64-bit and deterministic.
"""

from __future__ import annotations

import itertools
import math
import threading
import warnings
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "OpRecord",
    "UnreachableGradientWarning",
    "forward_op",
    "backward",
    "finite_diff_check",
    "no_grad",
    "op_kinds",
    "trace",
]


class UnreachableGradientWarning(UserWarning):
    """A requested gradient target was not reachable from the output."""


_node_counter = itertools.count()

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording; ops executed inside produce constants."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """A dense float64 array plus its position in a differentiation graph."""

    __slots__ = ("values", "node_id", "requires_grad", "op", "op_params", "parents")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.node_id = next(_node_counter)
        self.requires_grad = bool(requires_grad)
        self.op = None  # op kind string; None for leaves
        self.op_params: dict = {}
        self.parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        """A leaf tensor sharing this tensor's values, cut from the graph."""
        return Tensor(self.values)

    def __repr__(self):
        tag = self.op or "leaf"
        return f"Tensor(shape={self.shape}, op={tag}, grad={self.requires_grad})"

    # -- operator sugar; everything routes through forward_op ---------------

    def __add__(self, other):
        return forward_op("add", self, other)

    def __radd__(self, other):
        return forward_op("add", other, self)

    def __sub__(self, other):
        return forward_op("sub", self, other)

    def __rsub__(self, other):
        return forward_op("sub", other, self)

    def __mul__(self, other):
        return forward_op("mul", self, other)

    def __rmul__(self, other):
        return forward_op("mul", other, self)

    def __neg__(self):
        return forward_op("neg", self)

    def __matmul__(self, other):
        return forward_op("matmul", self, other)

    def reshape(self, shape) -> "Tensor":
        return forward_op("reshape", self, shape=tuple(shape))

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return forward_op("sum_reduce", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return forward_op("mean_reduce", self, axis=axis, keepdims=keepdims)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Op registry
# ---------------------------------------------------------------------------

@dataclass
class _Op:
    forward: callable  # (*arrays, **params) -> array
    vjp: callable      # (grad: Tensor, out: Tensor, inputs, **params) -> tuple


_OPS: dict[str, _Op] = {}


def _register(kind, forward, vjp):
    _OPS[kind] = _Op(forward, vjp)


def op_kinds() -> tuple[str, ...]:
    """All registered op kinds."""
    return tuple(sorted(_OPS))


def forward_op(kind: str, *inputs, **params) -> Tensor:
    """Apply a registered op to the inputs, recording it in the graph.

    Scalars and arrays among ``inputs`` are lifted to constant tensors.
    Shape or domain violations raise ``ValueError`` naming the op.
    """
    op = _OPS.get(kind)
    if op is None:
        raise ValueError(f"unknown op kind '{kind}'")
    tensors = tuple(_lift(x) for x in inputs)
    value = op.forward(*(t.values for t in tensors), **params)
    out = Tensor(value)
    if _grad_enabled() and any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out.op = kind
        out.op_params = params
        out.parents = tensors
    return out


def _shapes(arrays) -> str:
    return ", ".join(str(a.shape) for a in arrays)


def _check_2d(kind, *arrays):
    for a in arrays:
        if a.ndim != 2:
            raise ValueError(f"{kind}: expected 2-d input, got shapes {_shapes(arrays)}")


# ---------------------------------------------------------------------------
# Elementwise and broadcasting ops
# ---------------------------------------------------------------------------

def _broadcast_check(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Reduce ``g`` back to ``shape`` by summing the broadcast axes."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    for _ in range(extra):
        g = forward_op("sum_reduce", g, axis=0, keepdims=False)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = forward_op("sum_reduce", g, axis=axis, keepdims=True)
    if g.shape != tuple(shape):
        g = forward_op("reshape", g, shape=tuple(shape))
    return g


def _add_fwd(a, b):
    _broadcast_check("add", a, b)
    return a + b


def _add_vjp(g, out, inputs):
    a, b = inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_fwd(a, b):
    _broadcast_check("sub", a, b)
    return a - b


def _sub_vjp(g, out, inputs):
    a, b = inputs
    return _unbroadcast(g, a.shape), _unbroadcast(forward_op("neg", g), b.shape)


def _mul_fwd(a, b):
    _broadcast_check("mul", a, b)
    return a * b


def _mul_vjp(g, out, inputs):
    a, b = inputs
    ga = _unbroadcast(forward_op("mul", g, b), a.shape)
    gb = _unbroadcast(forward_op("mul", g, a), b.shape)
    return ga, gb


def _neg_fwd(a):
    return -a


def _neg_vjp(g, out, inputs):
    return (forward_op("neg", g),)


def _abs_fwd(a):
    return np.abs(a)


def _abs_vjp(g, out, inputs):
    (a,) = inputs
    # subgradient at 0 is 0; the sign mask is a constant of the graph
    return (forward_op("mul", g, Tensor(np.sign(a.values))),)


def _square_fwd(a):
    return a * a


def _square_vjp(g, out, inputs):
    (a,) = inputs
    return (forward_op("mul", g, forward_op("mul", a, Tensor(2.0))),)


def _tanh_fwd(a):
    return np.tanh(a)


def _tanh_vjp(g, out, inputs):
    one_minus = forward_op("sub", Tensor(1.0), forward_op("square", out))
    return (forward_op("mul", g, one_minus),)


def _softplus_fwd(a):
    return np.logaddexp(0.0, a)


def _softplus_vjp(g, out, inputs):
    (a,) = inputs
    return (forward_op("mul", g, forward_op("sigmoid", a)),)


def _sigmoid_fwd(a):
    # stable for large |a|: sigma(a) = (1 + tanh(a/2)) / 2
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _sigmoid_vjp(g, out, inputs):
    one_minus = forward_op("sub", Tensor(1.0), out)
    return (forward_op("mul", g, forward_op("mul", out, one_minus)),)


def _leaky_relu_fwd(a, alpha=0.01):
    return np.where(a >= 0.0, a, alpha * a)


def _leaky_relu_vjp(g, out, inputs, alpha=0.01):
    (a,) = inputs
    # slope at 0 taken from the positive side
    mask = np.where(a.values >= 0.0, 1.0, alpha)
    return (forward_op("mul", g, Tensor(mask)),)


def _log_fwd(a):
    if np.any(a <= 0.0):
        raise ValueError(f"log: non-positive input (min {a.min()!r})")
    return np.log(a)


def _log_vjp(g, out, inputs):
    (a,) = inputs
    return (forward_op("mul", g, forward_op("reciprocal", a)),)


def _reciprocal_fwd(a):
    if np.any(a == 0.0):
        raise ValueError("reciprocal: zero input")
    return 1.0 / a


def _reciprocal_vjp(g, out, inputs):
    sq = forward_op("square", out)
    return (forward_op("neg", forward_op("mul", g, sq)),)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _sum_fwd(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _expand_reduced(g: Tensor, in_shape, axis, keepdims) -> Tensor:
    if axis is not None and not keepdims:
        kept = list(in_shape)
        kept[axis] = 1
        g = forward_op("reshape", g, shape=tuple(kept))
    return g


def _sum_vjp(g, out, inputs, axis=None, keepdims=False):
    (a,) = inputs
    g = _expand_reduced(g, a.shape, axis, keepdims)
    return (forward_op("mul", g, Tensor(np.ones(a.shape))),)


def _mean_fwd(a, axis=None, keepdims=False):
    return np.mean(a, axis=axis, keepdims=keepdims)


def _mean_vjp(g, out, inputs, axis=None, keepdims=False):
    (a,) = inputs
    count = a.size if axis is None else a.shape[axis]
    g = _expand_reduced(g, a.shape, axis, keepdims)
    return (forward_op("mul", g, Tensor(np.full(a.shape, 1.0 / count))),)


def _max_fwd(a):
    if a.size == 0:
        raise ValueError("max_reduce: empty input")
    return np.max(a)


def _max_vjp(g, out, inputs):
    (a,) = inputs
    # gradient routed to the first maximal element in row-major order
    mask = np.zeros_like(a.values)
    mask.flat[np.argmax(a.values)] = 1.0
    return (forward_op("mul", g, Tensor(mask)),)


def _mse_fwd(a, b):
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    return np.mean((a - b) ** 2)


def _mse_vjp(g, out, inputs):
    a, b = inputs
    scale = Tensor(2.0 / a.size)
    term = forward_op("mul", g, forward_op("mul", forward_op("sub", a, b), scale))
    return term, forward_op("neg", term)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------

def _reshape_fwd(a, shape):
    if int(np.prod(shape)) != a.size:
        raise ValueError(f"reshape: cannot view {a.shape} as {shape}")
    return np.reshape(a, shape)


def _reshape_vjp(g, out, inputs, shape):
    (a,) = inputs
    return (forward_op("reshape", g, shape=a.shape),)


def _transpose2d_fwd(a):
    _check_2d("transpose2d", a)
    return a.T.copy()


def _transpose2d_vjp(g, out, inputs):
    return (forward_op("transpose2d", g),)


def _pad_zero_fwd(a, pad):
    if len(pad) != a.ndim or any(b < 0 or e < 0 for b, e in pad):
        raise ValueError(f"pad_zero: bad pad {pad} for shape {a.shape}")
    return np.pad(a, pad, mode="constant")


def _pad_zero_vjp(g, out, inputs, pad):
    (a,) = inputs
    start = tuple(b for b, _ in pad)
    return (forward_op("slice_view", g, start=start, size=a.shape),)


def _slice_fwd(a, start, size):
    if len(start) != a.ndim or len(size) != a.ndim:
        raise ValueError(f"slice_view: rank mismatch for shape {a.shape}")
    for s, z, dim in zip(start, size, a.shape):
        if s < 0 or z < 0 or s + z > dim:
            raise ValueError(f"slice_view: window {start}+{size} outside shape {a.shape}")
    index = tuple(slice(s, s + z) for s, z in zip(start, size))
    return a[index].copy()


def _slice_vjp(g, out, inputs, start, size):
    (a,) = inputs
    pad = tuple((s, dim - s - z) for s, z, dim in zip(start, size, a.shape))
    return (forward_op("pad_zero", g, pad=pad),)


def _flip2d_fwd(a):
    _check_2d("flip2d", a)
    return a[::-1, ::-1].copy()


def _flip2d_vjp(g, out, inputs):
    return (forward_op("flip2d", g),)


def _dilate2d_fwd(a, step):
    _check_2d("dilate2d", a)
    if step < 1:
        raise ValueError(f"dilate2d: step must be >= 1, got {step}")
    h, w = a.shape
    out = np.zeros(((h - 1) * step + 1, (w - 1) * step + 1))
    out[::step, ::step] = a
    return out


def _dilate2d_vjp(g, out, inputs, step):
    return (forward_op("subsample2d", g, step=step),)


def _subsample2d_fwd(a, step):
    _check_2d("subsample2d", a)
    if step < 1:
        raise ValueError(f"subsample2d: step must be >= 1, got {step}")
    return a[::step, ::step].copy()


def _subsample2d_vjp(g, out, inputs, step):
    (a,) = inputs
    h, w = a.shape
    gd = forward_op("dilate2d", g, step=step)
    pad = ((0, h - gd.shape[0]), (0, w - gd.shape[1]))
    return (forward_op("pad_zero", gd, pad=pad),)


# ---------------------------------------------------------------------------
# Spatial ops
# ---------------------------------------------------------------------------

def _pool_windows(a, k, stride):
    view = np.lib.stride_tricks.sliding_window_view(a, (k, k))
    return view[::stride, ::stride]


def _avg_pool2d_fwd(a, k, stride):
    _check_2d("avg_pool2d", a)
    h, w = a.shape
    if not (1 <= k <= min(h, w)) or stride < 1:
        raise ValueError(f"avg_pool2d: window {k} stride {stride} on shape {a.shape}")
    if (h - k) % stride or (w - k) % stride:
        raise ValueError(f"avg_pool2d: shape {a.shape} not tiled by k={k} stride={stride}")
    return _pool_windows(a, k, stride).mean(axis=(-2, -1))


def _avg_pool2d_vjp(g, out, inputs, k, stride):
    gd = forward_op("dilate2d", g, step=stride)
    gp = forward_op("pad_zero", gd, pad=((k - 1, k - 1), (k - 1, k - 1)))
    ones = Tensor(np.full((k, k), 1.0 / (k * k)))
    return (forward_op("conv2d", gp, ones),)


def _upsample_fwd(a, factor):
    _check_2d("upsample_nearest", a)
    if factor < 1:
        raise ValueError(f"upsample_nearest: factor must be >= 1, got {factor}")
    return np.repeat(np.repeat(a, factor, axis=0), factor, axis=1)


def _upsample_vjp(g, out, inputs, factor):
    pooled = forward_op("avg_pool2d", g, k=factor, stride=factor)
    return (forward_op("mul", pooled, Tensor(float(factor * factor))),)


def _conv2d_fwd(x, w, stride=1):
    _check_2d("conv2d", x, w)
    kh, kw = w.shape
    h, ww = x.shape
    if kh > h or kw > ww:
        raise ValueError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    if (h - kh) % stride or (ww - kw) % stride:
        raise ValueError(f"conv2d: input {x.shape} not tiled by kernel {w.shape} stride={stride}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw))[::stride, ::stride]
    return np.einsum("ijkl,kl->ij", windows, w)


def _conv2d_vjp(g, out, inputs, stride=1):
    x, w = inputs
    kh, kw = w.shape
    gd = forward_op("dilate2d", g, step=stride)
    gp = forward_op("pad_zero", gd, pad=((kh - 1, kh - 1), (kw - 1, kw - 1)))
    gx = forward_op("conv2d", gp, forward_op("flip2d", w))
    gw = forward_op("conv2d", x, gd)
    return gx, gw


def _reflect_index(i, n):
    return 1 if i == 0 else (n - 2 if i == n + 1 else i - 1)


def _pad_reflect1_fwd(a):
    _check_2d("pad_reflect1", a)
    if min(a.shape) < 2:
        raise ValueError(f"pad_reflect1: side must be >= 2, got shape {a.shape}")
    return np.pad(a, 1, mode="reflect")


def _fold_axis0(g: Tensor, n: int) -> Tensor:
    """Adjoint of 1-pixel reflect padding along axis 0 of a 2-d tensor."""
    cols = g.shape[1]
    core = forward_op("slice_view", g, start=(1, 0), size=(n, cols))
    top = forward_op("slice_view", g, start=(0, 0), size=(1, cols))
    bottom = forward_op("slice_view", g, start=(n + 1, 0), size=(1, cols))
    core = forward_op("add", core, forward_op("pad_zero", top, pad=((1, n - 2), (0, 0))))
    return forward_op("add", core, forward_op("pad_zero", bottom, pad=((n - 2, 1), (0, 0))))


def _pad_reflect1_vjp(g, out, inputs):
    (a,) = inputs
    h, w = a.shape
    folded = _fold_axis0(g, h)
    folded = forward_op("transpose2d", folded)
    folded = _fold_axis0(folded, w)
    return (forward_op("transpose2d", folded),)


def _matmul_fwd(a, b):
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return a @ b


def _matmul_vjp(g, out, inputs):
    a, b = inputs
    ga = forward_op("matmul", g, forward_op("transpose2d", b))
    gb = forward_op("matmul", forward_op("transpose2d", a), g)
    return ga, gb


for _kind, _f, _v in [
    ("add", _add_fwd, _add_vjp),
    ("sub", _sub_fwd, _sub_vjp),
    ("mul", _mul_fwd, _mul_vjp),
    ("neg", _neg_fwd, _neg_vjp),
    ("abs", _abs_fwd, _abs_vjp),
    ("square", _square_fwd, _square_vjp),
    ("tanh", _tanh_fwd, _tanh_vjp),
    ("softplus", _softplus_fwd, _softplus_vjp),
    ("sigmoid", _sigmoid_fwd, _sigmoid_vjp),
    ("leaky_relu", _leaky_relu_fwd, _leaky_relu_vjp),
    ("log", _log_fwd, _log_vjp),
    ("reciprocal", _reciprocal_fwd, _reciprocal_vjp),
    ("sum_reduce", _sum_fwd, _sum_vjp),
    ("mean_reduce", _mean_fwd, _mean_vjp),
    ("max_reduce", _max_fwd, _max_vjp),
    ("mse", _mse_fwd, _mse_vjp),
    ("reshape", _reshape_fwd, _reshape_vjp),
    ("transpose2d", _transpose2d_fwd, _transpose2d_vjp),
    ("pad_zero", _pad_zero_fwd, _pad_zero_vjp),
    ("slice_view", _slice_fwd, _slice_vjp),
    ("flip2d", _flip2d_fwd, _flip2d_vjp),
    ("dilate2d", _dilate2d_fwd, _dilate2d_vjp),
    ("subsample2d", _subsample2d_fwd, _subsample2d_vjp),
    ("avg_pool2d", _avg_pool2d_fwd, _avg_pool2d_vjp),
    ("upsample_nearest", _upsample_fwd, _upsample_vjp),
    ("conv2d", _conv2d_fwd, _conv2d_vjp),
    ("pad_reflect1", _pad_reflect1_fwd, _pad_reflect1_vjp),
    ("matmul", _matmul_fwd, _matmul_vjp),
]:
    _register(_kind, _f, _v)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _toposort(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(output: Tensor, wrt, retain_higher_order: bool = False):
    """Gradients of a scalar ``output`` with respect to the ``wrt`` tensors.

    With ``retain_higher_order`` the returned gradients are graph nodes and
    can be differentiated again; otherwise they are detached constants.
    Unreachable targets yield zeros and an ``UnreachableGradientWarning``.
    """
    if output.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {output.shape}")
    if retain_higher_order and not _grad_enabled():
        raise ValueError("backward: retain_higher_order requires grad recording enabled")
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)

    grads: dict[int, Tensor] = {output.node_id: Tensor(np.ones_like(output.values))}
    sweep_ctx = _null_ctx() if retain_higher_order else no_grad()
    with sweep_ctx:
        for node in reversed(_toposort(output)):
            if node.op is None:
                continue
            g = grads.get(node.node_id)
            if g is None:
                continue
            parent_grads = _OPS[node.op].vjp(g, node, node.parents, **node.op_params)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                held = grads.get(parent.node_id)
                grads[parent.node_id] = pg if held is None else forward_op("add", held, pg)

    results = []
    for t in targets:
        g = grads.get(t.node_id)
        if g is None:
            warnings.warn(
                f"gradient target node {t.node_id} unreachable from output; returning zeros",
                UnreachableGradientWarning,
                stacklevel=2,
            )
            g = Tensor(np.zeros_like(t.values))
        elif not retain_higher_order:
            g = g.detach()
        results.append(g)
    return results[0] if single else results


@contextmanager
def _null_ctx():
    yield


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor and is re-evaluated at ``x`` with
    each coordinate shifted by +/- ``h``.  The error per coordinate is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    """
    base = x.values.copy()
    probe = Tensor(base, requires_grad=True)
    y = f(probe)
    if y.size != 1:
        raise ValueError(f"finite_diff_check: f must return a scalar, got shape {y.shape}")
    if not np.isfinite(y.values):
        raise ValueError("finite_diff_check: non-finite function value at x")
    analytic = backward(y, probe).values

    worst = 0.0
    for i in range(base.size):
        shifted = base.copy()
        shifted.flat[i] = base.flat[i] + h
        hi = float(f(Tensor(shifted)).values)
        shifted.flat[i] = base.flat[i] - h
        lo = float(f(Tensor(shifted)).values)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"finite_diff_check: non-finite value at coordinate {i}")
        numeric = (hi - lo) / (2.0 * h)
        a = float(analytic.flat[i])
        err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Graph records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpRecord:
    kind: str
    input_ids: tuple[int, ...]
    output_id: int
    params: dict


@dataclass
class Graph:
    """Topologically ordered op records, replayable from the leaf values."""

    records: list[OpRecord]
    leaves: dict[int, np.ndarray]
    output_id: int

    def replay(self, leaf_values: dict[int, np.ndarray] | None = None) -> np.ndarray:
        values = {k: v for k, v in self.leaves.items()}
        if leaf_values:
            for node_id, arr in leaf_values.items():
                if node_id not in values:
                    raise ValueError(f"replay: node {node_id} is not a leaf of this graph")
                values[node_id] = np.asarray(arr, dtype=np.float64)
        for rec in self.records:
            args = [values[i] for i in rec.input_ids]
            values[rec.output_id] = _OPS[rec.kind].forward(*args, **rec.params)
        return values[self.output_id]


def trace(output: Tensor) -> Graph:
    """Extract the op records reachable from ``output`` (constants included)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    records = []
    leaves = {}
    for node in order:
        if node.op is None:
            leaves[node.node_id] = node.values
        else:
            records.append(OpRecord(node.op, tuple(p.node_id for p in node.parents),
                                    node.node_id, dict(node.op_params)))
    return Graph(records, leaves, output.node_id)
