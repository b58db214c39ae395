"""Dense tensors with reverse-mode automatic differentiation on a tape.

The engine is deliberately small: numpy arrays as storage, a per-use
:class:`Tape` that records primitive ops in execution order (which is a
topological order by construction), and a single reverse sweep in
:func:`backward`. Broadcasting is restricted to scalar-vs-tensor and
equal-shape operands; the one structured exception is ``add_rowvec``,
which adds a per-column vector to a matrix (bias terms).

Default precision is float32. Gradient checks, which need headroom, run
under ``use_dtype(np.float64)``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IndexRangeError, InputError, NumericError, ShapeError

LOG_EPS = 1e-12
BN_EPS = 1e-5

_state = threading.local()


def _default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors on this thread."""
    _state.dtype = np.dtype(dtype)


def get_default_dtype() -> np.dtype:
    return _default_dtype()


@contextmanager
def use_dtype(dtype):
    """Temporarily switch the default dtype (e.g. float64 for grad checks)."""
    prev = _default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class Tensor:
    """A dense n-d array, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        # ndarrays keep their floating dtype; anything else takes the default
        if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            arr = data
        else:
            arr = np.asarray(data, dtype=_default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data, dtype=_default_dtype()).copy(), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


@dataclass
class OpRecord:
    output: Tensor
    inputs: tuple[Tensor, ...]
    # maps grad w.r.t. output -> per-input grads (None for non-diff inputs)
    backward: "callable"


@dataclass
class Tape:
    """Ordered record of primitive ops; execution order is topological."""

    records: list[OpRecord] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape.records.append(OpRecord(out, inputs, backward_fn))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # allowed: equal shapes, or one side scalar (0-d / size 1)
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    return grad.sum().reshape(shape)  # scalar operand


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def add_rowvec(t, v) -> Tensor:
    """Add a length-d vector to every row of an n x d matrix (bias add)."""
    t, v = _as_tensor(t), _as_tensor(v)
    if t.ndim != 2 or v.shape != (t.shape[1],):
        raise ShapeError(f"add_rowvec: incompatible shapes {t.shape} and {v.shape}")
    out = Tensor(t.data + v.data)

    def bwd(g):
        return g, g.sum(axis=0)

    return _record(out, (t, v), bwd)


def relu(t) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(np.maximum(t.data, 0))

    def bwd(g):
        # subgradient 0 at 0
        return (g * (t.data > 0),)

    return _record(out, (t,), bwd)


def log(t) -> Tensor:
    t = _as_tensor(t)
    guarded = np.maximum(t.data, LOG_EPS)
    out = Tensor(np.log(guarded))

    def bwd(g):
        return (g / guarded,)

    return _record(out, (t,), bwd)


def exp(t) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(np.exp(t.data))

    def bwd(g):
        return (g * out.data,)

    return _record(out, (t,), bwd)


_ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "log": log, "exp": exp}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch form of the elementwise op family."""
    if op not in _ELEMENTWISE:
        raise ConfigError(f"unknown elementwise op {op!r}")
    return _ELEMENTWISE[op](*args)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    if len(tensors) == 1:
        return tensors[0]
    ndim = tensors[0].ndim
    if axis < 0 or axis >= ndim:
        raise ShapeError(f"concat: axis {axis} out of range for ndim {ndim}")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or any(
            i != axis and other[i] != ref[i] for i in range(ndim)
        ):
            raise ShapeError(
                f"concat: ragged shapes {tensors[0].shape} vs {t.shape} on axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def bwd(g):
        slicer = [slice(None)] * ndim
        grads = []
        for i in range(len(extents)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _record(out, tuple(tensors), bwd)


def gather_rows(t, idx) -> Tensor:
    t = _as_tensor(t)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-d, got shape {idx.shape}")
    n = t.shape[0]
    bad = (idx < 0) | (idx >= n)
    if bad.any():
        raise IndexRangeError(
            f"gather_rows: index {int(idx[bad][0])} out of range [0, {n})"
        )
    out = Tensor(t.data[idx])

    def bwd(g):
        acc = np.zeros_like(t.data)
        np.add.at(acc, idx, g)  # duplicates accumulate
        return (acc,)

    return _record(out, (t,), bwd)


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    shape = tuple(shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"reshape: cannot view {t.shape} as {shape}")
    out = Tensor(t.data.reshape(shape))

    def bwd(g):
        return (g.reshape(t.shape),)

    return _record(out, (t,), bwd)


def reduce(t, op: str, axis: int | None = None) -> Tensor:
    """Reduce one axis (or all elements when axis is None) by max/mean/sum.

    The max gradient routes to the first maximal element along the axis
    (lowest index), which keeps backward deterministic under ties.
    """
    t = _as_tensor(t)
    if op not in ("max", "mean", "sum"):
        raise ConfigError(f"unknown reduce op {op!r}")
    if axis is None:
        if t.ndim == 0:
            return t
        return reduce(t if t.ndim == 1 else reshape(t, (t.size,)), op, axis=0)
    if axis < 0 or axis >= t.ndim:
        raise ShapeError(f"reduce: axis {axis} out of range for shape {t.shape}")
    if t.shape[axis] == 0:
        raise ShapeError(f"reduce: empty reduction over axis {axis} of {t.shape}")

    extent = t.shape[axis]
    if op == "max":
        out = Tensor(t.data.max(axis=axis))
        argmax = np.argmax(t.data, axis=axis)  # first maximal index

        def bwd(g):
            acc = np.zeros_like(t.data)
            np.put_along_axis(
                acc, np.expand_dims(argmax, axis), np.expand_dims(g, axis), axis
            )
            return (acc,)

    elif op == "sum":
        out = Tensor(t.data.sum(axis=axis))

        def bwd(g):
            return (np.broadcast_to(np.expand_dims(g, axis), t.shape).copy(),)

    else:
        out = Tensor(t.data.mean(axis=axis))

        def bwd(g):
            rep = np.broadcast_to(np.expand_dims(g, axis), t.shape)
            return ((rep / extent).astype(t.data.dtype, copy=False),)

    return _record(out, (t,), bwd)


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Numerically stabilized row softmax of a 2-d array."""
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over rows of -log softmax(logits)[label]."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 2-d, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(
            f"softmax_cross_entropy: {n} rows but {labels.shape} labels"
        )
    bad = (labels < 0) | (labels >= c)
    if bad.any():
        raise IndexRangeError(
            f"softmax_cross_entropy: label {int(labels[bad][0])} out of range [0, {c})"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    out = Tensor(np.mean(logsumexp - shifted[np.arange(n), labels]))

    def bwd(g):
        probs = softmax_rows(logits.data)
        probs[np.arange(n), labels] -= 1.0
        return ((g * probs / n).astype(logits.data.dtype, copy=False),)

    return _record(out, (logits,), bwd)


def dropout(t, rate: float, training: bool, seed: int) -> Tensor:
    t = _as_tensor(t)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout: rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return t
    rng = np.random.default_rng(seed)
    keep = rng.random(t.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=t.data.dtype)
    mask = keep * scale
    out = Tensor(t.data * mask)

    def bwd(g):
        return (g * mask,)

    return _record(out, (t,), bwd)


@dataclass
class BatchNormState:
    """Per-feature learnable scale/shift plus running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99

    @classmethod
    def create(cls, dim: int, momentum: float = 0.99) -> "BatchNormState":
        return cls(
            gamma=parameter(np.ones(dim)),
            beta=parameter(np.zeros(dim)),
            running_mean=np.zeros(dim, dtype=np.float64),
            running_var=np.ones(dim, dtype=np.float64),
            momentum=momentum,
        )


def batch_norm(
    t,
    bn: BatchNormState,
    training: bool,
    update_running: bool | None = None,
) -> Tensor:
    """Per-feature batch normalization over axis 0 of an n x d tensor.

    Training mode normalizes by batch statistics (and by default folds them
    into the running estimates); eval mode uses the running statistics.
    ``update_running=False`` with ``training=True`` gives a pure function of
    the inputs, which gradient checks rely on.
    """
    t = _as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"batch_norm: expected n x d tensor, got {t.shape}")
    n, d = t.shape
    if bn.gamma.shape != (d,):
        raise ShapeError(f"batch_norm: {d} features but scale shape {bn.gamma.shape}")
    if update_running is None:
        update_running = training
    dtype = t.data.dtype

    if training:
        if n < 2:
            raise InputError(f"batch_norm: training needs n >= 2 rows, got {n}")
        mean = t.data.mean(axis=0)
        var = t.data.var(axis=0)
        if update_running:
            m = bn.momentum
            bn.running_mean = m * bn.running_mean + (1.0 - m) * mean.astype(np.float64)
            bn.running_var = m * bn.running_var + (1.0 - m) * var.astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (t.data - mean) * inv_std
        out = Tensor(bn.gamma.data * xhat + bn.beta.data)

        def bwd(g):
            dgamma = (g * xhat).sum(axis=0)
            dbeta = g.sum(axis=0)
            dxhat = g * bn.gamma.data
            dx = (
                inv_std
                / n
                * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            )
            return dx.astype(dtype, copy=False), dgamma, dbeta

    else:
        inv_std = (1.0 / np.sqrt(bn.running_var + BN_EPS)).astype(dtype)
        mean = bn.running_mean.astype(dtype)
        xhat = (t.data - mean) * inv_std
        out = Tensor(bn.gamma.data * xhat + bn.beta.data)

        def bwd(g):
            dgamma = (g * xhat).sum(axis=0)
            dbeta = g.sum(axis=0)
            dx = g * (bn.gamma.data * inv_std)
            return dx, dgamma, dbeta

    return _record(out, (t, bn.gamma, bn.beta), bwd)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss."""
    if loss.data.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.tape is None:
        raise InputError("backward: loss is not connected to a tape")
    if not np.isfinite(loss.data):
        raise NumericError("backward: loss is not finite")
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for rec in reversed(loss.tape.records):
        g = rec.output.grad
        if g is None:
            continue
        grads = rec.backward(g)
        for inp, ig in zip(rec.inputs, grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(ig, dtype=inp.data.dtype, copy=True)
            else:
                inp.grad = inp.grad + ig


@contextmanager
def _no_tape():
    stack = _tape_stack()
    saved, stack[:] = stack[:], []
    try:
        yield
    finally:
        stack[:] = saved


def grad_check(
    f, x: Tensor, h: float = 1e-5, sample=None, seed: int = 0, atol: float = 0.0
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the tensor to a scalar Tensor and must be pure. ``sample``
    limits the check to that many randomly chosen coordinates (all by
    default), which keeps whole-model checks affordable. Coordinates where
    both gradients are below ``atol`` count as error 0: central differences
    cannot certify an identically-zero derivative in relative terms (e.g.
    a bias feeding batch norm, which the mean subtraction cancels exactly).
    """
    x.zero_grad()
    with _no_tape(), Tape():
        y = f(x)
        backward(y)
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = x.grad.copy()

    coords = np.arange(x.size)
    if sample is not None and sample < x.size:
        coords = np.random.default_rng(seed).choice(x.size, size=sample, replace=False)
    flat = x.data.reshape(-1)
    worst = 0.0
    with _no_tape():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(x).data)
            flat[i] = orig - h
            f_minus = float(f(x).data)
            flat[i] = orig
            cd = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            if abs(a) < atol and abs(cd) < atol:
                continue
            err = abs(a - cd) / (abs(a) + abs(cd) + 1e-12)
            worst = max(worst, err)
    return worst
