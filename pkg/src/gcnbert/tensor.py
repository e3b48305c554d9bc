"""Dense tensors with tape-based reverse-mode differentiation.

Every layer in the model is written in terms of the primitives in this
module.  Operations record themselves on the innermost active :class:`Tape`
when at least one input requires a gradient; with no tape active the same
numpy computation runs and nothing is recorded.

Broadcasting is deliberately absent except for ``scale`` (scalar times
tensor) and the two explicit helpers ``expand`` and the shared-operand form
of ``matmul`` (a 2-D operand against a stack of matrices).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

_DEFAULT_DTYPE = np.float64
_TAPES: list["Tape"] = []

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A numpy array that can take part in gradient computation.

    ``grad`` is populated on leaf tensors (those not produced by an op) by
    :meth:`Tape.backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else _DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on a scalar output.  A tape belongs to one thread of
    execution.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> list[int]:
        """Propagate gradients from ``output`` to every recorded input.

        Leaf tensors with ``requires_grad`` accumulate into ``.grad``.
        Returns the indices of the records visited, in visiting order.
        """
        if seed is None:
            if output.size != 1:
                raise ShapeError(f"backward needs a scalar output or an explicit seed, got {output.shape}")
            seed = np.ones_like(output.data)
        grads: dict[int, np.ndarray] = {id(output): np.asarray(seed, dtype=output.dtype)}
        visited = []
        for idx in range(len(self.records) - 1, -1, -1):
            rec = self.records[idx]
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            visited.append(idx)
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.is_leaf:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
        if output.is_leaf and output.requires_grad:
            output.grad = np.asarray(seed, dtype=output.dtype).copy()
        return visited


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class no_grad:
    """Suspend recording on every active tape."""

    def __enter__(self):
        self._saved = list(_TAPES)
        _TAPES.clear()

    def __exit__(self, *exc):
        _TAPES.extend(self._saved)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def _make(out: np.ndarray, op: str, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    _check_finite(out, op)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.name = None
    result.is_leaf = False
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result.requires_grad = needs
    if needs:
        tape.records.append(_Record(tuple(inputs), result, backward))
    return result


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Both operands must be at least 2-D.  Either they have the same rank and
    identical leading (batch) dimensions, or one of them is a plain matrix
    that is applied to every matrix in the other's stack.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    out = np.matmul(A, B)

    def backward(g):
        if B.ndim == 2 and A.ndim > 2:
            ga = g @ B.T
            gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        elif A.ndim == 2 and B.ndim > 2:
            Bt = np.swapaxes(B, -1, -2)
            ga = np.matmul(g, Bt).reshape(-1, *A.shape).sum(axis=0)
            gb = np.matmul(A.T, g)
        else:
            ga = np.matmul(g, np.swapaxes(B, -1, -2))
            gb = np.matmul(np.swapaxes(A, -1, -2), g)
        return ga, gb

    return _make(out, "matmul", (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose: need rank >= 2, got {x.shape}")
    out = np.swapaxes(x.data, -1, -2)
    return _make(out, "transpose", (x,), lambda g: (np.swapaxes(g, -1, -2),))


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, "mul", (a, b), lambda g: (g * B, g * A))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _make(x.data * c, "scale", (x,), lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF."""
    x = as_tensor(x)
    X = x.data
    cdf = normal_cdf(X)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * X * X)
        return (g * (cdf + X * pdf),)

    return _make(X * cdf, "gelu", (x,), backward)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "gelu": gelu, "scale": scale}


def elementwise(op: str, *args):
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------- reductions, normalizers


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim, "softmax")
    if x.shape[axis] == 0:
        raise ShapeError("softmax: empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, "softmax", (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim, "log_softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, "log_softmax", (x,), backward)


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim, "reduce_mean")
    n = x.shape[axis]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    return _make(x.data.mean(axis=axis), "reduce_mean", (x,), backward)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _make(np.asarray(x.data.sum()), "reduce_sum", (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))
    axis = _norm_axis(axis, x.ndim, "reduce_sum")

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(x.data.sum(axis=axis), "reduce_sum", (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a per-feature gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    G = gain.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead)
        gb = g.sum(axis=lead)
        gx_hat = g * G
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(xhat * G + bias.data, "layer_norm", (x, gain, bias), backward)


# ---------------------------------------------------------------- shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _make(out, "reshape", (x,), lambda g: (g.reshape(old),))


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    axis = _norm_axis(axis, a.ndim, "concat")
    for i, (m, n) in enumerate(zip(a.shape, b.shape)):
        if i != axis and m != n:
            raise ShapeError(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    split = a.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)

    def backward(g):
        return np.split(g, [split], axis=axis)

    return _make(out, "concat", (a, b), backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim, "slice_axis")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _make(x.data[index].copy(), "slice_axis", (x,), backward)


def index_axis(x: Tensor, i: int, axis: int) -> Tensor:
    """Select position ``i`` along ``axis``, dropping that axis."""
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim, "index_axis")
    if not -x.shape[axis] <= i < x.shape[axis]:
        raise ShapeError(f"index_axis: index {i} out of range for axis of length {x.shape[axis]}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        idx = [slice(None)] * len(shape)
        idx[axis] = i
        full[tuple(idx)] = g
        return (full,)

    return _make(np.take(x.data, i, axis=axis), "index_axis", (x,), backward)


def pick(x: Tensor, indices) -> Tensor:
    """Gather one entry per row along the last axis: ``out[n] = x[n, indices[n]]``."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != x.shape[:-1]:
        raise ShapeError(f"pick: indices shape {idx.shape} does not match {x.shape[:-1]}")
    width = x.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise IndexError(f"pick: index out of range [0, {width})")
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _make(out, "pick", (x,), backward)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Repeat ``x`` over new leading axes so that it takes ``shape``.

    ``x.shape`` must equal the trailing dimensions of ``shape``.
    """
    x = as_tensor(x)
    shape = tuple(shape)
    lead = len(shape) - x.ndim
    if lead < 0 or shape[lead:] != x.shape:
        raise ShapeError(f"expand: cannot expand {x.shape} to {shape}")
    if lead == 0:
        return x
    out = np.broadcast_to(x.data, shape).copy()
    return _make(out, "expand", (x,), lambda g: (g.sum(axis=tuple(range(lead))),))


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x`` (any leading shape)."""
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else reshape(x, (-1, x.shape[-1]))
    out = matmul(flat, weight)
    if bias is not None:
        out = add(out, expand(bias, out.shape))
    if out.shape[:-1] != lead:
        out = reshape(out, lead + (weight.shape[-1],))
    return out


# ---------------------------------------------------------------- gradient checking


def grad_errors(f: Callable[[], Tensor], params: Mapping[str, Tensor],
                epsilon: float = 1e-5, floor: float = 0.0) -> dict[str, float]:
    """Compare analytic gradients of scalar ``f()`` to central differences.

    ``f`` must read the current values of ``params`` every time it runs.
    Returns, per parameter name, the relative error
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)``
    with the maxima taken over the entries of that parameter.  A positive
    ``floor`` also bounds the denominator below by ``floor`` times the largest
    analytic gradient entry over all parameters, so a parameter whose whole
    gradient is negligible next to the others is not judged on roundoff.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        out = f()
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    tape.backward(out)

    overall = max((float(np.abs(p.grad).max()) for p in params.values()
                   if p.grad is not None and p.size), default=0.0)
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = _scalar_eval(f, name)
            flat[i] = orig - epsilon
            lo = _scalar_eval(f, name)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * epsilon)
        if not p.size:
            errors[name] = 0.0
            continue
        # measured against the tensor's gradient scale: entries that are tiny
        # next to their neighbours carry only finite-difference roundoff
        denom = max(np.abs(analytic).max(), np.abs(numeric).max(), floor * overall, 1e-8)
        errors[name] = float(np.abs(analytic - numeric).max() / denom)
    return errors


def _scalar_eval(f, name):
    with no_grad():
        try:
            value = float(f().data)
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite value while perturbing {name}: {exc}") from None
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite value while perturbing {name}")
    return value


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor] | Iterable[Tensor],
               epsilon: float = 1e-5) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    if not isinstance(params, Mapping):
        params = {f"p{i}": p for i, p in enumerate(params)}
    errors = grad_errors(f, params, epsilon)
    return max(errors.values(), default=0.0)
