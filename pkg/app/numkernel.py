"""
Dense float64 primitives with tape-based reverse-mode differentiation.

A Tape records every primitive applied to tensors that live on it. Calling
`backward(tape, loss)` replays the records in reverse and returns one gradient
array per named leaf. Tapes are single-use: one forward, one backward.

There is no broadcasting. Vectors have shape (n,), matrices (m, n) and
scalars are 1-element vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from app.errors import DimensionError, NumericError, UsageError

logger = logging.getLogger(__name__)

Vjp = Callable[[np.ndarray], Sequence["np.ndarray | RowGrad | None"]]


@dataclass(frozen=True)
class RowGrad:
    """Sparse gradient touching a single row of a matrix input."""

    index: int
    grad: np.ndarray


class Tensor:
    __slots__ = ("value", "tape", "node", "name")

    def __init__(
        self, value: np.ndarray, tape: Tape | None = None, node: int = -1, name: str = ""
    ) -> None:
        self.value = value
        self.tape = tape
        self.node = node
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def _check_finite(value: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"Non-finite value produced by {what}")


def tensor(value: Sequence[float] | np.ndarray | float, checked: bool = True) -> Tensor:
    """A constant (no gradient) tensor."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 2:
        raise DimensionError(f"Tensors are vectors or matrices, got shape {arr.shape}")
    if checked:
        _check_finite(arr, "constant")
    return Tensor(arr)


def as_tensor(value: Tensor | np.ndarray | Sequence[float] | float) -> Tensor:
    return value if isinstance(value, Tensor) else tensor(value)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Vjp


class Tape:
    def __init__(self, record: bool = True, checked: bool = True) -> None:
        self.record = record
        self.checked = checked
        self._records: list[_Record] = []
        self._leaves: dict[str, Tensor] = {}
        self._next = 0
        self._consumed = False

    def _new_node(self) -> int:
        self._next += 1
        return self._next

    def leaf(self, name: str, value: np.ndarray) -> Tensor:
        """Register a named parameter; its gradient is returned by backward."""
        if name in self._leaves:
            raise UsageError(f"Leaf {name!r} registered twice on one tape")
        arr = np.asarray(value, dtype=np.float64)
        if self.checked:
            _check_finite(arr, f"leaf {name!r}")
        t = Tensor(arr, self, self._new_node(), name)
        self._leaves[name] = t
        return t

    def emit(self, op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp: Vjp) -> Tensor:
        """Append a primitive application. `vjp(g)` returns one gradient per input."""
        if self.checked:
            _check_finite(value, op)
        out = Tensor(value, self, self._new_node())
        if self.record:
            self._records.append(_Record(op, tuple(inputs), out, vjp))
        return out

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if self._consumed:
            raise UsageError("backward already ran on this tape")
        if not self.record:
            raise UsageError("backward needs a recording tape")
        if loss.tape is not self:
            raise UsageError("loss does not belong to this tape")
        if loss.value.size != 1:
            raise DimensionError(f"loss must be a scalar, got shape {loss.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
        owned: set[int] = set()  # arrays safe to update in place
        for rec in reversed(self._records):
            g = grads.pop(rec.output.node, None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or inp.tape is not self:
                    continue
                if isinstance(gi, RowGrad):
                    if inp.node not in owned:
                        acc = grads.get(inp.node)
                        grads[inp.node] = np.zeros_like(inp.value) if acc is None else acc.copy()
                        owned.add(inp.node)
                    grads[inp.node][gi.index] += gi.grad
                elif inp.node in grads:
                    grads[inp.node] = grads[inp.node] + gi
                else:
                    grads[inp.node] = gi
        self._records.clear()

        return {
            name: grads.get(leaf.node, np.zeros_like(leaf.value))
            for name, leaf in self._leaves.items()
        }


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients of `loss` for every leaf on `tape`."""
    return tape.backward(loss)


def _tape_of(*tensors: Tensor) -> Tape | None:
    tapes = {id(t.tape): t.tape for t in tensors if t.tape is not None}
    if len(tapes) > 1:
        raise UsageError("inputs live on different tapes")
    return next(iter(tapes.values()), None)


def _apply(op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp: Vjp) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape.emit(op, inputs, value, vjp)


def _require_vector(t: Tensor, op: str) -> None:
    if t.value.ndim != 1:
        raise DimensionError(f"{op}: expected a vector, got shape {t.shape}")
    if t.value.size == 0:
        raise DimensionError(f"{op}: empty vector")


def _same_shape(u: Tensor, v: Tensor, op: str) -> None:
    if u.shape != v.shape:
        raise DimensionError(f"{op}: shapes {u.shape} and {v.shape} differ")
    if u.value.size == 0:
        raise DimensionError(f"{op}: empty vector")


# ---------------------------------------------------------------------------
# Linear maps
# ---------------------------------------------------------------------------

def affine(W: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """y = W·x (+ b)."""
    _require_vector(x, "affine")
    if W.value.ndim != 2 or W.shape[1] != x.shape[0]:
        raise DimensionError(f"affine: W {W.shape} cannot multiply x {x.shape}")
    value = W.value @ x.value
    if b is not None:
        if b.shape != (W.shape[0],):
            raise DimensionError(f"affine: bias {b.shape} does not match W {W.shape}")
        value = value + b.value
    w, xv = W.value, x.value

    def vjp(g: np.ndarray):
        return (np.outer(g, xv), w.T @ g) + ((g,) if b is not None else ())

    inputs = (W, x) if b is None else (W, x, b)
    return _apply("affine", inputs, value, vjp)


def project(x: Tensor, W: Tensor) -> Tensor:
    """y = xᵀ·W for a row vector x (m,) and W (m, n)."""
    _require_vector(x, "project")
    if W.value.ndim != 2 or W.shape[0] != x.shape[0]:
        raise DimensionError(f"project: x {x.shape} cannot multiply W {W.shape}")
    xv, w = x.value, W.value

    def vjp(g: np.ndarray):
        return w @ g, np.outer(xv, g)

    return _apply("project", (x, W), xv @ w, vjp)


def row(E: Tensor, index: int) -> Tensor:
    """Row lookup E[index] (embedding), with a sparse row gradient."""
    if E.value.ndim != 2:
        raise DimensionError(f"row: expected a matrix, got shape {E.shape}")
    if not 0 <= index < E.shape[0]:
        raise UsageError(f"row: index {index} out of range for {E.shape[0]} rows")

    def vjp(g: np.ndarray):
        return (RowGrad(index, g),)

    return _apply("row", (E,), E.value[index].copy(), vjp)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def sigmoid(v: Tensor) -> Tensor:
    _require_vector(v, "sigmoid")
    s = expit(v.value)

    def vjp(g: np.ndarray):
        return (g * s * (1.0 - s),)

    return _apply("sigmoid", (v,), s, vjp)


def tanh(v: Tensor) -> Tensor:
    _require_vector(v, "tanh")
    y = np.tanh(v.value)

    def vjp(g: np.ndarray):
        return (g * (1.0 - y * y),)

    return _apply("tanh", (v,), y, vjp)


def softmax(v: Tensor) -> Tensor:
    _require_vector(v, "softmax")
    e = np.exp(v.value - v.value.max())
    p = e / e.sum()

    def vjp(g: np.ndarray):
        return (p * (g - np.dot(g, p)),)

    return _apply("softmax", (v,), p, vjp)


def hadamard(u: Tensor, v: Tensor) -> Tensor:
    _same_shape(u, v, "hadamard")
    uv, vv = u.value, v.value

    def vjp(g: np.ndarray):
        return g * vv, g * uv

    return _apply("hadamard", (u, v), uv * vv, vjp)


def add(u: Tensor, v: Tensor) -> Tensor:
    _same_shape(u, v, "add")
    return _apply("add", (u, v), u.value + v.value, lambda g: (g, g))


def sub(u: Tensor, v: Tensor) -> Tensor:
    _same_shape(u, v, "sub")
    return _apply("sub", (u, v), u.value - v.value, lambda g: (g, -g))


def one_minus(v: Tensor) -> Tensor:
    _require_vector(v, "one_minus")
    return _apply("one_minus", (v,), 1.0 - v.value, lambda g: (-g,))


def scale(v: Tensor, s: Tensor) -> Tensor:
    """v · s for a vector v and a 1-element tensor s."""
    _require_vector(v, "scale")
    if s.shape != (1,):
        raise DimensionError(f"scale: factor must have shape (1,), got {s.shape}")
    vv, sv = v.value, s.value[0]

    def vjp(g: np.ndarray):
        return g * sv, np.array([np.dot(g, vv)])

    return _apply("scale", (v, s), vv * sv, vjp)


def concat(u: Tensor, v: Tensor) -> Tensor:
    _require_vector(u, "concat")
    _require_vector(v, "concat")
    n = u.shape[0]

    def vjp(g: np.ndarray):
        return g[:n], g[n:]

    return _apply("concat", (u, v), np.concatenate([u.value, v.value]), vjp)


def total(v: Tensor) -> Tensor:
    """Sum of all entries as a 1-element tensor."""
    _require_vector(v, "total")
    shape = v.shape
    return _apply("total", (v,), np.array([v.value.sum()]), lambda g: (np.full(shape, g[0]),))


def bce(p: Tensor, target: int, eps: float) -> Tensor:
    """
    -Σ_i [y_i log p_i + (1 - y_i) log(1 - p_i)] with y one-hot at `target`.

    p is clamped to [eps, 1 - eps]; clamped entries get zero gradient.
    """
    _require_vector(p, "bce")
    if not 0 <= target < p.shape[0]:
        raise UsageError(f"bce: target {target} out of range for {p.shape[0]} items")
    c = np.clip(p.value, eps, 1.0 - eps)
    inside = (p.value >= eps) & (p.value <= 1.0 - eps)
    y = np.zeros_like(c)
    y[target] = 1.0
    value = -(np.sum(y * np.log(c) + (1.0 - y) * np.log1p(-c)))

    def vjp(g: np.ndarray):
        d = np.where(y > 0, -1.0 / c, 1.0 / (1.0 - c))
        return (g[0] * d * inside,)

    return _apply("bce", (p,), np.array([value]), vjp)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

ForwardFn = Callable[[Tape, Mapping[str, Tensor]], Tensor]


def _run(forward: ForwardFn, params: Mapping[str, np.ndarray], record: bool) -> tuple[Tape, Tensor]:
    tape = Tape(record=record, checked=False)
    leaves = {name: tape.leaf(name, value) for name, value in params.items()}
    return tape, forward(tape, leaves)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def fd_check(
    forward: ForwardFn,
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tolerance: float | None = None,
) -> float:
    """
    Compare reverse-mode gradients with central finite differences.

    `forward(tape, leaves)` must be deterministic and return a scalar tensor.
    Returns the worst relative error |a-b| / max(1e-8, |a|+|b|) over every
    parameter entry.
    """
    params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    tape, loss = _run(forward, params, record=True)
    analytic = backward(tape, loss)

    worst, where = 0.0, ""
    for name, value in params.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + h
            up = _run(forward, params, record=False)[1].item()
            flat[k] = original - h
            down = _run(forward, params, record=False)[1].item()
            flat[k] = original
            err = relative_error(float(grad[k]), (up - down) / (2.0 * h))
            if err > worst:
                worst, where = err, f"{name}[{k}]"

    if tolerance is not None and worst > tolerance:
        logger.warning("Gradient check failed: relative error %.3g at %s", worst, where)
    return worst
