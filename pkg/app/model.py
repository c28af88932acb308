"""
TailNet forward pass.

    session ──GRU──> V ──attention──> [S_l; S_g]·W_4 = ĉ
                     │
                     └─tail encoding──> preference attention ──> S_p
                                                                  │
                         R_head = σ(S_p), R_tail = 1 - R_head  <──┘

    ŷ = softmax(ĉ ⊙ R), where R_j is R_head for head items and R_tail for tail items.

The preference mechanism only reads latent session states, so any encoder can
feed it; see PreferenceMechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from app.config import LOG_EPS
from app.errors import DimensionError, UsageError
from app.ingest import ItemCatalog
from app.metrics import Recommender
from app.numkernel import (
    Tape,
    Tensor,
    add,
    affine,
    as_tensor,
    bce,
    concat,
    hadamard,
    one_minus,
    project,
    row,
    scale,
    sigmoid,
    softmax,
    tanh,
    tensor,
)

Weights = Mapping[str, Tensor]

BIAS_NAMES = frozenset({"b", "b_m"})
PM_NAMES = ("W_0m", "W_1m", "W_2m", "b_m", "W_3")


def param_shapes(d: int, num_items: int) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor, in declared (serialisation) order."""
    return {
        "E": (num_items, d),
        "W_r": (d, 2 * d),
        "W_z": (d, 2 * d),
        "W_h": (d, 2 * d),
        "W_0": (1, d),
        "W_1": (d, d),
        "W_2": (d, d),
        "b": (d,),
        "W_4": (2 * d, num_items),
        "W_0m": (1, d),
        "W_1m": (d, d),
        "W_2m": (d, d),
        "b_m": (d,),
        "W_3": (2 * d, 1),
    }


@dataclass(eq=False)
class ModelParams:
    d: int
    num_items: int
    tensors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        shapes = param_shapes(self.d, self.num_items)
        if list(self.tensors) != list(shapes):
            raise DimensionError(f"Parameter names {list(self.tensors)} != {list(shapes)}")
        for name, shape in shapes.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise DimensionError(f"Parameter {name!r} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"Parameter {name!r} holds non-finite values")

    @classmethod
    def initialize(cls, d: int, num_items: int, rng: np.random.Generator) -> ModelParams:
        """Uniform on [-1/√d, 1/√d]; biases start at zero."""
        bound = 1.0 / math.sqrt(d)
        tensors = {}
        for name, shape in param_shapes(d, num_items).items():
            if name in BIAS_NAMES:
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(d=d, num_items=num_items, tensors=tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> ModelParams:
        return ModelParams(self.d, self.num_items, {k: v.copy() for k, v in self.tensors.items()})

    def norm(self) -> float:
        return math.sqrt(sum(float(np.sum(v * v)) for v in self.tensors.values()))

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        return {name: tape.leaf(name, value) for name, value in self.tensors.items()}


def _weights(params: ModelParams | Weights) -> Weights:
    if isinstance(params, ModelParams):
        return {name: Tensor(value, name=name) for name, value in params.tensors.items()}
    return params


@dataclass
class GruGates:
    r: np.ndarray
    z: np.ndarray
    candidate: np.ndarray


@dataclass
class SessionEncoding:
    rows: list[Tensor]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([r.value for r in self.rows])


@dataclass
class RectificationFactors:
    r_head: Tensor
    r_tail: Tensor

    @classmethod
    def constant(cls, r_head: float) -> RectificationFactors:
        head = tensor([r_head])
        return cls(head, one_minus(head))

    @property
    def head(self) -> float:
        return self.r_head.item()

    @property
    def tail(self) -> float:
        return self.r_tail.item()


@dataclass
class ForwardTrace:
    tape: Tape | None = None
    gates: list[GruGates] = field(default_factory=list)
    states: np.ndarray | None = None
    alpha: list[float] = field(default_factory=list)
    alpha_m: list[float] = field(default_factory=list)
    s_l: np.ndarray | None = None
    s_g: np.ndarray | None = None
    s_l_m: np.ndarray | None = None
    s_g_m: np.ndarray | None = None
    s_p: float | None = None
    c_hat: np.ndarray | None = None
    r: np.ndarray | None = None
    r_head: float | None = None
    r_tail: float | None = None
    y_hat: np.ndarray | None = None
    loss: float | None = None
    loss_ref: Tensor | None = None


class PreferenceMechanism(Protocol):
    """Maps tail-encoded latent session states to rectification factors."""

    def __call__(
        self,
        encoding: SessionEncoding,
        params: ModelParams | Weights,
        trace: ForwardTrace | None = None,
    ) -> RectificationFactors: ...


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def gru_step(
    v_prev: Tensor | np.ndarray,
    item: int,
    params: ModelParams | Weights,
    trace: ForwardTrace | None = None,
) -> Tensor:
    """One bias-free GRU step on [v_prev; emb(item)]."""
    w = _weights(params)
    v_prev = as_tensor(v_prev)
    emb = row(w["E"], item)
    x = concat(v_prev, emb)
    r = sigmoid(affine(w["W_r"], x))
    z = sigmoid(affine(w["W_z"], x))
    candidate = tanh(affine(w["W_h"], concat(hadamard(r, v_prev), emb)))
    v = add(hadamard(one_minus(z), v_prev), hadamard(z, candidate))
    if trace is not None:
        trace.gates.append(GruGates(r.value, z.value, candidate.value))
    return v


def encode_session(
    session: Sequence[int], params: ModelParams | Weights, trace: ForwardTrace | None = None
) -> SessionEncoding:
    if len(session) == 0:
        raise UsageError("Cannot encode an empty session")
    w = _weights(params)
    v = tensor(np.zeros(w["E"].shape[1]))
    rows = []
    for item in session:
        v = gru_step(v, int(item), w, trace)
        rows.append(v)
    encoding = SessionEncoding(rows)
    if trace is not None:
        trace.states = encoding.matrix
    return encoding


def tail_encode(
    encoding: SessionEncoding, catalog: ItemCatalog, session: Sequence[int]
) -> SessionEncoding:
    """Add a vector of ones to the states of tail items; head states are unchanged."""
    if len(encoding) != len(session):
        raise DimensionError(f"Encoding has {len(encoding)} rows, session has {len(session)} items")
    rows = []
    for v, item in zip(encoding.rows, session):
        rows.append(add(v, tensor(np.ones(v.shape))) if catalog.is_tail[item] else v)
    return SessionEncoding(rows)


# ---------------------------------------------------------------------------
# Attention pooling
# ---------------------------------------------------------------------------

def _attend(
    rows: list[Tensor], W0: Tensor, W1: Tensor, W2: Tensor, b: Tensor
) -> tuple[Tensor, Tensor, list[Tensor]]:
    """α_i = W0·tanh(W1·v_t + W2·v_i + b); returns (S_l = v_t, S_g = Σ α_i·v_i, α)."""
    last = rows[-1]
    query = affine(W1, last, b)
    s_g = None
    alphas = []
    for v in rows:
        a = affine(W0, tanh(add(query, affine(W2, v))))
        alphas.append(a)
        term = scale(v, a)
        s_g = term if s_g is None else add(s_g, term)
    return last, s_g, alphas


def preference_factors(
    encoding: SessionEncoding, params: ModelParams | Weights, trace: ForwardTrace | None = None
) -> RectificationFactors:
    """Attention preference mechanism over tail-encoded states."""
    if len(encoding) == 0:
        raise UsageError("Preference mechanism needs a non-empty session")
    w = _weights(params)
    s_l, s_g, alphas = _attend(encoding.rows, w["W_0m"], w["W_1m"], w["W_2m"], w["b_m"])
    s_p = project(concat(s_l, s_g), w["W_3"])
    r_head = sigmoid(s_p)
    factors = RectificationFactors(r_head, one_minus(r_head))
    if trace is not None:
        trace.alpha_m = [a.item() for a in alphas]
        trace.s_l_m, trace.s_g_m, trace.s_p = s_l.value, s_g.value, s_p.item()
        trace.r_head, trace.r_tail = factors.head, factors.tail
    return factors


def pool_and_score(
    encoding: SessionEncoding, params: ModelParams | Weights, trace: ForwardTrace | None = None
) -> Tensor:
    """Item scores before softmax, ĉ = [S_l; S_g]·W_4, computed on the raw states."""
    if len(encoding) == 0:
        raise UsageError("Scoring needs a non-empty session")
    w = _weights(params)
    s_l, s_g, alphas = _attend(encoding.rows, w["W_0"], w["W_1"], w["W_2"], w["b"])
    c_hat = project(concat(s_l, s_g), w["W_4"])
    if trace is not None:
        trace.alpha = [a.item() for a in alphas]
        trace.s_l, trace.s_g, trace.c_hat = s_l.value, s_g.value, c_hat.value
    return c_hat


# ---------------------------------------------------------------------------
# Soft adjustment and loss
# ---------------------------------------------------------------------------

def soft_adjust(
    c_hat: Tensor,
    factors: RectificationFactors,
    catalog: ItemCatalog,
    trace: ForwardTrace | None = None,
) -> Tensor:
    """
    ŷ = softmax(ĉ ⊙ R).

    Applied literally: a negative score multiplied by the smaller factor moves
    up, not down.
    """
    c_hat = as_tensor(c_hat)
    if c_hat.shape != (catalog.num_items,):
        raise DimensionError(f"Scores {c_hat.shape} do not match {catalog.num_items} items")
    R = add(
        scale(tensor(catalog.head_mask), factors.r_head),
        scale(tensor(catalog.tail_mask), factors.r_tail),
    )
    y_hat = softmax(hadamard(c_hat, R))
    if trace is not None:
        trace.r, trace.y_hat = R.value, y_hat.value
    return y_hat


def loss(y_hat: Tensor | np.ndarray, target: int) -> Tensor:
    """Binary cross-entropy summed over every item, y one-hot at `target`."""
    return bce(as_tensor(y_hat), int(target), LOG_EPS)


# ---------------------------------------------------------------------------
# Full pass
# ---------------------------------------------------------------------------

def run(
    session: Sequence[int],
    params: ModelParams,
    catalog: ItemCatalog,
    use_pm: bool = True,
    target: int | None = None,
    record: bool = True,
    preference: PreferenceMechanism = preference_factors,
) -> ForwardTrace:
    if params.num_items != catalog.num_items:
        raise DimensionError(f"Model has {params.num_items} items, catalog {catalog.num_items}")
    tape = Tape(record=record)
    w = params.bind(tape)
    trace = ForwardTrace(tape=tape)

    encoding = encode_session(session, w, trace)
    c_hat = pool_and_score(encoding, w, trace)
    if use_pm:
        factors = preference(tail_encode(encoding, catalog, session), w, trace)
        y_hat = soft_adjust(c_hat, factors, catalog, trace)
    else:
        y_hat = softmax(c_hat)
        trace.r, trace.y_hat = np.ones(catalog.num_items), y_hat.value

    if target is not None:
        trace.loss_ref = loss(y_hat, target)
        trace.loss = trace.loss_ref.item()
    return trace


def forward(
    session: Sequence[int],
    target: int,
    params: ModelParams,
    catalog: ItemCatalog,
    use_pm: bool = True,
    preference: PreferenceMechanism = preference_factors,
) -> tuple[float, np.ndarray, ForwardTrace]:
    """Loss, ŷ and the trace (with its recording tape, ready for backward)."""
    trace = run(session, params, catalog, use_pm, target=target, record=True, preference=preference)
    return trace.loss, trace.y_hat, trace


def infer(
    session: Sequence[int], params: ModelParams, catalog: ItemCatalog, use_pm: bool = True
) -> ForwardTrace:
    """Non-recording pass for scoring."""
    return run(session, params, catalog, use_pm, target=None, record=False)


class TailNetRecommender(Recommender):
    def __init__(self, params: ModelParams, catalog: ItemCatalog, use_pm: bool = True) -> None:
        self.params = params
        self.catalog = catalog
        self.use_pm = use_pm

    def score(self, prefix: Sequence[int]) -> np.ndarray:
        return infer(prefix, self.params, self.catalog, self.use_pm).y_hat
