"""Hand-built transformer weights that compute monomials and polynomials exactly.

Every construction works on a block of ``d_patch + l + 4`` rows per head
(0-based row names below):

    0 .. d_patch-1           token content x_j
    ONE   = d_patch          constant 1
    POS_j = d_patch + 1 + j  one-hot position of token j
    A     = d_patch + l + 1  scratch operand
    ACC   = d_patch + l + 2  running product (read out at the end)
    C     = d_patch + l + 3  attention output slot

Token and component indices in this module are 0-based.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .tensor import ContractError
from .transformer import TransformerNet, TransformerSpec, attention_layer, embed_input, patchify

MultiIndex = tuple[int, ...]

ACCUMULATOR_VARIANTS = ("move", "keep", "copy-back", "clear")


@dataclass(frozen=True)
class Layout:
    d_patch: int
    tokens: int

    def __post_init__(self):
        if self.d_patch < 1 or self.tokens < 1:
            raise ContractError("d_patch and tokens must be >= 1")

    @property
    def block(self) -> int:
        return self.d_patch + self.tokens + 4

    @property
    def one(self) -> int:
        return self.d_patch

    def pos(self, j: int) -> int:
        return self.d_patch + 1 + j

    @property
    def a(self) -> int:
        return self.d_patch + self.tokens + 1

    @property
    def acc(self) -> int:
        return self.d_patch + self.tokens + 2

    @property
    def c(self) -> int:
        return self.d_patch + self.tokens + 3

    @property
    def d_in(self) -> int:
        return self.d_patch * self.tokens


@dataclass
class AttentionWeights:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray

    def nonzero_count(self) -> int:
        return sum(int(np.count_nonzero(w)) for w in (self.W_Q, self.W_K, self.W_V, self.W_O))

    def apply(self, Z: np.ndarray) -> np.ndarray:
        return attention_layer(Z, self.W_Q, self.W_K, self.W_V, self.W_O).data


@dataclass
class FeedForwardWeights:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def nonzero_count(self) -> int:
        return sum(int(np.count_nonzero(w)) for w in (self.W1, self.b1, self.W2, self.b2))

    def apply(self, Y: np.ndarray) -> np.ndarray:
        hidden = np.maximum(self.W1 @ Y + self.b1[:, None], 0.0)
        return Y + self.W2 @ hidden + self.b2[:, None]


@dataclass
class ConstructionReport:
    layers: int
    heads: int
    nonzero: int
    max_intermediate: float
    layer_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


# -- single layers -------------------------------------------------------


def _attention_zeros(layout: Layout, d_k: int = 2) -> AttentionWeights:
    m = layout.block
    return AttentionWeights(np.zeros((d_k, m)), np.zeros((d_k, m)), np.zeros((m, m)), np.eye(m))


def build_linear_reader(layout: Layout, j: int, k: int, u: float, B: float) -> AttentionWeights:
    """Attention that writes ``x_j^(k) - u`` into row A of token 0.

    Requires ``B > 2 max |x|`` on the inputs it will see.
    """
    if not 0 <= j < layout.tokens or not 0 <= k < layout.d_patch:
        raise ContractError(f"token {j} / component {k} out of range for {layout}")
    w = _attention_zeros(layout)
    w.W_Q[0, layout.pos(0)] = 1.0
    w.W_Q[1, layout.pos(0)] = B
    w.W_K[0, k] = 1.0
    w.W_K[0, layout.one] = -u - B
    w.W_K[1, layout.pos(j)] = 1.0
    w.W_V[layout.a, layout.one] = 1.0
    return w


def build_multiplier(layout: Layout, j: int, B: float) -> AttentionWeights:
    """Attention that writes ``acc_0 * a_j + B`` into row C of token 0.

    Requires ``B > 2 |acc_0| max_r |a_r|``.
    """
    if not 0 <= j < layout.tokens:
        raise ContractError(f"token {j} out of range for {layout}")
    w = _attention_zeros(layout)
    w.W_Q[0, layout.acc] = 1.0
    w.W_Q[1, layout.pos(0)] = B
    w.W_K[0, layout.a] = 1.0
    w.W_K[1, layout.pos(j)] = 1.0
    w.W_V[layout.c, layout.one] = 1.0
    return w


def build_squarer(layout: Layout) -> AttentionWeights:
    """Attention that writes ``a^2`` into row C of token 0 (row A nonzero only there)."""
    w = _attention_zeros(layout, d_k=1)
    w.W_Q[0, layout.a] = 1.0
    w.W_K[0, layout.a] = 1.0
    w.W_V[layout.c, layout.one] = 1.0
    return w


def build_accumulator(
    layout: Layout, alpha: float, B: float, variant: str = "move", d_ff: int = 8
) -> FeedForwardWeights:
    """Token-wise bookkeeping via ``u = relu(u) - relu(-u)``.

    ``move``      ACC <- alpha (C - B), A <- 0, C <- 0
    ``keep``      ACC <- alpha (C - B), A kept, C <- 0
    ``copy-back`` A <- C, ACC kept, C <- 0
    ``clear``     A <- 0, ACC kept, C <- 0
    """
    if variant not in ACCUMULATOR_VARIANTS:
        raise ContractError(f"unknown accumulator variant {variant!r}")
    if d_ff < 8:
        raise ContractError(f"d_ff={d_ff} < 8")
    m = layout.block
    W1, W2 = np.zeros((d_ff, m)), np.zeros((m, d_ff))
    a, acc, c, one = layout.a, layout.acc, layout.c, layout.one

    def pair(unit: int, row: int):
        W1[unit, row], W1[unit + 1, row] = 1.0, -1.0

    # units 0,1: +-A   units 2,3: +-ACC   units 4,5: +-(C - B)   units 6,7: +-C
    if variant in ("move", "clear", "copy-back"):
        pair(0, a)
        W2[a, 0], W2[a, 1] = -1.0, 1.0
    if variant in ("move", "keep"):
        pair(2, acc)
        W2[acc, 2], W2[acc, 3] = -1.0, 1.0
        pair(4, c)
        W1[4, one], W1[5, one] = -B, B
        W2[acc, 4], W2[acc, 5] = alpha, -alpha
    pair(6, c)
    W2[c, 6], W2[c, 7] = -1.0, 1.0
    if variant == "copy-back":
        W2[a, 6], W2[a, 7] = 1.0, -1.0
    return FeedForwardWeights(W1, np.zeros(d_ff), W2, np.zeros(m))


def identity_feedforward(layout: Layout, d_ff: int = 8) -> FeedForwardWeights:
    m = layout.block
    return FeedForwardWeights(np.zeros((d_ff, m)), np.zeros(d_ff), np.zeros((m, d_ff)), np.zeros(m))


def initial_state(layout: Layout, X: np.ndarray, b1: float = 1.0) -> np.ndarray:
    """The embedded block Z_0 for one head, X of shape (d_patch, l)."""
    Z = np.zeros((layout.block, layout.tokens))
    Z[: layout.d_patch] = X
    Z[layout.one] = 1.0
    Z[layout.one + 1 : layout.one + 1 + layout.tokens] = np.eye(layout.tokens)
    Z[layout.acc] = b1
    return Z


# -- monomials -----------------------------------------------------------


def _bits(n: int) -> list[int]:
    return [int(b) for b in reversed(bin(n)[2:])]


def monomial_schedule(
    layout: Layout, n: MultiIndex, b1: float = 1.0, B_read: float | None = None
) -> list[tuple[str, AttentionWeights, FeedForwardWeights]]:
    """Layer pairs computing ``b1 * prod x_i^n_i`` into ACC of token 0 by binary exponentiation."""
    n = tuple(int(v) for v in n)
    if len(n) != layout.d_in:
        raise ContractError(f"multi-index length {len(n)} != d_patch*l = {layout.d_in}")
    if any(v < 0 for v in n):
        raise ContractError("multi-index entries must be nonnegative")
    # inputs live in [0,1], so every operand stays in [0,1] and |acc| <= |b1|
    B_read = 4.0 * (1.0 + 1.0) if B_read is None else B_read
    B_mul = 4.0 * (1.0 + abs(b1))
    pairs = []
    for idx, power in enumerate(n):
        if power == 0:
            continue
        k_token, k_comp = divmod(idx, layout.d_patch)
        bits = _bits(power)
        top = len(bits) - 1
        pairs.append(("reader", build_linear_reader(layout, k_token, k_comp, 0.0, B_read), identity_feedforward(layout)))
        for p, bit in enumerate(bits):
            last = p == top
            if p > 0:
                variant = "clear" if last and not bit else "copy-back"
                pairs.append(("squarer", build_squarer(layout), build_accumulator(layout, 1.0, 0.0, variant)))
            if bit:
                variant = "move" if last else "keep"
                pairs.append(("multiplier", build_multiplier(layout, 0, B_mul), build_accumulator(layout, 1.0, B_mul, variant)))
    if not pairs:
        pairs.append(("id", _attention_zeros(layout), identity_feedforward(layout)))
        pairs[0][1].W_O[:] = 0.0
    return pairs


def layer_bound(layout: Layout, degree_cap: int) -> float:
    return 2 * layout.tokens * layout.d_patch * (math.log2(max(degree_cap, 2)) + 1)


def _stack_heads(
    layout: Layout, schedules: Sequence[list], b1s: Sequence[float], coefficients: Sequence[float] | None
) -> TransformerNet:
    h = len(schedules)
    m = layout.block
    n_layers = max(len(s) for s in schedules)
    spec = TransformerSpec(
        d_in=layout.d_in,
        d_out=1 if coefficients is not None else h,
        d_patch=layout.d_patch,
        tokens=layout.tokens,
        n_layers=n_layers,
        heads=h,
        d_k=2,
        d_v=m,
        d_ff=8 * h,
    )
    net = TransformerNet(spec)
    P = net.params
    for s in range(h):
        rows = slice(s * m, (s + 1) * m)
        P["A_in"][rows.start : rows.start + layout.d_patch, : layout.d_patch] = np.eye(layout.d_patch)
        P["A_in"][rows.start + layout.one + 1 : rows.start + layout.one + 1 + layout.tokens, layout.d_patch :] = np.eye(layout.tokens)
        P["b_in"][rows.start + layout.one] = 1.0
        P["b_in"][rows.start + layout.acc] = b1s[s]
        for r, (_, att, ff) in enumerate(schedules[s]):
            dk = att.W_Q.shape[0]
            P[f"L{r}.W_Q"][s, :dk, rows] = att.W_Q
            P[f"L{r}.W_K"][s, :dk, rows] = att.W_K
            P[f"L{r}.W_V"][s, :, rows] = att.W_V
            P[f"L{r}.W_O"][s, rows, :] = att.W_O
            units = slice(s * 8, s * 8 + 8)
            P[f"L{r}.W1"][units, rows] = ff.W1
            P[f"L{r}.b1"][units] = ff.b1
            P[f"L{r}.W2"][rows, units] = ff.W2
            P[f"L{r}.b2"][rows] = ff.b2
        if coefficients is None:
            P["A_out"][s, rows.start + layout.acc] = 1.0
        else:
            P["A_out"][0, rows.start + layout.acc] = coefficients[s]
    return net


def trace_states(net: TransformerNet, x: np.ndarray) -> list[np.ndarray]:
    """Intermediate Z matrices (embedding, then after each attention/feedforward) for a batch."""
    spec, P = net.spec, net.params
    Z = embed_input(patchify(x, spec.d_patch, spec.tokens), P["A_in"], P["b_in"]).data
    states = [Z]
    for r in range(spec.n_layers):
        Z = attention_layer(Z, P[f"L{r}.W_Q"], P[f"L{r}.W_K"], P[f"L{r}.W_V"], P[f"L{r}.W_O"]).data
        states.append(Z)
        hidden = np.maximum(P[f"L{r}.W1"] @ Z + P[f"L{r}.b1"][:, None], 0.0)
        Z = Z + P[f"L{r}.W2"] @ hidden + P[f"L{r}.b2"][:, None]
        states.append(Z)
    return states


def _report(net: TransformerNet, layout: Layout, degree_cap: int, probe: np.ndarray) -> ConstructionReport:
    peak = max(float(np.abs(z).max()) for z in trace_states(net, probe))
    return ConstructionReport(
        layers=net.spec.n_layers,
        heads=net.spec.heads,
        nonzero=net.nonzero_count(),
        max_intermediate=peak,
        layer_bound=layer_bound(layout, degree_cap),
    )


def _probe_grid(layout: Layout, per_axis: int = 5) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, per_axis)
    return np.array(list(itertools.product(axis, repeat=layout.d_in)))


def build_monomial_net(
    layout: Layout, n: MultiIndex, b1: float = 1.0
) -> tuple[TransformerNet, ConstructionReport]:
    """Single-head network with ``forward(x) = b1 * eta_n(x)`` on [0,1]^d."""
    schedule = monomial_schedule(layout, n, b1)
    net = _stack_heads(layout, [schedule], [b1], None)
    return net, _report(net, layout, max(sum(n), 2), _probe_grid(layout))


def build_parallel_monomials(
    layout: Layout, indices: Sequence[MultiIndex], heads: Sequence[int] | None = None
) -> tuple[TransformerNet, ConstructionReport]:
    """One head per multi-index; output coordinate s reads head ``heads[s]``.

    ``heads`` is the injection from indices to head slots (identity by default).
    """
    indices = [tuple(int(v) for v in n) for n in indices]
    if not indices:
        raise ContractError("need at least one multi-index")
    heads = list(range(len(indices))) if heads is None else list(heads)
    if len(heads) != len(indices) or len(set(heads)) != len(heads):
        raise ContractError("head assignment must be an injection")
    if min(heads) < 0:
        raise ContractError("head slots must be nonnegative")
    h = max(heads) + 1
    schedules: list[list] = [[] for _ in range(h)]
    for n, s in zip(indices, heads):
        schedules[s] = monomial_schedule(layout, n)
    for s in range(h):
        if not schedules[s]:
            schedules[s] = monomial_schedule(layout, (0,) * layout.d_in)
    net = _stack_heads(layout, schedules, [1.0] * h, None)
    # readout s picks the head assigned to indices[s]; unused heads are not read
    A_out = np.zeros((len(indices), net.spec.d_model))
    for out, s in enumerate(heads):
        A_out[out, s * layout.block + layout.acc] = 1.0
    spec = TransformerSpec(**{**net.spec.to_dict(), "d_out": len(indices)})
    net = TransformerNet(spec, {**net.params, "A_out": A_out, "b_out": np.zeros(len(indices))})
    degree_cap = max(2, max(sum(n) for n in indices))
    return net, _report(net, layout, degree_cap, _probe_grid(layout))


def assemble_polynomial_approximator(
    layout: Layout, coeffs: Mapping[MultiIndex, float]
) -> TransformerNet:
    """Network with ``forward(x) = sum_n coeffs[n] * eta_n(x)`` on [0,1]^d."""
    if not coeffs:
        raise ContractError("empty coefficient map")
    indices = [tuple(int(v) for v in n) for n in coeffs]
    schedules = [monomial_schedule(layout, n) for n in indices]
    return _stack_heads(layout, schedules, [1.0] * len(indices), [float(coeffs[n]) for n in coeffs])


# -- polynomials ---------------------------------------------------------


def eta(x: np.ndarray, n: MultiIndex) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.prod(x ** np.asarray(n), axis=-1)


def multi_indices(dim: int, degree: int) -> list[MultiIndex]:
    """All multi-indices with total degree <= ``degree``, graded order."""
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            n = [0] * dim
            for i in combo:
                n[i] += 1
            out.append(tuple(n))
    return sorted(set(out), key=lambda n: (sum(n), tuple(-v for v in n)))


def evaluate_polynomial(coeffs: Mapping[MultiIndex, float], x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return sum(c * eta(x, n) for n, c in coeffs.items())


def fit_grid(dim: int) -> np.ndarray:
    per_axis = {1: 513, 2: 65}.get(dim)
    if per_axis is None:
        raise ContractError(f"no default fit grid for dim {dim}")
    axis = np.linspace(0.0, 1.0, per_axis)
    return np.array(list(itertools.product(axis, repeat=dim)))


def fit_polynomial(
    f: Callable[[np.ndarray], np.ndarray], dim: int, degree: int, grid: np.ndarray | None = None
) -> dict[MultiIndex, float]:
    """Least-squares coefficients of total degree <= ``degree`` on a dense grid."""
    grid = fit_grid(dim) if grid is None else np.asarray(grid, dtype=np.float64)
    indices = multi_indices(dim, degree)
    V = np.stack([eta(grid, n) for n in indices], axis=1)
    y = np.asarray(f(grid), dtype=np.float64).reshape(-1)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    return dict(zip(indices, coef.tolist()))


def coefficient_lipschitz_bound(coeffs: Mapping[MultiIndex, float]) -> float:
    """``sum |a_n| * ||n||_1``, a Lipschitz bound on [0,1]^d (in the l1 sense per coordinate)."""
    return float(sum(abs(c) * sum(n) for n, c in coeffs.items()))


def verify_construction(
    net: TransformerNet, reference: Callable[[np.ndarray], np.ndarray], grid: np.ndarray
) -> float:
    """Max |net(x) - reference(x)| over the grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid < 0.0) or np.any(grid > 1.0):
        raise ContractError("grid must lie in [0,1]^d")
    out = net(grid)
    ref = np.asarray(reference(grid), dtype=np.float64).reshape(out.shape)
    return float(np.max(np.abs(out - ref)))


def grid_points(dim: int, per_axis: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, per_axis)
    return np.array(list(itertools.product(axis, repeat=dim)))


# -- block budgets -------------------------------------------------------

BLOCK_BUDGETS: dict[str, Callable[[Layout], int]] = {
    "reader": lambda lay: lay.block + 6,
    "multiplier": lambda lay: lay.block + 5,
    "squarer": lambda lay: lay.block + 3,
    "accumulator": lambda lay: 18,
}


def block_reports(layout: Layout, rng: np.random.Generator) -> list[dict]:
    """Build each block's layer once, check its value contract on a random input, count nonzeros."""
    rows = []
    X = rng.uniform(0.0, 1.0, size=(layout.d_patch, layout.tokens))
    B = 4.0 * (1.0 + float(np.abs(X).max()))
    j, k = layout.tokens - 1, layout.d_patch - 1

    Z = initial_state(layout, X)
    w = build_linear_reader(layout, j, k, 0.0, B)
    got = w.apply(Z)[layout.a, 0]
    rows.append(_block_row("reader", layout, w.nonzero_count(), abs(got - X[k, j])))

    Z = initial_state(layout, X, b1=0.7)
    Z[layout.a] = X[0]
    w = build_multiplier(layout, j, 4.0 * (1.0 + 0.7))
    got = w.apply(Z)[layout.c, 0]
    rows.append(_block_row("multiplier", layout, w.nonzero_count(), abs(got - (0.7 * X[0, j] + 4.0 * 1.7))))

    Z = initial_state(layout, X)
    Z[layout.a, 0] = X[0, 0]
    w = build_squarer(layout)
    got = w.apply(Z)[layout.c, 0]
    rows.append(_block_row("squarer", layout, w.nonzero_count(), abs(got - X[0, 0] ** 2)))

    Y = initial_state(layout, X)
    Y[layout.a], Y[layout.acc], Y[layout.c] = 0.3, 0.2, 0.9 + B
    ff = build_accumulator(layout, 1.5, B, "move")
    out = ff.apply(Y)
    err = max(
        float(np.abs(out[layout.acc] - 1.5 * 0.9).max()),
        float(np.abs(out[layout.a]).max()),
        float(np.abs(out[layout.c]).max()),
    )
    rows.append(_block_row("accumulator", layout, ff.nonzero_count(), err))
    return rows


def _block_row(block: str, layout: Layout, nonzero: int, error: float) -> dict:
    budget = BLOCK_BUDGETS[block](layout)
    return {
        "block": block,
        "d_patch": layout.d_patch,
        "tokens": layout.tokens,
        "nonzero": nonzero,
        "budget": budget,
        "within_budget": nonzero <= budget,
        "max_error": float(error),
    }


def write_reports(rows: Iterable[Mapping], path) -> None:
    """One JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(dict(row), sort_keys=True) + "\n")
