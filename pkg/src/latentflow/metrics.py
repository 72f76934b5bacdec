"""Wasserstein-2 between equal-size point sets, field L2 errors, Lipschitz probes."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .oracle import OracleField, interpolate
from .tensor import ContractError

MAX_ASSIGNMENT = 4096


def _points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ContractError("expected a nonempty (n, d) point set")
    return a


def w2_exact(a, b) -> float:
    """Exact W2 between uniform empirical measures of equal size via optimal assignment."""
    a, b = _points(a), _points(b)
    if a.shape != b.shape:
        raise ContractError(f"w2_exact needs equal-size sets of equal dim, got {a.shape} vs {b.shape}")
    if a.shape[0] > MAX_ASSIGNMENT:
        raise ContractError(f"at most {MAX_ASSIGNMENT} points supported")
    cost = cdist(a, b, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(max(cost[rows, cols].mean(), 0.0))


def w2_coupling(a, b) -> float:
    """RMS distance under the given pairing a[i] <-> b[i]; an upper bound on W2."""
    a, b = _points(a), _points(b)
    if a.shape != b.shape:
        raise ContractError("coupled sets must have equal shape")
    return math.sqrt(((a - b) ** 2).sum(axis=1).mean())


def resample(points, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points with replacement; used to equalize sizes before ``w2_exact``."""
    points = _points(points)
    return points[rng.choice(points.shape[0], size=n, replace=points.shape[0] < n)]


def _chunk_rngs(seed: int, chunks: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(chunks)]


def interpolant_samples(oracle: OracleField, mc: int, seed: int, chunk: int = 8192):
    """Yield (t, x0, x1, x_t) chunks with t ~ U[0,T], x0 ~ N(0,I), x1 ~ target."""
    n_chunks = max(1, math.ceil(mc / chunk))
    remaining = mc
    for rng in _chunk_rngs(seed, n_chunks):
        size = min(chunk, remaining)
        remaining -= size
        t = rng.uniform(0.0, oracle.horizon, size=size)
        x0 = rng.standard_normal((size, oracle.dim))
        x1 = oracle.target.sample(size, rng)
        yield t, x0, x1, interpolate(x0, x1, t)


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def l2_velocity_error(
    v: Callable, oracle: OracleField, mc: int = 100_000, seed: int = 0
) -> tuple[float, float]:
    """Monte-Carlo ``(1/T) int_0^T E|v - v*|^2(X_t) dt`` with its standard error."""
    if mc < 1:
        raise ContractError("mc must be >= 1")
    parts = []
    for t, _, _, xt in interpolant_samples(oracle, mc, seed):
        diff = np.asarray(v(xt, t)) - oracle(xt, t)
        parts.append((diff * diff).sum(axis=1))
    return _mean_stderr(np.concatenate(parts))


def measure_lipschitz(
    f: Callable,
    lo,
    hi,
    pairs: int = 1000,
    seed: int = 0,
    horizon: float | None = None,
    refine: int = 8,
) -> tuple[float, float]:
    """Sampled Lipschitz constants ``(gamma_x, gamma_t)`` of ``f`` on a box.

    With ``horizon`` given, ``f(x, t)`` is probed for ``t`` in ``[0, horizon]``
    (spatial quotients at a shared t, time quotients at a shared x). Otherwise
    ``f(x)`` is probed and ``gamma_t`` is 0. Every pair is also shrunk toward
    its midpoint ``refine`` times to pick up steeper local slopes.

    Pairs are drawn row by row, so a smaller budget probes a prefix of the
    pairs of a larger one and the estimates never decrease with ``pairs``.
    """
    if pairs < 1:
        raise ContractError("pairs must be >= 1")
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    dim = lo.shape[0]
    timed = horizon is not None
    u = np.random.default_rng(seed).uniform(size=(pairs, 2 * dim + 2))
    x1 = lo + (hi - lo) * u[:, :dim]
    x2 = lo + (hi - lo) * u[:, dim : 2 * dim]
    t = horizon * u[:, -2] if timed else None
    t2 = horizon * u[:, -1] if timed else None

    def call(x, tt):
        return np.asarray(f(x, tt) if timed else f(x), dtype=np.float64).reshape(x.shape[0], -1)

    def ratio(num, den):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    gx = 0.0
    a, b = x1, x2
    for level in range(refine + 1):
        if level:
            mid = 0.5 * (a + b)
            a, b = 0.5 * (a + mid), 0.5 * (b + mid)
        q = ratio(np.linalg.norm(call(a, t) - call(b, t), axis=1), np.linalg.norm(a - b, axis=1))
        gx = max(gx, float(q.max()))

    gt = 0.0
    if timed:
        ta, tb = t, t2
        for level in range(refine + 1):
            if level:
                mid = 0.5 * (ta + tb)
                ta, tb = 0.5 * (ta + mid), 0.5 * (tb + mid)
            q = ratio(np.linalg.norm(call(x1, ta) - call(x1, tb), axis=1), np.abs(ta - tb))
            gt = max(gt, float(q.max()))
    return gx, gt
