"""Exact velocity field for discrete targets under the Gaussian interpolant.

With ``X_t = t X1 + sqrt(1 - t^2) X0`` and ``X1 ~ sum_j w_j delta_{a_j}`` the
posterior over atoms given ``X_t = x`` is a softmax of Gaussian log-kernels,
and the velocity field plus its derivatives are posterior moments.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .tensor import ContractError


@dataclass(frozen=True)
class DiscreteTarget:
    atoms: np.ndarray  # (k, d)
    weights: np.ndarray  # (k,)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if atoms.shape[0] != weights.shape[0]:
            raise ContractError(f"{atoms.shape[0]} atoms but {weights.shape[0]} weights")
        if atoms.shape[0] == 0:
            raise ContractError("target needs at least one atom")
        if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ContractError("weights must be nonnegative and sum to 1")
        if np.any(atoms < 0.0) or np.any(atoms > 1.0):
            raise ContractError("atoms must lie in [0,1]^d")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights / weights.sum())

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def uniform(cls, atoms) -> "DiscreteTarget":
        atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
        return cls(atoms, np.full(atoms.shape[0], 1.0 / atoms.shape[0]))

    @classmethod
    def from_json(cls, path) -> "DiscreteTarget":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        atoms = doc["atoms"]
        weights = doc.get("weights")
        if weights is None:
            return cls.uniform(atoms)
        return cls(atoms, weights)

    @classmethod
    def from_csv(cls, path) -> "DiscreteTarget":
        """Point cloud with a header row; every point gets equal weight."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return cls.uniform([[float(v) for v in row] for row in rows[1:] if row])

    def to_json(self, path) -> None:
        doc = {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.atoms.shape[0], size=n, p=self.weights)
        return self.atoms[idx]


def _check_t(t, lo_open: bool = False, hi: float = 1.0, hi_open: bool = False) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    bad = (t <= 0) if lo_open else (t < 0)
    bad |= (t >= hi) if hi_open else (t > hi)
    if np.any(bad):
        raise ContractError(f"time outside the admissible range (max {hi})")
    return t


def interpolate(x0, x1, t):
    t = _check_t(t)
    return t[..., None] * np.asarray(x1) + np.sqrt(1.0 - t * t)[..., None] * np.asarray(x0)


def regression_label(x0, x1, t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t >= 1.0):
        raise ContractError("regression label is singular at t = 1")
    _check_t(t, hi_open=True)
    return np.asarray(x1) - (t / np.sqrt(1.0 - t * t))[..., None] * np.asarray(x0)


def posterior_weights(target: DiscreteTarget, x, t) -> np.ndarray:
    """Posterior atom probabilities given ``X_t = x``; shape (..., k)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(_check_t(t, hi_open=True), x.shape[:-1])
    diff = x[..., None, :] - t[..., None, None] * target.atoms
    var = 2.0 * (1.0 - t * t)
    logits = np.log(target.weights, where=target.weights > 0, out=np.full(target.weights.shape, -np.inf))
    logits = logits - (diff * diff).sum(axis=-1) / var[..., None]
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


def posterior_moments(target: DiscreteTarget, x, t):
    """Posterior mean m, covariance C and the third-moment vector E[X1 |X1|^2] - m E|X1|^2."""
    p = posterior_weights(target, x, t)
    a = target.atoms
    m = p @ a
    centered = a - m[..., None, :]
    C = np.einsum("...k,...ki,...kj->...ij", p, centered, centered)
    sq = (a * a).sum(axis=-1)
    third = p @ (a * sq[:, None]) - m * (p @ sq)[..., None]
    return m, C, third


class OracleField:
    """The exact minimizer ``v*`` of the truncated population loss on ``[0, T]``."""

    def __init__(self, target: DiscreteTarget, horizon: float = 0.9):
        if not 0.5 < horizon < 1.0:
            raise ContractError("horizon must lie in (1/2, 1)")
        self.target = target
        self.horizon = float(horizon)

    @property
    def dim(self) -> int:
        return self.target.dim

    def __call__(self, x, t) -> np.ndarray:
        return true_velocity(self, x, t)


def true_velocity(field: OracleField, x, t) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(_check_t(t, hi=field.horizon), x.shape[:-1])
    target = field.target
    prior_mean = target.weights @ target.atoms
    # at t = 0 the posterior is the prior; the formula below handles it without a 0/0
    p = posterior_weights(target, x, t)
    m = p @ target.atoms
    m = np.where((t == 0)[..., None], prior_mean, m)
    return (m - t[..., None] * x) / (1.0 - t * t)[..., None]


def true_velocity_dt(field: OracleField, x, t) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(_check_t(t, lo_open=True, hi=field.horizon), x.shape[:-1])
    m, C, third = posterior_moments(field.target, x, t)
    s = (1.0 - t * t)[..., None]
    tt = t[..., None]
    Cx = np.einsum("...ij,...j->...i", C, x)
    return (
        -(1 + tt * tt) / s**2 * x
        + 2 * tt / s**2 * m
        + (1 + tt * tt) / s**3 * Cx
        - tt / s**3 * third
    )


def true_velocity_grad(field: OracleField, x, t) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(_check_t(t, lo_open=True, hi=field.horizon), x.shape[:-1])
    _, C, _ = posterior_moments(field.target, x, t)
    s = (1.0 - t * t)[..., None, None]
    tt = t[..., None, None]
    eye = np.eye(field.dim)
    return tt / s**2 * C - tt / s * eye


def score(target: DiscreteTarget, x, t) -> np.ndarray:
    """Gradient of the log-density of X_t at x."""
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape[:-1])
    p = posterior_weights(target, x, t)
    m = p @ target.atoms
    return (t[..., None] * m - x) / (1.0 - t * t)[..., None]


def velocity_from_score(field: OracleField, x, t) -> np.ndarray:
    """``v* = (score + x) / t``; singular at t = 0, so only offered for t >= 1e-3."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 1e-3):
        raise ContractError("score form only available for t >= 1e-3")
    _check_t(t, hi=field.horizon)
    x = np.asarray(x, dtype=np.float64)
    tb = np.broadcast_to(t, x.shape[:-1])[..., None]
    return (score(field.target, x, np.broadcast_to(t, x.shape[:-1])) + x) / tb


# -- bounds --------------------------------------------------------------


def velocity_bound(radius: float, horizon: float) -> float:
    return (1.0 + radius) / (1.0 - horizon**2)


def dt_bound(radius: float, horizon: float, dim: int) -> float:
    """A coordinate-free bound on |d/dt v*| for atoms in [0,1]^d and |x_i| <= R.

    Each posterior moment is controlled by the cube: |m| <= sqrt(d), ||C||_op <= d,
    |E[X|X|^2] - m E|X|^2| <= d^{3/2}.
    """
    s = 1.0 - horizon**2
    rx = radius * math.sqrt(dim)
    T = horizon
    return (
        (1 + T * T) / s**2 * rx
        + 2 * T / s**2 * math.sqrt(dim)
        + (1 + T * T) / s**3 * dim * rx
        + T / s**3 * dim**1.5
    )


def grad_bound(horizon: float, dim: int) -> float:
    return horizon * dim / (1.0 - horizon**2) ** 2


@dataclass
class BoundReport:
    max_velocity: float
    velocity_bound: float
    max_dt: float
    dt_bound: float
    max_grad_op: float
    grad_bound: float

    @property
    def velocity_ok(self) -> bool:
        return self.max_velocity <= self.velocity_bound

    @property
    def dt_ok(self) -> bool:
        return self.max_dt <= self.dt_bound

    @property
    def grad_ok(self) -> bool:
        return self.max_grad_op <= self.grad_bound

    @property
    def ok(self) -> bool:
        return self.velocity_ok and self.dt_ok and self.grad_ok


def check_bounds(field: OracleField, x, t, radius: float) -> BoundReport:
    """Compare sampled sup norms against the closed-form bounds on [-R,R]^d x [0,T]."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(np.abs(x) > radius) or np.any(t < 0) or np.any(t > field.horizon):
        raise ContractError("samples must lie in [-R,R]^d x [0,T]")
    v = true_velocity(field, x, t)
    pos = t > 0
    dt = true_velocity_dt(field, x[pos], t[pos]) if pos.any() else np.zeros((0, field.dim))
    grads = true_velocity_grad(field, x[pos], t[pos]) if pos.any() else np.zeros((0, field.dim, field.dim))
    ops = np.linalg.norm(grads, ord=2, axis=(-2, -1)) if len(grads) else np.zeros(0)
    return BoundReport(
        max_velocity=float(np.abs(v).max()),
        velocity_bound=velocity_bound(radius, field.horizon),
        max_dt=float(np.linalg.norm(dt, axis=-1).max(initial=0.0)),
        dt_bound=dt_bound(radius, field.horizon, field.dim),
        max_grad_op=float(ops.max(initial=0.0)),
        grad_bound=grad_bound(field.horizon, field.dim),
    )


def delta_target(a) -> DiscreteTarget:
    return DiscreteTarget(np.atleast_2d(np.asarray(a, dtype=np.float64)), np.ones(1))


VelocityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def shifted(field: VelocityFn, c) -> VelocityFn:
    c = np.asarray(c, dtype=np.float64)
    return lambda x, t: field(x, t) + c


def zero_field(x, t) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=np.float64))
