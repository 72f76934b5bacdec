"""Explicit Euler sampling on uniform grids, an RK4 reference flow, and error curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .metrics import w2_coupling, w2_exact
from .tensor import ContractError

VelocityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

MAX_RK4_STEPS = 2**20


@dataclass(frozen=True)
class TimeGrid:
    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        if k.ndim != 1 or k.shape[0] < 2 or k[0] != 0.0 or np.any(np.diff(k) <= 0):
            raise ContractError("grid must start at 0 and increase strictly")
        object.__setattr__(self, "knots", k)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def steps(self) -> int:
        return self.knots.shape[0] - 1

    @property
    def max_step(self) -> float:
        return float(np.diff(self.knots).max())

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if steps < 1:
            raise ContractError("need at least one step")
        return cls(np.linspace(0.0, horizon, steps + 1))


def stopping_time(n: int) -> float:
    """``1 - (ln n)^(-1/6)`` clamped to [0.5, 0.999]."""
    if n < 2:
        raise ContractError("n must be >= 2")
    return min(max(1.0 - math.log(n) ** (-1.0 / 6.0), 0.5), 0.999)


def make_grid(n: int, dim: int, horizon: float | None = None, c: float = 1.0) -> TimeGrid:
    """Uniform grid with step <= c * n^(-1/(d+3)); the horizon defaults to the stopping-time schedule."""
    if n < 2:
        raise ContractError("n must be >= 2")
    if c <= 0:
        raise ContractError("step constant must be positive")
    T = stopping_time(n) if horizon is None else float(horizon)
    h = c * n ** (-1.0 / (dim + 3))
    return TimeGrid.uniform(T, max(1, math.ceil(T / h)))


@dataclass
class Trajectories:
    knots: np.ndarray
    states: np.ndarray  # (N+1, n, d)

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def write_csv(self, path) -> None:
        n, d = self.states.shape[1:]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["knot", "t", "point"] + [f"x{i}" for i in range(d)])
            for k, t in enumerate(self.knots):
                for p in range(n):
                    w.writerow([k, "%.17g" % t, p] + ["%.17g" % v for v in self.states[k, p]])


def euler_flow(v: VelocityFn, grid: TimeGrid, starts, horizon: float | None = None) -> Trajectories:
    x = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    limit = getattr(v, "horizon", None) if horizon is None else horizon
    if limit is not None and grid.horizon > limit * (1 + 1e-12):
        raise ContractError(f"grid ends at {grid.horizon} beyond the field horizon {limit}")
    states = [x]
    for k in range(grid.steps):
        t0, t1 = grid.knots[k], grid.knots[k + 1]
        x = x + (t1 - t0) * np.asarray(v(x, np.full(x.shape[0], t0)))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state after Euler step {k}")
        states.append(x)
    return Trajectories(grid.knots, np.stack(states))


def rk4(v: VelocityFn, horizon: float, starts: np.ndarray, steps: int) -> np.ndarray:
    x = np.array(starts, dtype=np.float64)
    h = horizon / steps
    ones = np.ones(x.shape[0])
    for k in range(steps):
        t = k * h
        k1 = v(x, t * ones)
        k2 = v(x + 0.5 * h * k1, (t + 0.5 * h) * ones)
        k3 = v(x + 0.5 * h * k2, (t + 0.5 * h) * ones)
        # the last stage lands on the horizon; keep it from rounding past T
        k4 = v(x + h * k3, min(t + h, horizon) * ones)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def reference_flow(v: VelocityFn, horizon: float, starts, tol: float = 1e-8, initial_steps: int = 16) -> np.ndarray:
    """RK4 terminal states, doubling the step count until successive results differ < tol."""
    if tol <= 0:
        raise ContractError("tol must be positive")
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    steps = initial_steps
    prev = rk4(v, horizon, starts, steps)
    while steps < MAX_RK4_STEPS:
        steps *= 2
        cur = rk4(v, horizon, starts, steps)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise ContractError(f"reference flow did not reach tol={tol} within {MAX_RK4_STEPS} steps")


@dataclass
class ErrorPoint:
    steps: int
    max_step: float
    w2_coupling: float
    w2_exact: float


def discretization_error_curve(
    v: VelocityFn, horizon: float, starts, steps: Sequence[int], tol: float = 1e-8
) -> list[ErrorPoint]:
    """Euler-vs-reference terminal W2 per resolution, from shared start points."""
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    ref = reference_flow(v, horizon, starts, tol)
    out = []
    for n in steps:
        grid = TimeGrid.uniform(horizon, n)
        term = euler_flow(v, grid, starts, horizon).terminal
        out.append(ErrorPoint(n, grid.max_step, w2_coupling(ref, term), w2_exact(ref, term)))
    return out


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2:
        raise ContractError("need at least two points for a slope")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def gronwall_holds(f: Sequence[float], g: Sequence[float], alpha: float, dt: float, rtol: float = 1e-12) -> bool:
    """Check ``f(b) <= e^{alpha (b-a)} f(a) + int_a^b e^{alpha (b-t)} g(t) dt`` at every knot.

    ``f`` and ``g`` are sampled on a uniform grid of spacing ``dt``; the
    integral uses the left-endpoint rule, which matches sequences built by
    ``f[k+1] <= (1 + alpha dt) f[k] + dt g[k]``.
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape[0] != g.shape[0]:
        raise ContractError("f and g must share the grid")
    for b in range(1, f.shape[0]):
        ts = np.arange(b) * dt
        bound = math.exp(alpha * b * dt) * f[0] + float(np.sum(np.exp(alpha * (b * dt - ts)) * g[:b]) * dt)
        if f[b] > bound * (1 + rtol) + rtol:
            return False
    return True


def deviation_sequence(v: VelocityFn, grid: TimeGrid, starts, reference: Callable[[float], np.ndarray]):
    """Per-knot RMS deviation between Euler states and a reference path ``reference(t)``."""
    traj = euler_flow(v, grid, starts)
    return np.array(
        [math.sqrt(((traj.states[k] - reference(t)) ** 2).sum(axis=1).mean()) for k, t in enumerate(grid.knots)]
    )
