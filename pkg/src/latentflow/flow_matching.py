"""Empirical flow-matching risk over a fixed triple set and its minimization."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as tn
from .metrics import interpolant_samples, l2_velocity_error, measure_lipschitz
from .oracle import DiscreteTarget, OracleField, interpolate, regression_label
from .tensor import ContractError, Tensor
from .transformer import (
    RescaledVelocityNet,
    TransformerSpec,
    clip_operator_norms,
    forward_tensors,
    init_transformer,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingSet:
    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        if self.x0.shape != self.x1.shape or self.t.shape != self.x0.shape[:1]:
            raise ContractError("t, x0, x1 sizes disagree")

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def dim(self) -> int:
        return self.x0.shape[1]

    @property
    def xt(self) -> np.ndarray:
        return interpolate(self.x0, self.x1, self.t)

    @property
    def labels(self) -> np.ndarray:
        return regression_label(self.x0, self.x1, self.t)

    @classmethod
    def draw(cls, target: DiscreteTarget, n: int, horizon: float, rng: np.random.Generator) -> "TrainingSet":
        return cls.from_points(target.sample(n, rng), horizon, rng)

    @classmethod
    def from_points(cls, x1, horizon: float, rng: np.random.Generator) -> "TrainingSet":
        x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
        n = x1.shape[0]
        t = rng.uniform(0.0, horizon, size=n)
        x0 = rng.standard_normal(x1.shape)
        return cls(t, x0, x1)


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    clip: float | None = None
    seed: int = 0
    horizon: float = 0.9
    radius: float | None = None
    eval_every: int = 100
    eval_mc: int = 20_000
    lipschitz_pairs: int = 256

    def __post_init__(self):
        if not 0.5 < self.horizon < 1.0:
            raise ContractError("horizon must lie in (1/2, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ContractError("epochs >= 0, batch_size >= 1, lr > 0 required")

    def resolved_radius(self, n: int) -> float:
        if self.radius is not None:
            return float(self.radius)
        return max(1.0, math.sqrt(2.0 * math.log(n)))


def empirical_loss(v: Callable, S: TrainingSet) -> float:
    if len(S) == 0:
        raise ContractError("empty training set")
    resid = S.labels - np.asarray(v(S.xt, S.t))
    return float((resid * resid).sum(axis=1).mean())


def population_loss_gap(v: Callable, oracle: OracleField, mc: int = 100_000, seed: int = 0):
    """``(1/T) int ||v - v*||^2 dpi_t dt`` estimated by Monte Carlo; returns (mean, stderr)."""
    return l2_velocity_error(v, oracle, mc, seed)


def direct_loss_gap(v: Callable, oracle: OracleField, mc: int = 100_000, seed: int = 0):
    """``L(v) - L(v*)`` from paired regression residuals; returns (mean, stderr)."""
    parts = []
    for t, x0, x1, xt in interpolant_samples(oracle, mc, seed):
        label = regression_label(x0, x1, t)
        rv = label - np.asarray(v(xt, t))
        rs = label - oracle(xt, t)
        parts.append((rv * rv).sum(axis=1) - (rs * rs).sum(axis=1))
    vals = np.concatenate(parts)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.shape[0]))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.steps += 1
        c1 = 1 - self.b1**self.steps
        c2 = 1 - self.b2**self.steps
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def loss_and_grads(velocity: RescaledVelocityNet, inputs: np.ndarray, labels: np.ndarray):
    """Mean squared residual of the inner network on precomputed inner inputs, with gradients."""
    with tn.Tape() as tape:
        params = velocity.inner.tensors()
        out = forward_tensors(velocity.inner.spec, params, Tensor(inputs))
        resid = out - labels
        loss = tn.mul(tn.tensor_sum(tn.square(resid)), 1.0 / inputs.shape[0])
        grads = tape.backward(loss)
    return loss.item(), {k: grads.get(p, np.zeros_like(p.data)) for k, p in params.items()}


@dataclass
class TrainResult:
    velocity: RescaledVelocityNet
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def write_log(self, path) -> None:
        write_log_csv(self.log, path)


LOG_FIELDS = ("epoch", "loss", "population_gap", "lipschitz_x", "lipschitz_t", "param_norm")


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in rows:
            w.writerow([fmt(row.get(k)) for k in LOG_FIELDS])


class TrainingDiverged(RuntimeError):
    pass


def train(
    spec: TransformerSpec,
    S: TrainingSet,
    cfg: TrainConfig,
    oracle: OracleField | None = None,
    callback: Callable[[int, RescaledVelocityNet], None] | None = None,
) -> TrainResult:
    """Minimize the empirical risk over the fixed set ``S`` with Adam.

    The returned network holds the parameters with the lowest full-set
    empirical loss seen at any epoch boundary, the initialization included.
    """
    if spec.d_out != S.dim or spec.d_in < S.dim + 1:
        raise ContractError(f"spec maps {spec.d_in}->{spec.d_out}, data needs {S.dim}+1 -> {S.dim}")
    if oracle is not None and not math.isclose(oracle.horizon, cfg.horizon):
        raise ContractError("oracle horizon differs from the training horizon")
    if np.any(S.t >= cfg.horizon) or np.any(S.t < 0):
        raise ContractError("training times must lie in [0, T)")
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss = ss.spawn(2)
    inner = init_transformer(spec, np.random.default_rng(init_ss))
    radius = cfg.resolved_radius(len(S))
    velocity = RescaledVelocityNet(inner, S.dim, radius, cfg.horizon)
    inputs = velocity.inner_inputs(S.xt, S.t)
    labels = S.labels
    shuffle_rng = np.random.default_rng(shuffle_ss)
    opt = Adam(inner.params, cfg.lr, cfg.betas)
    box_lo, box_hi = -radius * np.ones(S.dim), radius * np.ones(S.dim)

    def full_loss() -> float:
        resid = labels - inner(inputs)
        return float((resid * resid).sum(axis=1).mean())

    def record(epoch: int, loss: float) -> dict:
        row = {"epoch": epoch, "loss": loss}
        evaluate = epoch == 0 or epoch == cfg.epochs or (cfg.eval_every and epoch % cfg.eval_every == 0)
        if evaluate:
            if oracle is not None:
                row["population_gap"] = population_loss_gap(velocity, oracle, cfg.eval_mc, cfg.seed)[0]
            gx, gt = measure_lipschitz(velocity, box_lo, box_hi, cfg.lipschitz_pairs, cfg.seed, horizon=cfg.horizon)
            row["lipschitz_x"], row["lipschitz_t"] = gx, gt
        row["param_norm"] = math.sqrt(sum(float((p * p).sum()) for p in inner.params.values()))
        return row

    loss = full_loss()
    best_loss, best_params, best_epoch = loss, {k: v.copy() for k, v in inner.params.items()}, 0
    history = [record(0, loss)]
    n = len(S)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = loss_and_grads(velocity, inputs[idx], labels[idx])
            opt.step(inner.params, grads)
            if cfg.clip is not None:
                clip_operator_norms(inner, cfg.clip)
        bad = [k for k, v in inner.params.items() if not np.all(np.isfinite(v))]
        if bad:
            raise TrainingDiverged(f"non-finite weights {bad[:3]} at epoch {epoch}")
        loss = full_loss()
        if not math.isfinite(loss):
            raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")
        if loss < best_loss:
            best_loss, best_epoch = loss, epoch
            best_params = {k: v.copy() for k, v in inner.params.items()}
        history.append(record(epoch, loss))
        if callback is not None:
            callback(epoch, velocity)
    inner.params.update(best_params)
    return TrainResult(velocity, history, best_epoch)
