"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Runtime limits are part of each criterion and are checked alongside the numbers.
"""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from latentflow.cli import main
from latentflow.experiments import (
    resolve_target,
    run_construct,
    run_discretization,
    run_end_to_end,
    run_oracle_check,
    run_train_latent,
    substream_seed,
    sweep,
    validate,
)
from latentflow.flow_matching import loss_and_grads, population_loss_gap
from latentflow.oracle import OracleField, zero_field
from latentflow.transformer import (
    RescaledVelocityNet,
    TransformerNet,
    TransformerSpec,
    init_transformer,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name: str, **overrides) -> dict:
    cfg = json.loads((CONFIGS / name).read_text())
    cfg.update(overrides)
    return validate(cfg)


@pytest.fixture
def verdict(capsys):
    def report(number: int, title: str, ok: bool, detail: str, elapsed: float, limit: float | None = None):
        ok = bool(ok) and (limit is None or elapsed < limit)
        timing = f"{elapsed:.1f}s" if limit is None else f"{elapsed:.1f}s of {limit:.0f}s"
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail} ({timing})")
        assert ok, detail

    return report


def test_criterion_01_exact_constructions(verdict):
    start = time.perf_counter()
    out = run_construct(load("construct.json", poly_degrees=[]))
    budgets, monos = out.tables[0].rows, out.tables[1].rows
    worst = max(r["max_error"] for r in monos)
    within = all(r["within_budget"] for r in budgets)
    layers_ok = all(r["layers"] <= r["layer_bound"] for r in monos)
    degrees_ok = all(sum(map(int, r["index"].split())) <= 8 for r in monos)
    detail = f"{len(monos)} monomials, max error {worst:.2e}, budgets {'met' if within else 'violated'}, layer bound {'met' if layers_ok else 'violated'}"
    ok = len(monos) == 50 and worst <= 1e-10 and within and layers_ok and degrees_ok
    verdict(1, "exact constructions", ok, detail, time.perf_counter() - start, 60)


def test_criterion_02_lipschitz_stable_approximation(verdict):
    start = time.perf_counter()
    out = run_construct(load("construct.json", layouts=[[1, 1]], indices=0, poly_degrees=[2, 4, 8]))
    rows = out.tables[2].rows
    errors = [r["sup_error"] for r in rows]
    lips = [r["lipschitz"] for r in rows]
    decreasing = errors[0] > errors[1] > errors[2]
    spread = max(lips) / min(lips)
    detail = (
        f"sup errors {', '.join(f'{e:.3g}' for e in errors)}, "
        f"Lipschitz {', '.join(f'{v:.3g}' for v in lips)} (spread {spread:.2f}x, allowed 3x)"
    )
    verdict(2, "Lipschitz-stable approximation", decreasing and spread <= 3.0, detail, time.perf_counter() - start, 60)


def test_criterion_03_oracle_consistency(verdict):
    start = time.perf_counter()
    out = run_oracle_check(load("oracle_check.json", loss_identity=False))
    rows = out.tables[0].rows
    worst_dt = max(r["max_rel_dt"] for r in rows)
    worst_grad = max(r["max_rel_grad"] for r in rows)
    bounds = all(r["max_velocity"] <= r["velocity_bound"] and r["max_grad_op"] <= r["grad_bound"] for r in rows)
    covered = {(r["target"], r["d"]) for r in rows} == {(p, d) for p in ("delta", "two-atom", "five-atom") for d in (1, 2)}
    detail = f"max rel error dt {worst_dt:.2e}, grad {worst_grad:.2e}, bounds {'hold' if bounds else 'violated'}"
    ok = covered and worst_dt <= 1e-5 and worst_grad <= 1e-5 and bounds
    verdict(3, "oracle consistency", ok, detail, time.perf_counter() - start, 60)


def test_criterion_04_loss_identity(verdict):
    start = time.perf_counter()
    out = run_oracle_check(load("oracle_check.json", points=2))
    rows = out.tables[1].rows
    worst = max(rows, key=lambda r: r["z"])
    fields = {r["field"] for r in rows}
    detail = f"{len(rows)} comparisons, worst |difference| = {worst['z']:.2f} combined SE ({worst['target']} d={worst['d']} {worst['field']})"
    ok = fields == {"oracle", "oracle+c", "zero"} and all(r["z"] < 3 for r in rows)
    verdict(4, "loss identity", ok, detail, time.perf_counter() - start, 120)


def _tiny_gradient_error() -> float:
    spec = TransformerSpec(d_in=2, d_out=1, d_patch=2, n_layers=1, heads=2, d_k=2, d_v=2, d_ff=4)
    inner = init_transformer(spec, np.random.default_rng(11))
    v = RescaledVelocityNet(inner, 1, 2.0, 0.9)
    rng = np.random.default_rng(12)
    inputs = v.inner_inputs(rng.normal(size=(8, 1)), rng.uniform(0, 0.9, size=8))
    labels = rng.normal(size=(8, 1))
    _, grads = loss_and_grads(v, inputs, labels)

    def loss_at(params):
        out = TransformerNet(spec, params)(inputs)
        return float(((out - labels) ** 2).sum(axis=1).mean())

    worst = 0.0
    for name, arr in inner.params.items():
        for idx in np.ndindex(arr.shape):
            plus = {k: a.copy() for k, a in inner.params.items()}
            minus = {k: a.copy() for k, a in inner.params.items()}
            plus[name][idx] += 1e-6
            minus[name][idx] -= 1e-6
            fd = (loss_at(plus) - loss_at(minus)) / 2e-6
            worst = max(worst, abs(grads[name][idx] - fd) / max(abs(fd), 1e-3))
    return worst


@pytest.mark.slow
def test_criterion_05_training_recovery(verdict):
    start = time.perf_counter()
    cfg = load("train_delta.json")
    row = run_train_latent(cfg).tables[0].rows[0]
    oracle = OracleField(resolve_target(cfg, cfg["d"]), cfg["T"])
    zero, _ = population_loss_gap(zero_field, oracle, cfg["eval"]["mc"], substream_seed(row["seed"], "mc-eval", 1))
    gap = row["population_gap"]
    grad_err = _tiny_gradient_error()
    detail = (
        f"{row['epochs']} epochs, gap {gap:.4g} vs zero-field gap {zero:.4g} (ratio {gap / zero:.4f}), "
        f"tiny-net gradient rel error {grad_err:.1e}"
    )
    ok = row["epochs"] <= 2000 and gap < 0.1 * zero and grad_err <= 1e-4
    verdict(5, "training recovery", ok, detail, time.perf_counter() - start, 600)


def test_criterion_06_discretization_scaling(verdict):
    start = time.perf_counter()
    out = run_discretization(load("discretization.json", horizons=None))
    slope = out.tables[0].rows[0]["slope"]
    steps = [r["steps"] for r in out.tables[0].rows]
    detail = f"coupling-W2 slope {slope:.3f} over N={steps}"
    verdict(6, "discretization scaling", steps == [8, 16, 32, 64, 128] and -1.3 <= slope <= -0.7, detail, time.perf_counter() - start, 120)


def test_criterion_07_early_stopping_trend(verdict):
    start = time.perf_counter()
    out = run_discretization(load("discretization.json", steps=[8, 16]))
    rows = out.tables[1].rows
    ratios = [r["ratio"] for r in rows]
    spread = max(ratios) / min(ratios)
    detail = (
        f"W2/(1-T) at T={[r['T'] for r in rows]}: {', '.join(f'{v:.3g}' for v in ratios)} "
        f"(spread {spread:.2f}x, allowed < 2x)"
    )
    verdict(7, "early-stopping trend", spread < 2.0, detail, time.perf_counter() - start, 120)


@pytest.mark.slow
def test_criterion_08_consistency_trend(verdict):
    start = time.perf_counter()
    cfg = load("train_two_atom_2d.json")
    out = sweep(cfg, "train-latent", "n", [64, 256, 1024])
    means = out.tables[1].rows
    values = [r["mean"] for r in means]
    nonincreasing = all(b <= a for a, b in itertools.pairwise(values))
    seeds_ok = all(r["seeds"] == 5 for r in means)
    detail = f"mean W2 over 5 seeds at n=64/256/1024: {', '.join(f'{v:.4f}' for v in values)}"
    verdict(8, "consistency trend", nonincreasing and seeds_ok, detail, time.perf_counter() - start, 1800)


@pytest.mark.slow
def test_criterion_09_end_to_end(verdict):
    start = time.perf_counter()
    base = {"seeds": [0, 1, 2], "checkpoints": []}
    small = run_end_to_end(load("end_to_end_curve.json", m=128, n=64, **base))
    large = run_end_to_end(load("end_to_end_curve.json", m=2048, n=1024, **base))
    w_small = [r["w2"] for r in small.tables[0].rows if r["epoch"] == -1]
    w_large = [r["w2"] for r in large.tables[0].rows if r["epoch"] == -1]
    a, b = float(np.mean(w_small)), float(np.mean(w_large))
    detail = f"mean W2 over 3 seeds: (128,64) {a:.4f}, (2048,1024) {b:.4f}"
    verdict(9, "end-to-end pipeline", len(w_small) == len(w_large) == 3 and b < a, detail, time.perf_counter() - start, 2700)


DETERMINISM_RUNS = {
    "construct.json": {},
    "oracle_check.json": {"mc": 20_000},
    "discretization.json": {},
    "train_delta.json": {"train": {"epochs": 20, "eval_every": 5, "eval_mc": 2000}, "eval": {"samples": 256, "mc": 5000}},
    "end_to_end_curve.json": {"m": 128, "n": 64, "pretrain": {"steps": 100}, "train": {"steps": 100}, "checkpoints": [2, 5]},
}


def test_criterion_10_determinism(verdict, tmp_path):
    start = time.perf_counter()
    mismatched, compared = [], 0
    for name, overrides in DETERMINISM_RUNS.items():
        cfg = {**json.loads((CONFIGS / name).read_text()), **overrides}
        path = tmp_path / name
        path.write_text(json.dumps(cfg))
        snapshots = []
        for run in ("a", "b"):
            out = tmp_path / f"{path.stem}-{run}"
            assert main(["run", str(path), "--out", str(out)]) == 0
            snapshots.append({p.name: p.read_bytes() for p in sorted((out / "metrics").glob("*.csv"))})
        compared += len(snapshots[0])
        if not snapshots[0] or snapshots[0] != snapshots[1]:
            mismatched.append(name)
    detail = f"{compared} metric CSVs across {len(DETERMINISM_RUNS)} configs, mismatches: {mismatched or 'none'}"
    verdict(10, "determinism", not mismatched, detail, time.perf_counter() - start)
