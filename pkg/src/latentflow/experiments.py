"""Experiment kinds: each takes a validated config and returns metric tables.

Every random draw comes from :func:`substream`, keyed by the root seed and a
stable label, so reruns reproduce every table bit for bit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import autoencoder as ae
from . import construct as cs
from .flow_matching import TrainConfig, TrainingSet, direct_loss_gap, population_loss_gap, train
from .metrics import measure_lipschitz, w2_exact
from .oracle import (
    DiscreteTarget,
    OracleField,
    check_bounds,
    shifted,
    true_velocity,
    true_velocity_dt,
    true_velocity_grad,
    zero_field,
)
from .sampler import discretization_error_curve, euler_flow, loglog_slope, make_grid, reference_flow
from .transformer import velocity_spec

KINDS = ("construct", "oracle-check", "train-latent", "end-to-end", "discretization-sweep", "rate-sweep")


class ConfigError(ValueError):
    """A config field is missing or invalid; ``field`` names it."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def substream(seed: int, label: str, *extra: int) -> np.random.Generator:
    digest = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), digest, *map(int, extra)]))


def substream_seed(seed: int, label: str, *extra: int) -> int:
    return int(substream(seed, label, *extra).integers(0, 2**63 - 1))


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown columns {sorted(unknown)} for table {self.name}")
        self.rows.append(row)


# -- config resolution ---------------------------------------------------

def _five_atoms(d: int) -> DiscreteTarget:
    base = np.array([[0.1, 0.2], [0.3, 0.8], [0.5, 0.5], [0.7, 0.3], [0.9, 0.7]])
    atoms = np.full((5, d), 0.5)
    atoms[:, : min(d, 2)] = base[:, : min(d, 2)]
    return DiscreteTarget(atoms, np.array([0.1, 0.2, 0.3, 0.25, 0.15]))


PRESETS: dict[str, Callable[[int], DiscreteTarget]] = {
    "delta": lambda d: DiscreteTarget.uniform([[0.3] * d]),
    "two-atom": lambda d: DiscreteTarget.uniform([[0.25] * d, [0.75] * d]),
    "five-atom": _five_atoms,
}


def resolve_target(cfg: dict, dim: int) -> DiscreteTarget:
    spec = cfg.get("target", {"preset": "two-atom"})
    if not isinstance(spec, dict):
        raise ConfigError("target", "must be an object")
    if "preset" in spec:
        if spec["preset"] not in PRESETS:
            raise ConfigError("target.preset", f"unknown preset {spec['preset']!r}; choose from {sorted(PRESETS)}")
        return PRESETS[spec["preset"]](dim)
    if "atoms" in spec:
        try:
            atoms = np.asarray(spec["atoms"], dtype=np.float64)
            if atoms.ndim != 2 or atoms.shape[1] != dim:
                raise ConfigError("target.atoms", f"expected a list of {dim}-vectors")
            weights = spec.get("weights")
            return DiscreteTarget.uniform(atoms) if weights is None else DiscreteTarget(atoms, weights)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("target", str(exc)) from None
    raise ConfigError("target", "needs 'preset' or 'atoms'")


def net_kwargs(cfg: dict) -> dict:
    net = cfg.get("net", {})
    allowed = {"n_layers", "heads", "d_k", "d_v", "d_ff", "bound", "gamma"}
    bad = set(net) - allowed
    if bad:
        raise ConfigError("net", f"unknown fields {sorted(bad)}")
    return dict(net)


def epochs_for(train_cfg: dict, n: int, batch: int) -> int:
    if "steps" in train_cfg:
        return max(1, math.ceil(int(train_cfg["steps"]) / math.ceil(n / batch)))
    return int(train_cfg.get("epochs", 2000))


def horizon_of(cfg: dict) -> float:
    return float(cfg.get("T", 0.9))


def seeds_of(cfg: dict) -> list[int]:
    return [int(s) for s in cfg["seeds"]]


def train_config(cfg: dict, n: int, seed: int) -> TrainConfig:
    tr = cfg.get("train", {})
    batch = int(tr.get("batch_size", 64))
    return TrainConfig(
        epochs=epochs_for(tr, n, batch),
        batch_size=batch,
        lr=float(tr.get("lr", 1e-3)),
        clip=tr.get("clip"),
        seed=seed,
        horizon=horizon_of(cfg),
        radius=cfg.get("R"),
        eval_every=int(tr.get("eval_every", 0)),
        eval_mc=int(tr.get("eval_mc", 20_000)),
    )


# -- kinds ---------------------------------------------------------------


@dataclass
class Outcome:
    tables: list[Table]
    checkpoints: dict[str, dict] = field(default_factory=dict)
    extra_files: dict[str, list[dict]] = field(default_factory=dict)
    reports: list[dict] = field(default_factory=list)


def run_construct(cfg: dict) -> Outcome:
    seed = seeds_of(cfg)[0]
    rng = substream(seed, "construct")
    layouts = [cs.Layout(*lay) for lay in cfg.get("layouts", [[1, 2], [2, 1], [1, 3], [3, 1]])]
    count = int(cfg.get("indices", 50))
    cap = int(cfg.get("degree_cap", 8))
    per_axis = int(cfg.get("grid", 17))
    budgets = Table("block_budgets", ("block", "d_patch", "tokens", "nonzero", "budget", "within_budget", "max_error"))
    monos = Table("monomials", ("d_patch", "tokens", "index", "layers", "layer_bound", "nonzero", "max_error"))
    reports = []
    for lay in layouts:
        for row in cs.block_reports(lay, rng):
            budgets.add(**row)
            reports.append(row)
    for i in range(count):
        lay = layouts[i % len(layouts)]
        degree = int(rng.integers(0, cap + 1))
        n = tuple(int(v) for v in rng.multinomial(degree, np.full(lay.d_in, 1.0 / lay.d_in)))
        net, rep = cs.build_monomial_net(lay, n)
        err = cs.verify_construction(net, lambda x, n=n: cs.eta(x, n), cs.grid_points(lay.d_in, per_axis))
        row = dict(
            d_patch=lay.d_patch,
            tokens=lay.tokens,
            index=" ".join(map(str, n)),
            layers=rep.layers,
            layer_bound=rep.layer_bound,
            nonzero=rep.nonzero,
            max_error=err,
        )
        monos.add(**row)
        reports.append({"block": "monomial", **row, "max_intermediate": rep.max_intermediate})
    poly = Table("polynomial", ("degree", "sup_error", "lipschitz", "coefficient_bound", "assembly_error"))
    grid = cs.grid_points(1, 513)
    f = lambda x: np.sin(2 * np.pi * x[:, 0])  # noqa: E731
    for degree in cfg.get("poly_degrees", [2, 4, 8]):
        coeffs = cs.fit_polynomial(f, 1, int(degree))
        net = cs.assemble_polynomial_approximator(cs.Layout(1, 1), coeffs)
        out = net(grid)[:, 0]
        poly.add(
            degree=int(degree),
            sup_error=float(np.abs(out - f(grid)).max()),
            lipschitz=measure_lipschitz(net, [0.0], [1.0], pairs=10_000, seed=substream_seed(seed, "lipschitz"))[0],
            coefficient_bound=cs.coefficient_lipschitz_bound(coeffs),
            assembly_error=float(np.abs(out - cs.evaluate_polynomial(coeffs, grid)).max()),
        )
    return Outcome([budgets, monos, poly], reports=reports)


def finite_difference_errors(field_: OracleField, x: np.ndarray, t: np.ndarray, h: float = 1e-6):
    """Max relative errors of the closed-form dt and Jacobian against central differences."""
    d = field_.dim
    fd_t = (true_velocity(field_, x, t + h) - true_velocity(field_, x, t - h)) / (2 * h)
    an_t = true_velocity_dt(field_, x, t)
    eye = np.eye(d)
    fd_x = np.stack(
        [(true_velocity(field_, x + h * eye[i], t) - true_velocity(field_, x - h * eye[i], t)) / (2 * h) for i in range(d)],
        axis=-1,
    )
    an_x = true_velocity_grad(field_, x, t)
    rel_t = np.linalg.norm(fd_t - an_t, axis=1) / np.maximum(np.linalg.norm(an_t, axis=1), 1.0)
    rel_x = np.linalg.norm(fd_x - an_x, axis=(1, 2)) / np.maximum(np.linalg.norm(an_x, axis=(1, 2)), 1.0)
    return float(rel_t.max()), float(rel_x.max())


def run_oracle_check(cfg: dict) -> Outcome:
    seed = seeds_of(cfg)[0]
    T = horizon_of(cfg)
    R = float(cfg.get("R", 2.0))
    points = int(cfg.get("points", 200))
    fd = Table(
        "oracle_checks",
        (
            "target", "d", "max_rel_dt", "max_rel_grad", "max_velocity", "velocity_bound",
            "max_dt", "dt_bound", "max_grad_op", "grad_bound", "bounds_ok",
        ),
    )
    ident = Table("loss_identity", ("target", "d", "field", "gap_integral", "gap_integral_se", "gap_direct", "gap_direct_se", "z"))
    mc = int(cfg.get("mc", 100_000))
    for d in cfg.get("dims", [1, 2]):
        for preset in cfg.get("presets", ["delta", "two-atom", "five-atom"]):
            target = PRESETS[preset](int(d))
            oracle = OracleField(target, T)
            rng = substream(seed, "oracle-check", int(d), hash_label(preset))
            x = rng.uniform(-R, R, size=(points, int(d)))
            # keep t inside (h, T - h) so both central-difference stencils stay admissible
            t = rng.uniform(1e-3, T - 1e-3, size=points)
            e_t, e_x = finite_difference_errors(oracle, x, t)
            b = check_bounds(oracle, x, t, R)
            fd.add(
                target=preset,
                d=int(d),
                max_rel_dt=e_t,
                max_rel_grad=e_x,
                max_velocity=b.max_velocity,
                velocity_bound=b.velocity_bound,
                max_dt=b.max_dt,
                dt_bound=b.dt_bound,
                max_grad_op=b.max_grad_op,
                grad_bound=b.grad_bound,
                bounds_ok=b.ok,
            )
            if not cfg.get("loss_identity", True):
                continue
            c = np.full(int(d), 0.5)
            for name, v in (("oracle", oracle), ("oracle+c", shifted(oracle, c)), ("zero", zero_field)):
                s1 = substream_seed(seed, "mc-eval", int(d), hash_label(preset), 1)
                s2 = substream_seed(seed, "mc-eval", int(d), hash_label(preset), 2)
                g1, se1 = population_loss_gap(v, oracle, mc, s1)
                g2, se2 = direct_loss_gap(v, oracle, mc, s2)
                se = math.hypot(se1, se2)
                ident.add(
                    target=preset,
                    d=int(d),
                    field=name,
                    gap_integral=g1,
                    gap_integral_se=se1,
                    gap_direct=g2,
                    gap_direct_se=se2,
                    z=abs(g1 - g2) / se if se > 0 else 0.0,
                )
    return Outcome([fd, ident])


def hash_label(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "little")


TRAIN_COLUMNS = ("seed", "n", "epochs", "final_loss", "population_gap", "gap_se", "w2", "grid_steps")


def run_train_latent(cfg: dict) -> Outcome:
    d = int(cfg["d"])
    n = int(cfg["n"])
    T = horizon_of(cfg)
    c = float(cfg.get("c", 1.0))
    target = resolve_target(cfg, d)
    oracle = OracleField(target, T)
    ev = cfg.get("eval", {})
    samples = int(ev.get("samples", 1024))
    mc = int(ev.get("mc", 20_000))
    table = Table("train_latent", TRAIN_COLUMNS)
    logs, ckpts = {}, {}
    for seed in seeds_of(cfg):
        S = TrainingSet.draw(target, n, T, substream(seed, "data"))
        tcfg = train_config(cfg, n, substream_seed(seed, "flow-train"))
        result = train(velocity_spec(d, **net_kwargs(cfg)), S, tcfg, oracle)
        eval_rng = substream(seed, "sampling")
        starts = eval_rng.standard_normal((samples, d))
        reference = target.sample(samples, substream(seed, "mc-eval"))
        grid = make_grid(max(n, 2), d, horizon=T, c=c)
        terminal = euler_flow(result.velocity, grid, starts).terminal
        gap, se = population_loss_gap(result.velocity, oracle, mc, substream_seed(seed, "mc-eval", 1))
        table.add(
            seed=seed,
            n=n,
            epochs=tcfg.epochs,
            final_loss=result.log[result.best_epoch]["loss"],
            population_gap=gap,
            gap_se=se,
            w2=w2_exact(terminal, reference),
            grid_steps=grid.steps,
        )
        logs[f"train_log_seed{seed}"] = result.log
        ckpts[f"velocity_seed{seed}"] = result.velocity.to_dict()
    out = Outcome([table], checkpoints=ckpts)
    out.extra_files.update(logs)
    return out


E2E_COLUMNS = ("seed", "m", "n", "epoch", "reconstruction_loss", "latent_loss", "w2")


def run_end_to_end(cfg: dict) -> Outcome:
    D, d = int(cfg["D"]), int(cfg["d"])
    m, n = int(cfg["m"]), int(cfg["n"])
    T = horizon_of(cfg)
    c = float(cfg.get("c", 1.0))
    data_kind = cfg.get("data", "curve" if (D, d) == (4, 1) else "plane")
    generator = {"curve": ae.curve_in_cube, "plane": ae.plane_in_cube}.get(data_kind)
    if generator is None:
        raise ConfigError("data", f"unknown generator {data_kind!r}")
    ev = cfg.get("eval", {})
    samples = int(ev.get("samples", 1024))
    checkpoints = sorted(int(e) for e in cfg.get("checkpoints", []))
    pre = cfg.get("pretrain", {})
    pre_batch = int(pre.get("batch_size", 64))
    table = Table("end_to_end", E2E_COLUMNS)
    ckpts, logs = {}, {}
    enc_spec = ae.coder_spec(D, d, **net_kwargs({"net": cfg.get("coder_net", {})}))
    dec_spec = ae.coder_spec(d, D, **net_kwargs({"net": cfg.get("coder_net", {})}))
    for seed in seeds_of(cfg):
        pre_data = generator(m, substream(seed, "pretrain-data"))
        pcfg = ae.PretrainConfig(
            epochs=epochs_for(pre, m, pre_batch),
            batch_size=pre_batch,
            lr=float(pre.get("lr", 1e-3)),
            seed=substream_seed(seed, "pretrain"),
        )
        pre_res = ae.pretrain(enc_spec, dec_spec, pre_data, pcfg)
        pair = pre_res.pair
        # no domain shift: the target samples come from the pre-training law
        target_data = generator(n, substream(seed, "target-data"))
        latent = ae.encode_batch(pair, target_data)
        S = TrainingSet.from_points(latent.atoms, T, substream(seed, "data"))
        tcfg = train_config(cfg, n, substream_seed(seed, "flow-train"))
        starts = substream(seed, "sampling").standard_normal((samples, d))
        reference = generator(samples, substream(seed, "mc-eval"))
        grid = make_grid(max(n, 2), d, horizon=T, c=c)
        recon = ae.reconstruction_loss(pair, reference)

        def measure(velocity) -> float:
            decoded = ae.decode_batch(pair, euler_flow(velocity, grid, starts).terminal)
            return w2_exact(decoded, reference)

        snapshots = {}

        def on_epoch(epoch: int, velocity) -> None:
            if epoch in checkpoints:
                snapshots[epoch] = measure(velocity)

        result = train(velocity_spec(d, **net_kwargs(cfg)), S, tcfg, callback=on_epoch)
        for epoch in checkpoints:
            if epoch in snapshots:
                table.add(seed=seed, m=m, n=n, epoch=epoch, reconstruction_loss=recon, latent_loss=result.log[epoch]["loss"], w2=snapshots[epoch])
        table.add(
            seed=seed,
            m=m,
            n=n,
            epoch=-1,
            reconstruction_loss=recon,
            latent_loss=result.log[result.best_epoch]["loss"],
            w2=measure(result.velocity),
        )
        ckpts[f"velocity_seed{seed}"] = result.velocity.to_dict()
        ckpts[f"encoder_seed{seed}"] = pair.encoder.to_dict()
        ckpts[f"decoder_seed{seed}"] = pair.decoder.to_dict()
        logs[f"pretrain_log_seed{seed}"] = [{"epoch": r["epoch"], "loss": r["loss"]} for r in pre_res.log]
        logs[f"train_log_seed{seed}"] = result.log
    out = Outcome([table], checkpoints=ckpts)
    out.extra_files.update(logs)
    return out


def run_discretization(cfg: dict) -> Outcome:
    seed = seeds_of(cfg)[0]
    d = int(cfg.get("d", 1))
    T = horizon_of(cfg)
    target = resolve_target({"target": cfg.get("target", {"preset": "delta"})}, d)
    oracle = OracleField(target, T)
    samples = int(cfg.get("samples", 512))
    tol = float(cfg.get("tol", 1e-8))
    starts = substream(seed, "sampling").standard_normal((samples, d))
    steps = [int(s) for s in cfg.get("steps", [8, 16, 32, 64, 128])]
    curve = Table("discretization", ("steps", "max_step", "w2_coupling", "w2_exact", "slope"))
    points = discretization_error_curve(oracle, T, starts, steps, tol)
    slope = loglog_slope([p.steps for p in points], [p.w2_coupling for p in points])
    for p in points:
        curve.add(steps=p.steps, max_step=p.max_step, w2_coupling=p.w2_coupling, w2_exact=p.w2_exact, slope=slope)
    tables = [curve]
    horizons = cfg.get("horizons")
    if horizons:
        es_target = resolve_target({"target": cfg.get("early_stopping_target", {"preset": "two-atom"})}, d)
        early = Table("early_stopping", ("T", "w2", "ratio"))
        reference = es_target.sample(samples, substream(seed, "mc-eval"))
        for h in horizons:
            terminal = early_stopping_terminal(es_target, float(h), starts, tol)
            w2 = w2_exact(terminal, reference)
            early.add(T=float(h), w2=w2, ratio=w2 / (1.0 - float(h)))
        tables.append(early)
    return Outcome(tables)


def early_stopping_terminal(target: DiscreteTarget, T: float, starts: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Exact-flow states at time T, integrated to ``tol`` with the reference RK4."""
    return reference_flow(OracleField(target, T), T, starts, tol)


def run_rate_sweep(cfg: dict) -> Outcome:
    axis = cfg.get("axis")
    values = cfg.get("values")
    base = cfg.get("base_kind", "train-latent")
    if base not in ("train-latent", "end-to-end", "discretization-sweep"):
        raise ConfigError("base_kind", f"cannot sweep {base!r}")
    return sweep(cfg, base, axis, values)


SWEEP_AXES = {
    "train-latent": ("n", "T"),
    "end-to-end": ("n", "m", "T"),
    "discretization-sweep": ("steps", "T"),
}

PRIMARY_METRIC = {"train-latent": "w2", "end-to-end": "w2", "discretization-sweep": "w2_coupling"}


def sweep(cfg: dict, kind: str, axis: str | None, values) -> Outcome:
    """Run ``kind`` once per axis value; one row per value per seed plus a log-log slope."""
    if axis not in SWEEP_AXES.get(kind, ()):
        raise ConfigError("axis", f"{axis!r} is not a sweep axis for {kind}; choose from {SWEEP_AXES.get(kind, ())}")
    if not isinstance(values, (list, tuple)) or len(values) < 2:
        raise ConfigError("values", "need at least two values")
    rows = []
    extra, ckpts = {}, {}
    if kind == "discretization-sweep" and axis == "steps":
        out = run_discretization({**cfg, "steps": [int(v) for v in values], "horizons": None})
        for r in out.tables[0].rows:
            rows.append((r["steps"], cfg["seeds"][0], r["w2_coupling"], None))
    elif kind == "discretization-sweep":
        out = run_discretization({**cfg, "horizons": [float(v) for v in values]})
        for r in out.tables[1].rows:
            rows.append((r["T"], cfg["seeds"][0], r["w2"], None))
    else:
        runner = RUNNERS[kind]
        for value in values:
            value = float(value) if axis == "T" else int(value)
            out = runner({**cfg, axis: value})
            for r in out.tables[0].rows:
                if kind == "end-to-end" and r["epoch"] != -1:
                    continue
                rows.append((value, r["seed"], r[PRIMARY_METRIC[kind]], r.get("gap_se")))
            for name, payload in out.checkpoints.items():
                ckpts[f"{name}_{axis}{value}"] = payload
            for name, payload in out.extra_files.items():
                extra[f"{name}_{axis}{value}"] = payload
    by_value: dict[float, list[float]] = {}
    for value, _, metric, _ in rows:
        by_value.setdefault(value, []).append(metric)
    xs = sorted(by_value)
    slope = loglog_slope(xs, [float(np.mean(by_value[x])) for x in xs]) if all(
        np.mean(by_value[x]) > 0 for x in xs
    ) and all(x > 0 for x in xs) else float("nan")
    table = Table("sweep", ("axis", "value", "seed", "metric", "stderr", "slope"))
    for value, seed, metric, se in rows:
        table.add(axis=axis, value=value, seed=seed, metric=metric, stderr=se, slope=slope)
    means = Table("sweep_means", ("value", "mean", "seeds"))
    for x in xs:
        means.add(value=x, mean=float(np.mean(by_value[x])), seeds=len(by_value[x]))
    out = Outcome([table, means], checkpoints=ckpts)
    out.extra_files.update(extra)
    return out


RUNNERS: dict[str, Callable[[dict], Outcome]] = {
    "construct": run_construct,
    "oracle-check": run_oracle_check,
    "train-latent": run_train_latent,
    "end-to-end": run_end_to_end,
    "discretization-sweep": run_discretization,
    "rate-sweep": run_rate_sweep,
}

REQUIRED = {
    "construct": (),
    "oracle-check": (),
    "train-latent": ("d", "n"),
    "end-to-end": ("D", "d", "m", "n"),
    "discretization-sweep": (),
    "rate-sweep": ("axis", "values"),
}


def validate(cfg: Any) -> dict:
    """Check the kind-independent fields and the kind's required ones; returns a normalized copy."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError("kind", f"unknown kind {kind!r}; choose from {list(KINDS)}")
    cfg = dict(cfg)
    if "seed" in cfg and "seeds" not in cfg:
        cfg["seeds"] = [cfg.pop("seed")]
    seeds = cfg.get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds", "an explicit nonempty list of nonnegative integers is required")
    for key in REQUIRED[kind]:
        if key not in cfg:
            raise ConfigError(key, f"required for kind {kind}")
    for key in ("d", "D", "m", "n"):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < 1):
            raise ConfigError(key, "must be a positive integer")
    if "n" in cfg and cfg["n"] < 2:
        raise ConfigError("n", "must be >= 2")
    if "T" in cfg and not (isinstance(cfg["T"], (int, float)) and 0.5 < cfg["T"] < 1):
        raise ConfigError("T", "must lie in (0.5, 1)")
    if "R" in cfg and cfg["R"] is not None and not (isinstance(cfg["R"], (int, float)) and cfg["R"] > 0):
        raise ConfigError("R", "must be positive")
    if "c" in cfg and not (isinstance(cfg["c"], (int, float)) and cfg["c"] > 0):
        raise ConfigError("c", "must be positive")
    if kind == "end-to-end" and cfg["d"] > cfg["D"]:
        raise ConfigError("d", "latent dim cannot exceed data dim")
    if kind == "rate-sweep":
        base = cfg.get("base_kind", "train-latent")
        if base not in SWEEP_AXES:
            raise ConfigError("base_kind", f"cannot sweep {base!r}")
        if cfg["axis"] not in SWEEP_AXES[base]:
            raise ConfigError("axis", f"{cfg['axis']!r} is not a sweep axis for {base}")
        if not isinstance(cfg["values"], list) or len(cfg["values"]) < 2:
            raise ConfigError("values", "need at least two values")
        for key in REQUIRED[base]:
            if key not in cfg and key != cfg["axis"]:
                raise ConfigError(key, f"required for base kind {base}")
    return cfg
