"""Command-line driver: ``latentflow run CONFIG`` and ``latentflow sweep CONFIG``.

Exit codes: 0 success, 2 invalid config or arguments (nothing written),
3 runtime failure (partial artifacts, manifest marked failed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import KINDS, RUNNERS, SWEEP_AXES, ConfigError, Outcome, sweep, validate
from .flow_matching import LOG_FIELDS, TrainingDiverged

log = logging.getLogger("latentflow")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else "%.17g" % float(v)
    return str(v)


def render_csv(columns, rows) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    canonical = json.dumps({"config": cfg, "version": __version__}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ArtifactWriter:
    def __init__(self, root: Path):
        self.root = root
        self.artifacts: list[dict] = []

    def write(self, relative: str, text: str) -> None:
        path = self.root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.artifacts.append({"path": relative, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})

    def outcome(self, outcome: Outcome) -> None:
        for table in outcome.tables:
            self.write(f"metrics/{table.name}.csv", render_csv(table.columns, table.rows))
        if outcome.reports:
            self.write(
                "metrics/construction_reports.jsonl",
                "".join(json.dumps(r, sort_keys=True) + "\n" for r in outcome.reports),
            )
        for name, rows in outcome.extra_files.items():
            columns = LOG_FIELDS if name.startswith("train_log") else ("epoch", "loss")
            self.write(f"logs/{name}.csv", render_csv(columns, rows))
        for name, payload in outcome.checkpoints.items():
            self.write(f"checkpoints/{name}.json", json.dumps(payload))

    def manifest(self, cfg: dict, status: str, error: str | None = None, extra: dict | None = None) -> None:
        doc = {
            "library": "latentflow",
            "version": __version__,
            "config": cfg,
            "config_hash": config_hash(cfg),
            "status": status,
            "noise_qualified": len(cfg.get("seeds", [])) > 1,
            "artifacts": self.artifacts,
        }
        if error is not None:
            doc["error"] = error
        if extra:
            doc.update(extra)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def output_dir(cfg: dict, out: str | None, suffix: str = "") -> Path:
    if out:
        return Path(out)
    if cfg.get("out"):
        return Path(cfg["out"])
    return Path("runs") / f"{cfg['kind']}{suffix}-{config_hash(cfg)[:8]}"


def _execute(writer: ArtifactWriter, cfg: dict, job, extra: dict | None = None) -> int:
    try:
        outcome = job()
    except (TrainingDiverged, FloatingPointError, ArithmeticError) as exc:
        writer.manifest(cfg, "failed", f"{type(exc).__name__}: {exc}", extra)
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    writer.outcome(outcome)
    writer.manifest(cfg, "ok", None, extra)
    print(writer.root / "manifest.json")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = validate(load_config(args.config))
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    writer = ArtifactWriter(output_dir(cfg, args.out))
    return _execute(writer, cfg, lambda: RUNNERS[cfg["kind"]](cfg))


def _parse_values(raw: str) -> list:
    values = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        number = float(item)
        values.append(int(number) if number.is_integer() and "." not in item else number)
    return values


def cmd_sweep(args) -> int:
    try:
        cfg = validate(load_config(args.config))
        kind = cfg["kind"]
        if kind not in SWEEP_AXES:
            raise ConfigError("kind", f"{kind} cannot be swept; use one of {sorted(SWEEP_AXES)}")
        try:
            values = _parse_values(args.values)
        except ValueError:
            raise ConfigError("--values", "expected comma-separated numbers") from None
        if len(values) < 2:
            raise ConfigError("--values", "need at least two values")
        if args.axis not in SWEEP_AXES[kind]:
            raise ConfigError("--axis", f"{args.axis!r} is not a sweep axis for {kind}; choose from {SWEEP_AXES[kind]}")
        cfg = {**cfg, "sweep": {"axis": args.axis, "values": values}}
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    writer = ArtifactWriter(output_dir(cfg, args.out, "-sweep"))
    return _execute(writer, cfg, lambda: sweep(cfg, kind, args.axis, values))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"latentflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help=f"run one experiment ({', '.join(KINDS)})")
    run.add_argument("config")
    run.add_argument("--out", help="output directory")
    run.add_argument("--verbose", "-v", action="count", default=0)
    run.set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", help="repeat an experiment over one axis")
    sw.add_argument("config")
    sw.add_argument("--axis", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out", help="output directory")
    sw.add_argument("--verbose", "-v", action="count", default=0)
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
