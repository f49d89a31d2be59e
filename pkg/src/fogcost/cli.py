"""Command-line entry point: curve, optimize, sweep, report, sensitivity."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cost import CURVE_COLUMNS, ConfigError, closed_form_report, cost_curve, numeric_optimum
from .data import DataError, filter_binary, load_covtype, partition_poisson, split_train_test, standardize
from .manifest import ExperimentManifest, ManifestError, from_mapping, load_manifest
from .sweep import gain_pct, plot_data, sensitivity_csv, sensitivity_sweep, sweep_csv, sweep_gamma

log = logging.getLogger("fogcost")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_MISSING = 0, 1, 2, 3
# sweeps above this many devices need --long
DESK_MAX_M0 = 100


class RuntimeFailure(RuntimeError):
    pass


def eps_tag(eps: float) -> str:
    return f"{eps:.0e}"


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_provenance(out: Path, m: ExperimentManifest, command: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.yaml").write_text(m.source_text)
    (out / "run.json").write_text(dump_json({
        "tool": "fogcost", "version": __version__, "command": command, "seed": m.seed,
    }))


def cmd_curve(m: ExperimentManifest, out: Path) -> list[Path]:
    paths = []
    for eps in m.epsilon:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in cost_curve(m.system_config(eps)):
            w.writerow([repr(getattr(row, c)) for c in CURVE_COLUMNS])
        path = out / f"curve_eps{eps_tag(eps)}.csv"
        path.write_text(buf.getvalue())
        paths.append(path)
    return paths


def optimum_record(m: ExperimentManifest, eps: float) -> dict:
    cfg = m.system_config(eps)
    rec = {"epsilon": eps, "numeric": numeric_optimum(cfg).as_dict()}
    if cfg.mu == 0:
        closed = closed_form_report(cfg)
        rec["closed_form"] = closed.as_dict()
        g_num, g_cf = rec["numeric"]["gamma_unclamped"], closed.gamma_unclamped
        if isinstance(g_num, float) and math.isfinite(g_cf):
            rec["relative_gap"] = abs(g_num - g_cf) / g_cf
    return rec


def cmd_optimize(m: ExperimentManifest, out: Path) -> list[Path]:
    paths = []
    for eps in m.epsilon:
        path = out / f"optimize_eps{eps_tag(eps)}.json"
        path.write_text(dump_json(optimum_record(m, eps)))
        paths.append(path)
    if m.sensitivity_axis:
        paths += cmd_sensitivity(m, out)
    return paths


def cmd_sensitivity(m: ExperimentManifest, out: Path) -> list[Path]:
    if not m.sensitivity_axis:
        raise ManifestError("sensitivity_axis", "required for the sensitivity command")
    table = sensitivity_sweep(m.system_config(), m.sensitivity_axis, m.sensitivity_values, m.alphas)
    path = out / f"sensitivity_{m.sensitivity_axis}.csv"
    path.write_text(sensitivity_csv(m.sensitivity_axis, table))
    return [path]


def load_training_data(m: ExperimentManifest):
    path = Path(m.dataset)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    ds = filter_binary(load_covtype(path), *m.classes)
    train, _test = split_train_test(ds, m.train_fraction, m.seed)
    if m.standardize:
        train = standardize(train)
    return train


def check_sweep_allowed(m: ExperimentManifest, long: bool):
    if (m.profile == "paper" or m.m0 > DESK_MAX_M0) and not long:
        raise ManifestError("profile", f"sweeps beyond m0={DESK_MAX_M0} or the paper profile need --long")
    if not Path(m.dataset).exists():
        raise FileNotFoundError(f"dataset not found: {m.dataset}")


def cmd_sweep(m: ExperimentManifest, out: Path, long: bool = False) -> list[Path]:
    check_sweep_allowed(m, long)
    train = load_training_data(m)
    partitions = [
        partition_poisson(train, m.m0, m.n0, int(np.random.SeedSequence([m.seed, rep]).generate_state(1)[0]))
        for rep in range(m.replications)
    ]
    paths, summaries = [], []
    failures = cells = 0
    for eps in m.epsilon:
        t0 = time.perf_counter()
        result = sweep_gamma(
            train, partitions, m.system_config(eps), m.learner_config(eps),
            gamma_set=m.gammas(), replications=m.replications, seed=m.seed, workers=m.workers,
        )
        log.info("eps=%g swept %d levels in %.1fs", eps, len(result.rows), time.perf_counter() - t0)
        tag = eps_tag(eps)
        for name, text in (
            (f"sweep_eps{tag}.csv", sweep_csv(result)),
            (f"summary_eps{tag}.json", dump_json(result.summary())),
            (f"plot_eps{tag}.dat", plot_data(result)),
        ):
            (out / name).write_text(text)
            paths.append(out / name)
        summaries.append(result.summary())
        failures += result.failures
        cells += len(result.rows) * m.replications
    (out / "summary.json").write_text(dump_json(summaries))
    paths.append(out / "summary.json")
    if cells and failures > cells / 2:
        raise RuntimeFailure(f"{failures} of {cells} runs diverged or hit max_rounds")
    return paths


def _read_manifest(directory: Path) -> dict:
    path = directory / "manifest.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no manifest.yaml in {directory}")
    comparable = from_mapping(yaml.safe_load(path.read_text()) or {}).comparable()
    run = json.loads((directory / "run.json").read_text()) if (directory / "run.json").exists() else {}
    comparable["seed"] = run.get("seed", comparable["seed"])
    return comparable


def _read_sweep_rows(path: Path) -> dict[int, dict]:
    with open(path, newline="") as fh:
        return {int(r["m1"]): r for r in csv.DictReader(fh)}


def _num(x):
    return float(x) if x not in (None, "") else math.nan


def cmd_report(sweep_dir: Path, model_dir: Path, out: Path) -> list[Path]:
    a, b = _read_manifest(sweep_dir), _read_manifest(model_dir)
    diff = {k: (a.get(k), b.get(k)) for k in sorted(set(a) | set(b)) if a.get(k) != b.get(k)}
    if diff:
        lines = [f"  {k}: sweep={v[0]!r} model={v[1]!r}" for k, v in diff.items()]
        raise ManifestError("manifest", "artifact sets come from different experiments:\n" + "\n".join(lines))
    m0 = int(a["m0"])
    comparison, gains = [], []
    for eps in a["epsilon"]:
        tag = eps_tag(eps)
        opt_path = model_dir / f"optimize_eps{tag}.json"
        sweep_path = sweep_dir / f"sweep_eps{tag}.csv"
        if not opt_path.exists() or not sweep_path.exists():
            raise FileNotFoundError(f"missing artifacts for eps={tag}")
        m1_hat = int(json.loads(opt_path.read_text())["numeric"]["m1_hat"])
        rows = _read_sweep_rows(sweep_path)
        valid = {k: r for k, r in rows.items() if int(r["replications"]) > 0}
        star_m1 = min(valid, key=lambda k: (_num(valid[k]["cost_total_mean"]), m0 / k)) if valid else None
        star, hat = valid.get(star_m1), valid.get(m1_hat)
        c_star = _num(star["cost_total_mean"]) if star else math.nan
        c_hat = _num(hat["cost_total_mean"]) if hat else math.nan
        comparison.append({
            "epsilon": eps,
            "gamma_star": m0 / star_m1 if star_m1 else math.nan,
            "gamma_hat": m0 / m1_hat,
            "rounds_star": _num(star["rounds_mean"]) if star else math.nan,
            "rounds_hat": _num(hat["rounds_mean"]) if hat else math.nan,
            "cost_star": c_star,
            "cost_hat": c_hat,
            "overhead_pct": 100.0 * (c_hat - c_star) / c_star,
        })
        lo, hi = valid.get(m0), valid.get(1)
        c_lo = _num(lo["cost_total_mean"]) if lo else math.nan
        c_hi = _num(hi["cost_total_mean"]) if hi else math.nan
        gains.append({
            "epsilon": eps,
            "gamma_hat": m0 / m1_hat,
            "cost_decentralised": c_lo,
            "cost_hat": c_hat,
            "cost_centralised": c_hi,
            "gain_vs_decentralised_pct": gain_pct(c_lo, c_hat),
            "gain_vs_centralised_pct": gain_pct(c_hi, c_hat),
        })
    paths = []
    for name, table in (("comparison.csv", comparison), ("gains.csv", gains)):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(table[0]), lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        (out / name).write_text(buf.getvalue())
        paths.append(out / name)
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fogcost", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("curve", "model cost curve over all feasible levels"),
        ("optimize", "cost-optimal aggregation level"),
        ("sweep", "empirical DSVRG sweep on the dataset"),
        ("sensitivity", "model optimum along one parameter axis"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--manifest", required=True, help="manifest path or built-in profile name (paper, desk)")
        p.add_argument("--out", help="output directory (default: manifest 'out' or runs/<profile>-<command>)")
        p.add_argument("--seed", type=int, help="override the manifest master seed")
        p.add_argument("--long", action="store_true", help="allow paper-scale sweeps")
    p = sub.add_parser("report", help="compare sweep artifacts with model artifacts")
    p.add_argument("--sweep", required=True, type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    return parser


def run(args) -> list[Path]:
    if args.command == "report":
        args.out.mkdir(parents=True, exist_ok=True)
        return cmd_report(args.sweep, args.model, args.out)
    m = load_manifest(args.manifest)
    if args.seed is not None:
        m.seed = args.seed
    out = Path(args.out or m.out or f"runs/{m.profile}-{args.command}")
    if args.command == "sweep":
        check_sweep_allowed(m, args.long)
    write_provenance(out, m, args.command)
    if args.command == "curve":
        return cmd_curve(m, out)
    if args.command == "optimize":
        return cmd_optimize(m, out)
    if args.command == "sensitivity":
        return cmd_sensitivity(m, out)
    return cmd_sweep(m, out, long=args.long)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        paths = run(args)
    except (ManifestError, ConfigError, DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
