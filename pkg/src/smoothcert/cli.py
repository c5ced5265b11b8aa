"""Command line interface.

Four subcommands:

  certify     one-shot certification of a population file
  adaptive    staged certification with early abort
  theory      ensemble-size sweep under the Gaussian logit model
  thresholds  integer decision counts for a stage schedule

Every option can come from a JSON config file (--config); explicit flags
override file values. Commands that draw samples require a seed. Reports
embed a schema version and the resolved semantic configuration, so a rerun
with the same seed and parameters is byte-identical regardless of worker
count. Figures are rendered next to the delimited output unless
--no-figures is given.

Exit codes: 0 success, 2 bad usage or config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import reports
from .bounds import ConvergenceError
from .certify import (
    DEFAULT_RADIUS_GRID,
    AdaptiveSchedule,
    batch_certify,
    stage_thresholds,
)
from .classifiers import NoiseSource, load_classifier
from .ensemble import EnsembleClassifier
from .theory import k_sweep, read_model_csv

__all__ = ["main", "RunConfig"]

log = logging.getLogger("smoothcert")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Resolved parameters for one command invocation.

    `values` holds the semantic parameters embedded in reports; `execution`
    holds knobs that cannot change results (workers, output paths, figure
    switch) and is kept out of report files.
    """

    command: str
    values: dict
    execution: dict

    def __getitem__(self, key):
        if key in self.values:
            return self.values[key]
        return self.execution[key]


def _int_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(int(p) for p in parts)


def _float_list(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(p) for p in parts)


def _k_list(text) -> tuple:
    """Ensemble sizes: either 'lo-hi' (inclusive) or a comma list."""
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    if "-" in text and "," not in text:
        lo, hi = text.split("-", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError("k range must be lo-hi with hi >= lo")
        return tuple(range(lo, hi + 1))
    return _int_list(text)


# Per-command semantic parameters: name -> (coercer, default). A default of
# _REQUIRED means the value must come from a flag or the config file.
_REQUIRED = object()

_COERCERS = {
    "certify": {
        "classifier": (str, _REQUIRED),
        "population": (str, _REQUIRED),
        "sigma": (float, _REQUIRED),
        "seed": (int, _REQUIRED),
        "n0": (int, 100),
        "n": (int, 100000),
        "alpha": (float, 0.001),
        "baseline_n": (lambda v: None if v is None else int(v), None),
        "radius_grid": (_float_list, DEFAULT_RADIUS_GRID),
        "ensemble_mode": (lambda v: None if v is None else str(v), None),
        "consensus_k": (lambda v: None if v is None else int(v), None),
    },
    "adaptive": {
        "classifier": (str, _REQUIRED),
        "population": (str, _REQUIRED),
        "sigma": (float, _REQUIRED),
        "seed": (int, _REQUIRED),
        "radius": (float, _REQUIRED),
        "stages": (_int_list, (100, 1000, 10000, 120000)),
        "n0": (int, 100),
        "alpha": (float, 0.001),
        "beta": (float, 0.001),
        "baseline_n": (lambda v: None if v is None else int(v), None),
        "radius_grid": (_float_list, DEFAULT_RADIUS_GRID),
        "ensemble_mode": (lambda v: None if v is None else str(v), None),
        "consensus_k": (lambda v: None if v is None else int(v), None),
    },
    "theory": {
        "model": (str, _REQUIRED),
        "sigma": (float, _REQUIRED),
        "seed": (int, _REQUIRED),
        "ks": (_k_list, tuple(range(1, 51))),
        "n": (int, 1000),
        "alpha": (float, 0.001),
        "mc": (int, 100000),
    },
    "thresholds": {
        "sigma": (float, _REQUIRED),
        "radius": (float, _REQUIRED),
        "stages": (_int_list, (100, 1000, 10000, 120000)),
        "alpha": (float, 0.001),
        "beta": (float, 0.001),
        "n0": (int, 100),
    },
}

_EXECUTION_KEYS = {"workers", "out_dir", "stem", "figures"}


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config-file values, and explicit flags (flags win)."""
    spec = _COERCERS[command]
    file_values = {}
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(file_values) - set(spec) - _EXECUTION_KEYS
        if unknown:
            raise ValueError(f"unknown config keys for {command}: {sorted(unknown)}")

    flag_values = vars(args)
    values = {}
    for key, (coerce, default) in spec.items():
        value = flag_values.get(key)
        if value is None:
            value = file_values.get(key)
        if value is None:
            value = default
        if value is _REQUIRED:
            raise ValueError(f"{key} is required (flag --{key.replace('_', '-')} or config file)")
        values[key] = value if value is None else coerce(value)

    workers = flag_values.get("workers")
    if workers is None:
        workers = file_values.get("workers", 1)
    execution = {
        "workers": int(workers),
        "out_dir": flag_values.get("out_dir") or file_values.get("out_dir") or ".",
        "stem": flag_values.get("stem"),
        "figures": (
            False
            if flag_values.get("no_figures")
            else bool(file_values.get("figures", True))
        ),
    }
    if execution["workers"] < 1:
        raise ValueError("workers must be >= 1")
    return RunConfig(command=command, values=values, execution=execution)


def _load_population_classifier(cfg: RunConfig):
    clf = load_classifier(cfg["classifier"])
    mode = cfg["ensemble_mode"]
    kc = cfg["consensus_k"]
    if mode is not None or kc is not None:
        if not isinstance(clf, EnsembleClassifier):
            raise ValueError("--ensemble-mode/--consensus-k need an ensemble classifier")
        replacements = {}
        if mode is not None:
            replacements["mode"] = mode
        if kc is not None:
            replacements["consensus_k"] = kc
        clf = dataclasses.replace(clf, **replacements)
    ids, xs, labels = reports.read_population_csv(cfg["population"])
    if xs.shape[1] != clf.dim:
        raise ValueError(
            f"population dimension {xs.shape[1]} does not match classifier dim {clf.dim}"
        )
    return clf, ids, xs, labels


def _report_config(cfg: RunConfig) -> dict:
    cleaned = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.values.items()}
    return {"command": cfg.command, **cleaned}


def _emit_report(report, cfg: RunConfig, default_stem: str, adaptive: bool) -> Path:
    out_dir = Path(cfg.execution["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg.execution["stem"] or default_stem
    csv_path = out_dir / f"{stem}.csv"
    reports.write_report_csv(report, csv_path)
    reports.write_report_json(report, out_dir / f"{stem}.json")
    if cfg.execution["figures"]:
        reports.certified_accuracy_figure(report, out_dir / f"{stem}_accuracy.png")
        if adaptive and report.asr is not None:
            reports.stage_share_figure(report, out_dir / f"{stem}_stages.png")
    return csv_path


def _print_summary(report) -> None:
    print(f"inputs {len(report.ids)}")
    print(f"ACR {report.acr!r}")
    print("radius certified_accuracy")
    for radius, value in report.certified_accuracy:
        print(f"{radius:g} {value!r}")
    print(f"mean_samples {report.mean_samples!r}")
    print(f"sample_rf {report.sample_rf!r}")
    print(f"time_rf {report.time_rf!r}")
    print(f"kcr {report.kcr!r}")
    if report.asr is not None:
        print("stage_shares " + " ".join(repr(v) for v in report.asr))


def _print_thresholds(rows) -> None:
    print("stage samples certify_count abort_count")
    for row in rows:
        certify = "never" if row.certify_count is None else row.certify_count
        abort = "-" if row.abort_count is None else row.abort_count
        print(f"{row.stage} {row.samples} {certify} {abort}")


def cmd_certify(args) -> int:
    cfg = resolve_config("certify", args)
    clf, ids, xs, labels = _load_population_classifier(cfg)
    noise = NoiseSource(seed=cfg["seed"], sigma=cfg["sigma"])
    started = time.perf_counter()
    report = batch_certify(
        clf,
        xs,
        labels,
        noise,
        n0=cfg["n0"],
        n=cfg["n"],
        alpha=cfg["alpha"],
        workers=cfg.execution["workers"],
        radius_grid=cfg["radius_grid"],
        baseline_n=cfg["baseline_n"],
        ids=ids,
        config=_report_config(cfg),
    )
    log.info("certified %d inputs in %.2fs", len(ids), time.perf_counter() - started)
    csv_path = _emit_report(report, cfg, "report", adaptive=False)
    _print_summary(report)
    print(f"report {csv_path}")
    return 0


def cmd_adaptive(args) -> int:
    cfg = resolve_config("adaptive", args)
    clf, ids, xs, labels = _load_population_classifier(cfg)
    schedule = AdaptiveSchedule(
        stage_sizes=cfg["stages"],
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        target_radius=cfg["radius"],
        sigma=cfg["sigma"],
        n0=cfg["n0"],
    )
    noise = NoiseSource(seed=cfg["seed"], sigma=cfg["sigma"])
    _print_thresholds(stage_thresholds(schedule))
    started = time.perf_counter()
    report = batch_certify(
        clf,
        xs,
        labels,
        noise,
        schedule=schedule,
        workers=cfg.execution["workers"],
        radius_grid=cfg["radius_grid"],
        baseline_n=cfg["baseline_n"],
        ids=ids,
        config=_report_config(cfg),
    )
    log.info("certified %d inputs in %.2fs", len(ids), time.perf_counter() - started)
    csv_path = _emit_report(report, cfg, "adaptive_report", adaptive=True)
    _print_summary(report)
    print(f"report {csv_path}")
    return 0


def cmd_theory(args) -> int:
    cfg = resolve_config("theory", args)
    model = read_model_csv(cfg["model"])
    started = time.perf_counter()
    rows = k_sweep(
        model,
        cfg["ks"],
        n=cfg["n"],
        alpha=cfg["alpha"],
        sigma=cfg["sigma"],
        n_mc=cfg["mc"],
        seed=cfg["seed"],
    )
    log.info("swept %d ensemble sizes in %.2fs", len(rows), time.perf_counter() - started)
    out_dir = Path(cfg.execution["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg.execution["stem"] or "sweep"
    csv_path = out_dir / f"{stem}.csv"
    reports.write_sweep_csv(rows, csv_path, config=_report_config(cfg))
    if cfg.execution["figures"]:
        reports.sweep_figure(rows, out_dir / f"{stem}.png")
    print("k p1 expected_radius")
    for row in rows:
        print(f"{row.k} {row.p1!r} {row.expected_radius!r}")
    print(f"sweep {csv_path}")
    return 0


def cmd_thresholds(args) -> int:
    cfg = resolve_config("thresholds", args)
    schedule = AdaptiveSchedule(
        stage_sizes=cfg["stages"],
        alpha=cfg["alpha"],
        beta=cfg["beta"],
        target_radius=cfg["radius"],
        sigma=cfg["sigma"],
        n0=cfg["n0"],
    )
    _print_thresholds(stage_thresholds(schedule))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; explicit flags override it")
    parser.add_argument("--seed", type=int, help="base seed for all sampling streams")
    parser.add_argument("--sigma", type=float, help="Gaussian noise scale")
    parser.add_argument("--alpha", type=float, help="certification failure budget")
    parser.add_argument("--out-dir", dest="out_dir", help="directory for report files")
    parser.add_argument("--stem", help="basename for report files")
    parser.add_argument(
        "--no-figures",
        dest="no_figures",
        action="store_true",
        help="skip figure rendering",
    )
    parser.add_argument("--workers", type=int, help="parallel worker processes")


def _add_population(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--classifier", help="classifier definition JSON")
    parser.add_argument("--population", help="population CSV (id,label,x0,...)")
    parser.add_argument("--baseline-n", dest="baseline_n", type=int, help="baseline per-input sample count for reduction factors")
    parser.add_argument("--radius-grid", dest="radius_grid", help="comma list of radii for the accuracy curve")
    parser.add_argument("--ensemble-mode", dest="ensemble_mode", help="override ensemble aggregation mode")
    parser.add_argument("--consensus-k", dest="consensus_k", type=int, help="override consensus early-exit size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoothcert",
        description="Certification engine for Gaussian-smoothed classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="one-shot certification of a population")
    _add_common(p)
    _add_population(p)
    p.add_argument("--n0", type=int, help="selection samples per input")
    p.add_argument("--n", type=int, help="estimation samples per input")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("adaptive", help="staged certification with early abort")
    _add_common(p)
    _add_population(p)
    p.add_argument("--radius", type=float, help="target radius to certify")
    p.add_argument("--stages", help="comma list of stage sample sizes")
    p.add_argument("--beta", type=float, help="early-abort failure budget")
    p.add_argument("--n0", type=int, help="selection samples per input")
    p.set_defaults(func=cmd_adaptive)

    p = sub.add_parser("theory", help="ensemble-size sweep under the Gaussian logit model")
    _add_common(p)
    p.add_argument("--model", help="Gaussian logit model CSV")
    p.add_argument("--ks", help="ensemble sizes: lo-hi or comma list")
    p.add_argument("--n", type=int, help="certification sample count for the radius distribution")
    p.add_argument("--mc", type=int, help="Monte Carlo draws per ensemble size")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("thresholds", help="integer decision counts for a stage schedule")
    _add_common(p)
    p.add_argument("--radius", type=float, help="target radius to certify")
    p.add_argument("--stages", help="comma list of stage sample sizes")
    p.add_argument("--beta", type=float, help="early-abort failure budget")
    p.add_argument("--n0", type=int, help="selection samples per input")
    p.set_defaults(func=cmd_thresholds)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
