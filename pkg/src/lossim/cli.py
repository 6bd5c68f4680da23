"""Command-line experiment runner.

Commands::

    lossim validate --scenario S [--streams N]
    lossim run      --scenario S --seed N [--streams N] --out DIR
    lossim sweep    --scenario S --streams 2,4,6,8,10 --repeats 5 --out DIR
    lossim compare  LOS_DIR BASELINE_DIR [--out FILE]
    lossim fitcheck --params a,b,c,d --noise 0.05 --samples 8

``--baseline-insitu`` turns forwarding off (max hops 0), so every training
either runs on its origin node or is dropped. Exit status: 0 success,
2 invalid scenario or arguments, 3 failure while running, 4 output exists.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import metrics
from .models import NoFit, RuntimeFit, fit_runtime_model
from .scenario import BUILTINS, Scenario, derive_seed, load_scenario
from .sim import InvariantViolation, RunConfig, event_log_lines, run_with_log
from .topology import ScenarioError

log = logging.getLogger("lossim")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3
EXIT_EXISTS = 4


class OutputExists(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("stream counts must be non-negative")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _prepare_out(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise OutputExists(f"{path} exists and is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)


def _scenario(args: argparse.Namespace, streams: int | None, seed: int) -> Scenario:
    if args.time_scale != 1.0 and args.scenario not in BUILTINS:
        raise ScenarioError("--time-scale applies to built-in scenarios only")
    return load_scenario(args.scenario, streams=streams, seed=seed, time_scale=args.time_scale)


def _config(args: argparse.Namespace, sc: Scenario, seed: int) -> RunConfig:
    max_hops = 0 if args.baseline_insitu else args.max_hops
    cfg = sc.run_config(seed, max_hops=max_hops)
    cfg.validate()
    return cfg


def _write_run(out: Path, cfg: RunConfig, report: metrics.MetricsReport, events: list | None, extra: dict) -> None:
    config = {**extra, **cfg.describe()}
    (out / "config.json").write_text(json.dumps(config, indent=2, default=str) + "\n")
    (out / "summary.txt").write_text(report.to_text())
    (out / "report.csv").write_text(metrics.report_csv(report))
    (out / "hops.csv").write_text(metrics.hops_csv(report))
    (out / "drops.csv").write_text(metrics.drops_csv(report))
    (out / "iterations.csv").write_text(metrics.iterations_csv(report))
    if events is not None:
        (out / "events.jsonl").write_text(event_log_lines(events))


# -- commands -----------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    sc = _scenario(args, args.streams, args.seed)
    _config(args, sc, args.seed)
    print(
        f"ok: {sc.name}, {len(sc.topology.nodes)} nodes, {len(sc.topology.links)} links, "
        f"{len(sc.workload.prediction_jobs)} streams"
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    sc = _scenario(args, args.streams, args.seed)
    cfg = _config(args, sc, args.seed)
    out = Path(args.out)
    _prepare_out(out, args.force)
    report, events = run_with_log(cfg)
    _write_run(out, cfg, report, events, {"command": "run", "time_scale": args.time_scale})
    print(report.to_text(), end="")
    return EXIT_OK


def _sweep_cell(job: tuple[str, int, int, int, dict[str, Any]]) -> tuple[int, int, int, metrics.MetricsReport, dict]:
    scenario, streams, rep, seed, opts = job
    ns = argparse.Namespace(**opts, scenario=scenario)
    sc = _scenario(ns, streams, seed)
    cfg = _config(ns, sc, seed)
    report, events = run_with_log(cfg)
    return streams, rep, seed, report, {"events": events if opts["events"] else None, "config": cfg}


def cmd_sweep(args: argparse.Namespace) -> int:
    out = Path(args.out)
    opts = {
        "time_scale": args.time_scale,
        "baseline_insitu": args.baseline_insitu,
        "max_hops": args.max_hops,
        "events": args.events,
    }
    cells = []
    for streams in args.streams:
        for rep in range(args.repeats):
            seed = derive_seed(args.seed, streams, rep)
            cells.append((args.scenario, streams, rep, seed, opts))
    # every cell must be valid before anything runs
    ns = argparse.Namespace(**opts, scenario=args.scenario)
    for _, streams, _, seed, _ in cells:
        _config(ns, _scenario(ns, streams, seed), seed)
    _prepare_out(out, args.force)

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]

    groups: dict[int, list[metrics.MetricsReport]] = {}
    max_hops = 0
    for streams, rep, seed, report, extra in results:
        cell_dir = out / f"streams_{streams:02d}" / f"rep_{rep}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        cfg = extra["config"]
        max_hops = max(max_hops, cfg.max_hops)
        _write_run(
            cell_dir,
            cfg,
            report,
            extra["events"],
            {"command": "sweep", "base_seed": args.seed, "repeat": rep, "time_scale": args.time_scale},
        )
        groups.setdefault(streams, []).append(report)
        log.info("streams=%d rep=%d seed=%d drop_rate=%.4f", streams, rep, seed, report.drop_rate)

    summary = metrics.drop_rate_summary(groups)
    (out / "drops_summary.csv").write_text(metrics.sweep_drops_csv(summary))
    (out / "hops_summary.csv").write_text(metrics.sweep_hops_csv(groups, max_hops))
    (out / "sweep.json").write_text(
        json.dumps(
            {
                "scenario": args.scenario,
                "base_seed": args.seed,
                "streams": args.streams,
                "repeats": args.repeats,
                "baseline_insitu": args.baseline_insitu,
                "time_scale": args.time_scale,
            },
            indent=2,
        )
        + "\n"
    )
    print(metrics.sweep_drops_csv(summary), end="")
    return EXIT_OK


def load_sweep(path: Path) -> dict[int, list[metrics.MetricsReport]]:
    groups: dict[int, list[metrics.MetricsReport]] = {}
    for summary in sorted(path.glob("streams_*/rep_*/summary.txt")):
        report = metrics.MetricsReport.from_text(summary.read_text())
        groups.setdefault(report.stream_count, []).append(report)
    if not groups:
        raise ScenarioError(f"{path}: no sweep results found")
    return groups


def cmd_compare(args: argparse.Namespace) -> int:
    los = load_sweep(Path(args.los_dir))
    base = load_sweep(Path(args.baseline_dir))
    try:
        gain = metrics.improvement_over_insitu(los, base)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    los_s = metrics.drop_rate_summary(los)
    base_s = metrics.drop_rate_summary(base)
    lines = ["streams,los_mean,baseline_mean,improvement_pp"]
    for s in sorted(gain):
        lines.append(f"{s},{los_s[s].mean:.6f},{base_s[s].mean:.6f},{gain[s]:.2f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        if out.exists() and not args.force:
            raise OutputExists(f"{out} exists (use --force to overwrite)")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    print(text, end="")
    return EXIT_OK


def fitcheck(params: Sequence[float], noise_cv: float, samples: int, seed: int = 0) -> list[tuple[float, float, float, float]]:
    """Fit noisy samples of a known runtime curve.

    Returns ``(limit, sampled, predicted, relative_error)`` per sample, with
    the error measured against the noise-free curve.
    """
    a, b, c, d = params
    if c <= 0 or b <= 0 or a < 0 or d < 0:
        raise ScenarioError("runtime curve needs a >= 0, b > 0, c > 0, d >= 0")
    if c > 1:
        raise ScenarioError("exponent c > 1 (superlinear speedup) is outside the fitted family")
    if samples < 3:
        raise ScenarioError("fitcheck needs at least 3 samples")
    truth = RuntimeFit(a, b, c, d)
    rng = np.random.default_rng(seed)
    limits = np.linspace(100.0, 800.0, samples)
    sampled = [truth.predict(r) * (1.0 + (rng.normal(0.0, noise_cv) if noise_cv > 0 else 0.0)) for r in limits]
    fit = fit_runtime_model(list(zip(limits, sampled)))
    rows = []
    for r, t in zip(limits, sampled):
        exact = truth.predict(r)
        pred = fit.predict(r)
        rows.append((float(r), float(t), float(pred), abs(pred - exact) / exact))
    return rows


def cmd_fitcheck(args: argparse.Namespace) -> int:
    if len(args.params) != 4:
        raise ScenarioError("--params takes four values a,b,c,d")
    try:
        rows = fitcheck(args.params, args.noise, args.samples, args.seed)
    except NoFit as exc:
        raise ScenarioError(str(exc)) from exc
    print("limit,sampled,predicted,relative_error")
    for r, t, p, e in rows:
        print(f"{r:.1f},{t:.6f},{p:.6f},{e:.6f}")
    print(f"max_relative_error,{max(e for *_, e in rows):.6f}")
    return EXIT_OK


# -- entry point --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lossim", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--scenario", default="paper-testbed", help="scenario file or built-in name")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--max-hops", type=int, default=None)
        sp.add_argument("--baseline-insitu", action="store_true", help="never forward (max hops 0)")
        sp.add_argument("--time-scale", type=float, default=1.0, help="compress time for built-ins (0.1 = 10x faster)")

    sp = sub.add_parser("validate", help="check a scenario without running it")
    scenario_args(sp)
    sp.add_argument("--streams", type=int, default=None)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("run", help="one simulation run")
    scenario_args(sp)
    sp.add_argument("--streams", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="runs over stream counts and repeats")
    scenario_args(sp)
    sp.add_argument("--streams", type=_int_list, default=[2, 4, 6, 8, 10])
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--events", action="store_true", help="also write per-run event logs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="drop-rate improvement of a LOS sweep over a baseline sweep")
    sp.add_argument("los_dir")
    sp.add_argument("baseline_dir")
    sp.add_argument("--out", default=None)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("fitcheck", help="fit the runtime curve to synthetic samples")
    sp.add_argument("--params", type=_float_list, default=[100000.0, 50.0, 1.0, 5.0])
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--samples", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_fitcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "repeats", 1) < 1:
        print("error: --repeats must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ScenarioError as exc:
        for line in getattr(exc, "violations", None) or [str(exc)]:
            print(f"invalid: {line}", file=sys.stderr)
        return EXIT_INVALID
    except OutputExists as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXISTS
    except (InvariantViolation, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
