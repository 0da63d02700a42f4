"""Command-line interface: ``approxint {train,gen-trace,run,report,sweep,selftest}``.

Output files go to ``--out-dir``, else ``$APPROXINT_OUT``, else ``./out``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .anytime import AnytimeModel
from .config import ConfigError, Settings, load_settings
from .corners import SCENES, read_pgm
from .energy import PRESETS, TraceError, load_trace, preset_trace, save_trace, synth_trace
from .experiments import coherence_crosscheck
from .report import compute_metrics, fmt
from .runtime import (
    STRATEGIES,
    CornerWorkload,
    LivelockError,
    RunLog,
    SvmWorkload,
    run,
)
from .train import build_model, sample_like

log = logging.getLogger("approxint")

OUT_ENV = "APPROXINT_OUT"


class CliError(Exception):
    pass


def out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUT_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _settings(args) -> Settings:
    return load_settings(args.config) if args.config else Settings()


# -- train ---------------------------------------------------------------------------------


def cmd_train(args) -> int:
    settings = _settings(args)
    recipe = settings.model
    overrides = {k: v for k, v in dict(classes=args.classes, features=args.features,
                                       data_seed=args.seed, cost_kind=args.cost_kind,
                                       cost_c0=args.c0).items() if v is not None}
    recipe = replace(recipe, **overrides)
    train_cfg = settings.train if args.epochs is None else replace(settings.train, epochs=args.epochs)
    model, holdout = build_model(recipe, train_cfg)
    path = out_dir(args) / args.out
    model.save(path)
    print(f"wrote {path} ({model.num_classes} classes, {model.num_features} features, "
          f"LUT[0]={model.accuracy_lut[0]:.3f})")
    return 0


# -- gen-trace ------------------------------------------------------------------------------


def cmd_gen_trace(args) -> int:
    if args.kind in PRESETS:
        trace = preset_trace(args.kind, args.duration, seed=args.seed)
    else:
        params = {k: getattr(args, k) for k in ("power", "high", "low", "period", "mean", "sigma",
                                                "step", "max_power", "min_power")
                  if getattr(args, k) is not None}
        trace = synth_trace(args.kind, args.duration, seed=args.seed, **params)
    path = out_dir(args) / (args.out or f"{args.kind.lower()}.csv")
    save_trace(trace, path)
    print(f"wrote {path} ({len(trace)} samples, {trace.harvested():.1f} uJ harvested)")
    return 0


# -- run / sweep ----------------------------------------------------------------------------


def _load_model(args, settings: Settings) -> AnytimeModel:
    if args.model:
        if not Path(args.model).is_file():
            raise CliError(f"model file {args.model} not found; create one with `approxint train`")
        return AnytimeModel.load(args.model)
    log.info("no --model given; training the configured recipe")
    return build_model(settings.model, settings.train)[0]


def _svm_items(args, model: AnytimeModel) -> tuple[np.ndarray, np.ndarray | None]:
    """Feature rows and labels (None when the items carry no label column)."""
    if args.items_csv:
        if not Path(args.items_csv).is_file():
            raise CliError(f"items file {args.items_csv} not found")
        rows = np.loadtxt(args.items_csv, delimiter=",", skiprows=1, ndmin=2)
        n = model.num_features
        if rows.shape[1] not in (n, n + 1):
            raise CliError(f"{args.items_csv}: expected {n} feature columns (+ optional label)")
        labels = rows[:, n].astype(int) if rows.shape[1] == n + 1 else None
        return rows[:, :n], labels
    gen = model.meta.get("generator")
    if gen is None:
        raise CliError("model has no generator metadata; pass --items-csv")
    data = sample_like(gen, args.items, seed=args.item_seed)
    return data.X, data.y


def build_workload(args, settings: Settings):
    if args.workload == "svm":
        model = _load_model(args, settings)
        X, labels = _svm_items(args, model)
        return SvmWorkload(model, X, labels, settings.svm.overhead_uj, settings.svm.output_uj)
    if args.images:
        images = [read_pgm(p) for p in args.images]
        reps = -(-args.items // len(images))
        names = [Path(p).stem for p in args.images]
        return CornerWorkload((images * reps)[:args.items], (names * reps)[:args.items],
                              settings.corners, settings.detector)
    return CornerWorkload.from_scenes(args.items, seed=args.item_seed, costs=settings.corners,
                                      params=settings.detector)


def _load_trace(spec: str, args):
    if spec in PRESETS:
        return preset_trace(spec, args.duration, seed=args.seed)
    if not Path(spec).is_file():
        raise CliError(f"trace {spec} is neither a file nor a preset ({', '.join(PRESETS)})")
    return load_trace(spec, format=args.trace_format, r_load=args.r_load)


def _execute(trace, workload, strategies, settings, seed):
    cfg = settings.runtime(workload.kind)
    configs = {c.label: c for c in map(settings.strategy, ["continuous", *strategies])}
    return {label: run(trace, workload, c, cfg, seed) for label, c in configs.items()}


def _report_config(settings: Settings, **extra) -> dict:
    return {**extra, "config_source": settings.source, **settings.effective()}


def cmd_run(args) -> int:
    settings = _settings(args)
    workload = build_workload(args, settings)
    trace = _load_trace(args.trace, args)
    logs = _execute(trace, workload, [args.strategy], settings, args.seed)
    dest = out_dir(args)
    stem = args.name or f"{workload.kind}-{Path(args.trace).stem}-s{args.seed}"
    for name, lg in logs.items():
        lg.save(dest / f"{stem}.{name.replace(':', '_')}.jsonl")
    rep = compute_metrics(logs, config=_report_config(settings, trace=trace.name, seed=args.seed,
                                                       workload=workload.kind,
                                                       model=args.model or "recipe"))
    rep.save(dest / f"{stem}.report.csv", dest / f"{stem}.latency.csv")
    m = rep[settings.strategy(args.strategy).label]
    print(f"{m.strategy}: {m.outputs_emitted} outputs, throughput_norm={fmt(m.throughput_norm)}, "
          f"coherence={fmt(m.coherence)}; wrote {dest / (stem + '.report.csv')}")
    return 0


def cmd_report(args) -> int:
    logs = {}
    for path in args.logs:
        if not Path(path).is_file():
            raise CliError(f"run log {path} not found")
        lg = RunLog.load(path)
        logs[lg.strategy] = lg
    rep = compute_metrics(logs, reference=args.reference,
                          config={"logs": ";".join(Path(p).name for p in args.logs)})
    dest = out_dir(args)
    rep.save(dest / args.out, dest / (Path(args.out).stem + ".latency.csv"))
    print(f"wrote {dest / args.out}")
    return 0


def _sweep_job(job):
    args, trace_spec, seed = job
    settings = _settings(args)
    workload = build_workload(args, settings)
    trace = _load_trace(trace_spec, argparse.Namespace(**{**vars(args), "seed": seed}))
    logs = _execute(trace, workload, args.strategies, settings, seed)
    rep = compute_metrics(logs)
    rows = []
    for name, m in rep.strategies.items():
        for metric, value in m.rows():
            rows.append([trace.name, seed, name, metric, fmt(value)])
    return rows


def cmd_sweep(args) -> int:
    settings = _settings(args)
    for s in args.strategies:
        settings.strategy(s)
    jobs = [(args, t, seed) for t in args.traces for seed in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    buf = io.StringIO()
    buf.write("# approxint-sweep/1\n")
    for key, value in sorted(_report_config(settings, workload=args.workload).items()):
        buf.write(f"# {key}={value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace", "seed", "strategy", "metric", "value"])
    for rows in results:
        w.writerows(rows)
    path = out_dir(args) / args.out
    path.write_text(buf.getvalue(), encoding="utf-8")
    print(f"wrote {path} ({len(jobs)} runs)")
    return 0


def cmd_selftest(args) -> int:
    rows = coherence_crosscheck(n=args.features, draws=args.draws, seed=args.seed)
    ok = True
    print("p  analytic  monte_carlo  gap")
    for r in rows:
        good = r.gap <= args.tolerance
        ok &= good
        print(f"{r.p:<2} {r.analytic:.4f}    {r.monte_carlo:.4f}       {r.gap:.4f} {'ok' if good else 'FAIL'}")
    end = rows[-1]
    if end.p == args.features and end.analytic != 1.0:
        ok = False
        print("FAIL: estimate with all features must be exactly 1")
    print("selftest passed" if ok else "selftest FAILED")
    return 0 if ok else 1


# -- parser ------------------------------------------------------------------------------------


def _strategy(text: str) -> str:
    kind = text.partition(":")[0].lower()
    if kind not in STRATEGIES:
        raise argparse.ArgumentTypeError(f"unknown strategy {text!r}; use one of "
                                         "continuous, greedy, smart:A, checkpoint[:interval]")
    return text.lower()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="approxint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding defaults")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or ./out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train and save an anytime SVM")
    p.add_argument("--out", default="model.json")
    p.add_argument("--classes", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--cost-kind", choices=["uniform", "heavy-tail"])
    p.add_argument("--c0", type=float, help="uniform feature cost (uJ)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gen-trace", parents=[common], help="write a synthetic or preset trace CSV")
    p.add_argument("--kind", required=True, choices=["constant", "square-wave", "random-walk", *PRESETS])
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    for name in ("power", "high", "low", "period", "mean", "sigma", "step", "max-power", "min-power"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_gen_trace)

    wl = argparse.ArgumentParser(add_help=False)
    wl.add_argument("--workload", choices=["svm", "corners"], default="svm")
    wl.add_argument("--model", help="model JSON (svm); default trains the configured recipe")
    wl.add_argument("--items", type=int, default=1000, help="number of work items")
    wl.add_argument("--item-seed", type=int, default=1)
    wl.add_argument("--items-csv", help="feature rows (+ label) instead of generated items")
    wl.add_argument("--images", nargs="+", help="PGM files (corners); default procedural scenes "
                    f"{', '.join(SCENES)}")
    wl.add_argument("--trace-format", choices=["power", "voltage"], default="power")
    wl.add_argument("--r-load", type=float, help="load resistance for voltage traces (ohm)")
    wl.add_argument("--duration", type=float, default=86_400.0, help="length of preset traces (s)")

    p = sub.add_parser("run", parents=[common, wl], help="simulate one strategy on one trace")
    p.add_argument("--trace", required=True, help="trace CSV or preset name")
    p.add_argument("--strategy", type=_strategy, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", help="file stem for outputs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="recompute metrics from run logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--reference", default="continuous")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", parents=[common, wl], help="strategies x traces x seeds")
    p.add_argument("--traces", nargs="+", required=True)
    p.add_argument("--strategies", nargs="+", type=_strategy,
                   default=["greedy", "smart:0.8", "smart:0.6", "checkpoint"])
    p.add_argument("--seeds", nargs="+", type=int, default=[0])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", help="analytic vs Monte Carlo coherence cross-check")
    p.add_argument("--features", type=int, default=40)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=0.01)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, TraceError, LivelockError, ValueError, OSError) as exc:
        print(f"approxint {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
