"""Command-line experiment runner.

    cascade-rec synth --output data.tsv
    cascade-rec train --config exp.cfg --set trainer.epochs=5 --out runs/exp
    cascade-rec ablate --mode ablation-table3 --out runs/table3
    cascade-rec sweep --knob pool_size --values 50,100,200

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort.

Each run directory holds ``config.cfg``, one ``seed_<s>/`` folder per seed
(``retriever.ckpt``, ``ranker.ckpt``, ``metrics.jsonl``, ``losses.jsonl``) and
``summary.tsv``: mean and population std over seeds of the last epoch's rows
in the per-seed ``metrics.jsonl`` files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, ExperimentSpec, build_spec, dump_flat, load_flat, parse_lines
from .dataset import DataError, InteractionDataset, ingest, parse_lines as parse_interactions
from .dataset import build_dataset, synthesize_records, write_interactions
from .evaluation import MODES, EvalConfig, MetricsReport, evaluate, write_reports
from .strategies import KL_STRATEGIES, NEGATIVE_STRATEGIES
from .trainer import NumericalError, train

log = logging.getLogger("cascade_rec")

OUT_ENV = "CASCADE_REC_OUT"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
METRICS = ("ndcg", "recall", "mrr")
ABLATIONS = {
    "ablation-table3": ("trainer.ranker_negative_strategy", NEGATIVE_STRATEGIES),
    "ablation-table4": ("trainer.kl_item_strategy", KL_STRATEGIES),
}
SWEEP_KNOBS = {"pool_size": "sampler.pool_size"}


# ---------------------------------------------------------------- data

def load_dataset(spec: ExperimentSpec) -> InteractionDataset:
    d = spec.data
    if d.path:
        return ingest(d.path, d.min_interactions, d.max_seq_len)
    records = synthesize_records(d.num_users, d.num_items, d.latent_dim, d.min_len, d.max_len,
                                 d.sharpness, d.seed, d.curvature, d.interests)
    return build_dataset(records, d.min_interactions, d.max_seq_len)


def eval_config(spec: ExperimentSpec) -> EvalConfig:
    e = spec.eval
    return EvalConfig(k=e.k, retrieve_k=e.retrieve_k, exclude_interacted=e.exclude_interacted)


# ---------------------------------------------------------------- runs

def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {exc}") from None
    return path


def run_seed(spec: ExperimentSpec, ds: InteractionDataset, seed: int, out: Path) -> list[MetricsReport]:
    """Train one seed and write its checkpoints and metrics under ``out``."""
    cfg = replace(spec.trainer, seed=seed)
    ev = eval_config(spec)
    seed_dir = _prepare_dir(out / f"seed_{seed}")
    result = train(cfg, ds, ev)
    reports = result.reports if cfg.epochs > 0 else evaluate(ds, result.retriever, result.ranker, ev, epoch=0)
    checkpoint.save(result.retriever, seed_dir / "retriever.ckpt")
    checkpoint.save(result.ranker, seed_dir / "ranker.ckpt")
    with open(seed_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        write_reports(reports, fh)
    with open(seed_dir / "losses.jsonl", "w", encoding="utf-8") as fh:
        for row in result.losses:
            fh.write(json.dumps(row) + "\n")
    return reports


def _run_seed_job(args):
    spec, seed, out = args
    return run_seed(spec, load_dataset(spec), seed, Path(out))


def read_metrics(path: str | Path) -> list[MetricsReport]:
    with open(path, encoding="utf-8") as fh:
        return [MetricsReport.from_json(line) for line in fh if line.strip()]


def summarize(per_seed: dict[int, list[MetricsReport]]) -> dict[tuple[str, str], tuple[float, float, int]]:
    """Mean and population std over seeds of each (mode, metric) at the last epoch."""
    out = {}
    for mode in MODES:
        rows = []
        for reports in per_seed.values():
            last = max(r.epoch for r in reports)
            rows.extend(r for r in reports if r.epoch == last and r.mode == mode)
        for metric in METRICS:
            values = np.array([getattr(r, metric) for r in rows])
            out[(mode, metric)] = (float(values.mean()), float(values.std()), len(values))
    return out


def format_summary(summary) -> str:
    lines = ["mode\tmetric\tmean\tstd\tseeds"]
    for (mode, metric), (mean, std, n) in summary.items():
        lines.append(f"{mode}\t{metric}\t{mean:.6f}\t{std:.6f}\t{n}")
    return "\n".join(lines) + "\n"


def parse_summary(text: str):
    out = {}
    for line in text.splitlines()[1:]:
        mode, metric, mean, std, n = line.split("\t")
        out[(mode, metric)] = (float(mean), float(std), int(n))
    return out


def run_experiment(spec: ExperimentSpec, out: str | Path, workers: int = 1, emit_plots: bool = False,
                   ds: InteractionDataset | None = None):
    """Train every seed in ``spec.seeds`` and write the run directory. Returns the summary."""
    out = _prepare_dir(Path(out))
    (out / "config.cfg").write_text(dump_flat(spec), encoding="utf-8")
    if workers > 1 and len(spec.seeds) > 1:
        jobs = [(spec, s, str(out)) for s in spec.seeds]
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_seed_job, jobs))
        per_seed = dict(zip(spec.seeds, results))
    else:
        ds = ds if ds is not None else load_dataset(spec)
        per_seed = {s: run_seed(spec, ds, s, out) for s in spec.seeds}
    summary = summarize(per_seed)
    (out / "summary.tsv").write_text(format_summary(summary), encoding="utf-8")
    if emit_plots:
        plot_epochs(per_seed, out / "metrics_vs_epoch.svg")
    return summary


def comparison_table(rows: dict[str, dict], label: str, k: int) -> str:
    """Strategy rows by two-stage NDCG/Recall/MRR columns, each mean and std."""
    head = [label] + [f"{m}@{k}_{s}" for m in METRICS for s in ("mean", "std")]
    lines = ["\t".join(head)]
    for name, summary in rows.items():
        cells = [name]
        for metric in METRICS:
            mean, std, _ = summary[("two_stage", metric)]
            cells += [f"{mean:.6f}", f"{std:.6f}"]
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def ordering(rows: dict[str, dict]) -> str:
    names = sorted(rows, key=lambda n: -rows[n][("two_stage", "ndcg")][0])
    return " > ".join(names)


def run_ablation(spec: ExperimentSpec, mode: str, out: str | Path, workers: int = 1):
    if mode not in ABLATIONS:
        raise ConfigError(f"unknown ablation mode {mode!r}; choose from {sorted(ABLATIONS)}")
    key, strategies = ABLATIONS[mode]
    out = _prepare_dir(Path(out))
    ds = load_dataset(spec)
    rows = {}
    for name in strategies:
        sub = build_spec({key: name}, base=spec)
        rows[name] = run_experiment(sub, out / name, workers, ds=ds)
    table = comparison_table(rows, "strategy", spec.eval.k)
    (out / f"{mode}.tsv").write_text(table, encoding="utf-8")
    (out / "ordering.txt").write_text(ordering(rows) + "\n", encoding="utf-8")
    return rows


def run_sweep(spec: ExperimentSpec, knob: str, values, out: str | Path, workers: int = 1,
              emit_plots: bool = False):
    if knob not in SWEEP_KNOBS:
        raise ConfigError(f"unknown sweep knob {knob!r}; choose from {sorted(SWEEP_KNOBS)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = _prepare_dir(Path(out))
    ds = load_dataset(spec)
    rows = {}
    for v in values:
        sub = build_spec({SWEEP_KNOBS[knob]: str(v)}, base=spec)
        rows[str(v)] = run_experiment(sub, out / f"{knob}_{v}", workers, ds=ds)
    (out / f"sweep_{knob}.tsv").write_text(comparison_table(rows, knob, spec.eval.k), encoding="utf-8")
    if emit_plots:
        plot_sweep(rows, knob, out / f"ndcg_vs_{knob}.svg")
    return rows


# ---------------------------------------------------------------- plots

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "cascade-rec"
    import matplotlib.pyplot as plt

    return plt


def plot_epochs(per_seed, path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in MODES:
        epochs = sorted({r.epoch for reports in per_seed.values() for r in reports})
        means = [np.mean([r.ndcg for reports in per_seed.values() for r in reports
                          if r.epoch == e and r.mode == mode]) for e in epochs]
        ax.plot(epochs, means, marker="o", label=mode)
    ax.set_xlabel("epoch")
    ax.set_ylabel("NDCG (seed mean)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_sweep(rows, knob: str, path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [float(v) for v in rows]
    for mode in MODES:
        ax.plot(xs, [s[(mode, "ndcg")][0] for s in rows.values()], marker="o", label=mode)
    ax.set_xlabel(knob)
    ax.set_ylabel("NDCG (seed mean)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------- commands

def _spec_from_args(args) -> ExperimentSpec:
    flat = load_flat(args.config) if args.config else {}
    flat.update(parse_lines(args.set or []))
    return build_spec(flat)


def _out_dir(args, spec: ExperimentSpec) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or spec.output_dir)


def cmd_ingest(args, spec):
    if not Path(args.input).is_file():
        raise DataError(f"{args.input}: no such file")
    with open(args.input, encoding="utf-8") as fh:
        records = parse_interactions(fh)
    ds = build_dataset(records, spec.data.min_interactions, spec.data.max_seq_len)
    users, items = set(ds.user_ids), set(ds.item_ids)
    if args.output:
        write_interactions([r for r in records if r.user_id in users and r.item_id in items], args.output)
    print(f"users={ds.num_users} items={ds.num_items} interactions={sum(len(s) for s in ds.sequences)}")


def cmd_synth(args, spec):
    d = spec.data
    records = synthesize_records(d.num_users, d.num_items, d.latent_dim, d.min_len, d.max_len,
                                 d.sharpness, d.seed, d.curvature, d.interests)
    write_interactions(records, args.output)
    print(f"wrote {len(records)} interactions to {args.output}")


def cmd_train(args, spec):
    out = _out_dir(args, spec)
    summary = run_experiment(spec, out, args.workers, args.emit_plots)
    sys.stdout.write(format_summary(summary))


def cmd_evaluate(args, spec):
    ds = load_dataset(spec)
    run = Path(args.run)
    seed_dir = run if (run / "retriever.ckpt").exists() else run / f"seed_{spec.seeds[0]}"
    try:
        retriever = checkpoint.load(seed_dir / "retriever.ckpt")
        ranker = checkpoint.load(seed_dir / "ranker.ckpt")
    except (OSError, checkpoint.CheckpointError) as exc:
        raise DataError(str(exc)) from None
    if retriever.num_items != ds.num_items or ranker.num_items != ds.num_items:
        raise DataError("checkpoint catalog size does not match the dataset")
    write_reports(evaluate(ds, retriever, ranker, eval_config(spec)), sys.stdout)


def cmd_ablate(args, spec):
    out = _out_dir(args, spec)
    run_ablation(spec, args.mode, out, args.workers)
    sys.stdout.write((out / f"{args.mode}.tsv").read_text(encoding="utf-8"))
    sys.stdout.write("two-stage ndcg order: " + (out / "ordering.txt").read_text(encoding="utf-8"))


def cmd_sweep(args, spec):
    out = _out_dir(args, spec)
    try:
        values = [int(v) for v in args.values.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"sweep values must be integers: {args.values!r}") from None
    run_sweep(spec, args.knob, values, out, args.workers, args.emit_plots)
    sys.stdout.write((out / f"sweep_{args.knob}.tsv").read_text(encoding="utf-8"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument("--out", help=f"output directory (default ${OUT_ENV}, else output_dir)")
    runs.add_argument("--workers", type=int, default=1, help="parallel processes over seeds")

    parser = argparse.ArgumentParser(prog="cascade-rec", description="Cooperative retriever/ranker training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="filter an interaction log and report its size")
    p.add_argument("input")
    p.add_argument("--output", help="write the surviving interactions here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic latent-factor log")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common, runs], help="train every seed and summarize")
    p.add_argument("--emit-plots", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate saved checkpoints")
    p.add_argument("run", help="run directory or seed directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common, runs], help="strategy comparison tables")
    p.add_argument("--mode", required=True, choices=sorted(ABLATIONS))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", parents=[common, runs], help="one run per knob value")
    p.add_argument("--knob", required=True, choices=sorted(SWEEP_KNOBS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--emit-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _spec_from_args(args)
        args.func(args, spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump, default=str), file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
