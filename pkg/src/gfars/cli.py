"""Command-line entry point: ``gfars <subcommand>``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path


from . import ndcore as nd
from .benchmark import (
    STEP_SWEEP,
    BenchmarkConfig,
    noisy_removal_scores,
    noisy_sets,
    run_benchmark,
    score_sets,
    step_sweep,
    summary_row,
    variant_dir,
)
from .config import ConfigFileError, RunConfig, load_config, save_config
from .evalkit import UndefinedInputError, evaluate, metrics, slash, write_per_set_csv, write_report
from .grouping import DataError, GroupingResult, group_many, read_results, remove_noisy_parts_many, write_results
from .model import GroupingModel
from .plotting import plot_groups, plot_loss_curve, plot_method_bars, plot_step_sweep
from .sampler import SamplerConfig, SamplerDivergence
from .scorefield import ConfigError
from .sde import DomainError
from .synthdata import DatasetManifest, build_dataset, read_dataset, write_dataset
from .train import TrainConfig, TrainingDivergence, read_history, train

log = logging.getLogger("gfars")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def _manifest_from_args(args) -> DatasetManifest:
    return DatasetManifest(args.split, args.sets, {2: args.mix2_prob, 3: 1.0 - args.mix2_prob}, args.seed,
                           args.n_points)


def cmd_gen_data(args) -> int:
    if args.noisy:
        sets = noisy_sets(args.sets, args.seed, args.n_points)
        write_dataset(sets, args.out)
    else:
        manifest = _manifest_from_args(args)
        try:
            manifest.validate()
        except ValueError as exc:
            raise ConfigFileError(str(exc)) from None
        sets = build_dataset(manifest, args.out)
    print(f"wrote {len(sets)} sets to {args.out}")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or ())
    if getattr(args, "out", None):
        cfg.output = args.out
    return cfg


def _ensure_data(path: str, manifest: DatasetManifest):
    p = Path(path)
    if not p.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
        log.info("generating %s (%d sets)", p, manifest.sets)
        return build_dataset(manifest, p)
    return read_dataset(p)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.resolved.yaml")
    train_sets = _ensure_data(cfg.data.train, cfg.data.manifest("train"))
    val_sets = _ensure_data(cfg.data.val, cfg.data.manifest("val")) if cfg.data.val_sets else []
    cfg.model.score.check_loss(cfg.train.loss)
    result = train(train_sets, cfg.model, cfg.train, cfg.sde, val_sets, out_dir=out)
    plot_loss_curve(result.history, out / "loss_curve.png")
    best = "n/a" if result.best_val_f1 is None else f"{result.best_val_f1:.3f}"
    print(f"steps={len(result.history)} final_loss={result.history[-1]['loss']:.4f} best_val_f1={best}")
    print(f"checkpoint: {out / 'best.ckpt'}")
    return EXIT_OK


# --------------------------------------------------------------- grouping


def _group_chunk(payload):
    ckpt, sets, sampler, max_iter = payload
    return group_many(GroupingModel.load(ckpt), sets, sampler, max_iter)


def _chunks(items, n):
    n = max(1, min(n, len(items)))
    return [items[i::n] for i in range(n)]


def run_grouping(ckpt, sets, sampler: SamplerConfig, max_iter: int, workers: int = 1) -> list[GroupingResult]:
    """Group every set; with workers > 1 the sets are split across processes.

    Per-set noise streams make the output independent of the split.
    """
    if workers <= 1 or len(sets) < 2:
        results = group_many(GroupingModel.load(ckpt), sets, sampler, max_iter)
    else:
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(_group_chunk, [(ckpt, c, sampler, max_iter) for c in _chunks(list(sets), workers)])
            results = [r for chunk in parts for r in chunk]
    return sorted(results, key=lambda r: r.set_id)


def _sampler_from_args(args) -> SamplerConfig:
    return SamplerConfig(kind=args.sampler, steps=args.steps, seed=args.seed, threshold=args.threshold)


def cmd_group(args) -> int:
    sets = read_dataset(args.data)
    results = run_grouping(args.ckpt, sets, _sampler_from_args(args), args.max_iter, args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(results, out)
    if args.svg_dir:
        by_id = {s.set_id: s for s in sets}
        for r in results:
            plot_groups(by_id[r.set_id], r, Path(args.svg_dir) / f"{r.set_id}.svg")
    n_res = sum(1 for r in results if r.residual)
    print(f"grouped {len(results)} sets -> {out} ({n_res} with a residual)")
    return EXIT_OK


def _gt_from_file(path):
    gt = {}
    for s in read_dataset(path):
        try:
            gt[s.set_id] = s.gt_groups()
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None
    return gt


def _eval_worker(payload):
    preds, gt = payload
    return evaluate(preds, gt)


def cmd_eval(args) -> int:
    preds = read_results(args.pred)
    gt = _gt_from_file(args.gt)
    missing = [r.set_id for r in preds if r.set_id not in gt]
    if missing:
        raise DataError(f"{args.pred}: no ground truth for set {missing[0]!r}")
    if args.workers > 1 and len(preds) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            chunks = list(pool.map(_eval_worker, [(c, gt) for c in _chunks(preds, args.workers)]))
        reports = sorted((r for c in chunks for r in c), key=lambda r: r.set_id)
    else:
        reports = evaluate(preds, gt)
    single, overall = metrics(reports, "single_set_avg"), metrics(reports, "overall")
    if args.mode == "both":
        for k, v in slash(single, overall).items():
            print(f"{k:<9} {v}")
    else:
        rep = single if args.mode == "single" else overall
        for k in ("precision", "recall", "f1"):
            print(f"{k:<9} {getattr(rep, k):.3f}")
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        write_report(overall, args.report)
        write_report(single, Path(args.report).with_suffix(".single.json"))
        write_per_set_csv(overall, Path(args.report).with_suffix(".per_set.csv"))
    return EXIT_OK


# --------------------------------------------------------------- ablations


def _write_rows(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in r.items()})


def _print_table(rows, cols) -> None:
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in cols))


def cmd_ablate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sets = read_dataset(args.data)
    sampler = _sampler_from_args(args)
    if args.variant == "steps":
        model = GroupingModel.load(args.ckpt)
        rows = step_sweep(model, sets, args.sweep, kind="pc", seed=args.seed)
        _write_rows(rows, out / "step_sweep.csv")
        plot_step_sweep(rows, out / "step_sweep.png")
        _print_table([{"N": r["steps"], "F1": f"{r['single_f1']:.3f} / {r['overall_f1']:.3f}"} for r in rows], ["N", "F1"])
        return EXIT_OK

    rows = []
    model = GroupingModel.load(args.ckpt)
    rows.append(summary_row(METHOD_NAMES["gnn"], *score_sets(model, sets, sampler, args.max_iter)[:2], sampler))
    if args.variant == "em":
        em = SamplerConfig(kind="em", steps=args.steps, seed=args.seed, threshold=args.threshold)
        rows.append(summary_row("EM sampler", *score_sets(model, sets, em, args.max_iter)[:2], em))
    else:
        if not args.variant_ckpt:
            raise ConfigFileError(f"--variant {args.variant} needs --variant-ckpt (train it with `gfars train`)")
        other = GroupingModel.load(args.variant_ckpt)
        expected = {"no-gf": "bce", "no-graph": "mlp"}[args.variant]
        if other.cfg.score.variant != expected:
            raise ConfigFileError(f"--variant-ckpt holds a {other.cfg.score.variant!r} model, expected {expected!r}")
        name = METHOD_NAMES[expected]
        rows.append(summary_row(name, *score_sets(other, sets, sampler, args.max_iter)[:2], sampler))
    _write_rows(rows, out / f"ablation_{args.variant}.csv")
    print("method\tprecision\trecall\tF1")
    for r in rows:
        print("\t".join([r["method"]] + [f"{r[k + '_single']:.3f} / {r[k + '_overall']:.3f}"
                                         for k in ("precision", "recall", "f1")]))
    return EXIT_OK


def cmd_denoise(args) -> int:
    model = GroupingModel.load(args.ckpt)
    sets = read_dataset(args.data)
    sampler = _sampler_from_args(args)
    masks = remove_noisy_parts_many(model, sets, sampler)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for s, keep in sorted(zip(sets, masks), key=lambda x: x[0].set_id):
            kept = sorted(p.part_id for p, k in zip(s.parts, keep) if k)
            removed = sorted(p.part_id for p, k in zip(s.parts, keep) if not k)
            fh.write(json.dumps({"set_id": s.set_id, "kept": kept, "removed": removed}) + "\n")
    print(f"wrote {len(sets)} selections to {out}")
    if all(s.labelled for s in sets):
        sc = noisy_removal_scores(model, sets, sampler)
        print(f"kept-part recall {sc['recall']:.3f}  precision {sc['precision']:.3f}")
    return EXIT_OK


METHOD_NAMES = {"gnn": "full", "mlp": "no-graph", "bce": "bce"}


def cmd_benchmark(args) -> int:
    """Train or load every variant, score the test split, write CSV plus figures."""
    cfg = BenchmarkConfig(train_sets=args.train_sets, val_sets=args.val_sets, test_sets=args.test_sets, steps=args.steps,
                          train=TrainConfig(epochs=args.epochs, eval_every=args.eval_every))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_benchmark(cfg, args.cache, args.variants)
    rows = []
    for v, r in res.items():
        sampler = SamplerConfig(steps=cfg.steps, seed=cfg.sampler_seed)
        row = summary_row(METHOD_NAMES[v], r["single"], r["overall"], sampler)
        row.update(train_seconds=r["train_seconds"], eval_seconds=r["eval_seconds"])
        rows.append(row)
        history = variant_dir(cfg, v, args.cache) / "loss_history.csv"
        if history.exists():
            plot_loss_curve(read_history(history), out / f"loss_curve_{v}.png")
    if "gnn" in res and args.noisy_sets:
        sc = noisy_removal_scores(res["gnn"]["model"], noisy_sets(args.noisy_sets),
                                  SamplerConfig(steps=cfg.steps, seed=cfg.sampler_seed))
        (out / "noisy_removal.json").write_text(json.dumps(sc, indent=2) + "\n")
        print(f"noisy removal: kept-part recall {sc['recall']:.3f}  precision {sc['precision']:.3f}")
    _write_rows(rows, out / "benchmark.csv")
    plot_method_bars(rows, out / "benchmark.png")
    print("method\tprecision\trecall\tF1\ttrain_s\teval_s")
    for r in rows:
        print("\t".join([r["method"]] + [f"{r[k + '_single']:.3f} / {r[k + '_overall']:.3f}"
                                         for k in ("precision", "recall", "f1")]
                        + [f"{r['train_seconds']:.0f}", f"{r['eval_seconds']:.0f}"]))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _sampler_args(p, steps: int = 500) -> None:
    p.add_argument("--sampler", choices=("pc", "em"), default="pc")
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfars", description="Score-field auto-regressive part grouping.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic mixed-part dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--sets", type=int, default=2000)
    p.add_argument("--mix2-prob", type=float, default=0.7, help="probability a set mixes 2 shapes (else 3)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=("train", "val", "test"), default="train")
    p.add_argument("--n-points", type=int, default=64)
    p.add_argument("--noisy", action="store_true", help="one shape plus 2-4 distractor parts per set")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a YAML run config")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value, e.g. train.epochs=5")
    p.add_argument("--out", help="output directory (overrides config 'output')")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("group", help="group every set of a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iter", type=int, default=8)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--svg-dir", help="write one SVG per set showing each group in its own cell")
    _sampler_args(p)
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("eval", help="score grouping results against labelled sets")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("single", "overall", "both"), default="both")
    p.add_argument("--report", help="write JSON reports and a per-set CSV")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare against an ablation or sweep sampling steps")
    p.add_argument("--variant", choices=("no-gf", "no-graph", "em", "steps"), required=True)
    p.add_argument("--ckpt", required=True, help="full-model checkpoint")
    p.add_argument("--variant-ckpt", help="checkpoint of the ablated model (no-gf, no-graph)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iter", type=int, default=8)
    p.add_argument("--sweep", type=int, nargs="+", default=list(STEP_SWEEP))
    _sampler_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("benchmark", help="train all variants on synthetic data and report test metrics")
    p.add_argument("--cache", default=".cache/benchmark", help="trained models and test predictions are reused from here")
    p.add_argument("--out", required=True)
    p.add_argument("--variants", nargs="+", choices=("gnn", "mlp", "bce"), default=["gnn", "mlp", "bce"])
    p.add_argument("--train-sets", type=int, default=2000)
    p.add_argument("--val-sets", type=int, default=100)
    p.add_argument("--test-sets", type=int, default=300)
    p.add_argument("--epochs", type=int, default=24)
    p.add_argument("--eval-every", type=int, default=4)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--noisy-sets", type=int, default=100)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("denoise", help="keep the parts of one shape, drop distractors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _sampler_args(p)
    p.set_defaults(func=cmd_denoise)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, nd.CheckpointError, UndefinedInputError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, SamplerDivergence, nd.NonFiniteError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
