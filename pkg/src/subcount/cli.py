"""Command-line entry points, one per pipeline stage."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .data import (
    Dataset,
    generate_dataset,
    graph_to_record,
    import_mutag,
    load_dataset,
    make_patterns,
    save_dataset,
    verify_dataset,
    _dump_lines,
    _load_graphs,
)
from .counting import count_many
from .models import ModelConfig, load_model, save_model
from .trainer import (
    FINE_TUNE_LR,
    Hyper,
    baseline_metrics,
    encode_dataset,
    evaluate,
    fine_tune,
    train,
    write_bins_csv,
)

log = logging.getLogger("subcount")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _maybe_verify(ds: Dataset, args) -> int:
    if not args.verify:
        return 0
    bad = verify_dataset(ds, timeout=args.timeout)
    for split, rec, got in bad:
        log.error("count mismatch in %s: recorded %d, recounted %d", split, rec, got)
    log.info("verified %d pairs, %d mismatches", len(ds), len(bad))
    return 1 if bad else 0


def cmd_gen_patterns(args) -> int:
    cfg = load_config(args.config)
    patterns = make_patterns(cfg, args.seed)
    out = _out_dir(args)
    _dump_lines(out / "patterns.jsonl", (graph_to_record(f"p{i}", p) for i, p in enumerate(patterns)))
    log.info("wrote %d patterns to %s", len(patterns), out / "patterns.jsonl")
    return 0


def cmd_gen_graphs(args) -> int:
    cfg = load_config(args.config)
    if args.graphs_per_pattern:
        cfg.graphs_per_pattern = args.graphs_per_pattern
    patterns = None
    if args.patterns:
        patterns = list(_load_graphs(Path(args.patterns)).values())
        cfg.patterns = len(patterns)
    ds = generate_dataset(cfg, args.seed, jobs=args.jobs, patterns=patterns,
                          keep_mappings=not args.no_mappings)
    save_dataset(ds, _out_dir(args))
    log.info("wrote %d pairs to %s", len(ds), args.out)
    return _maybe_verify(ds, args)


def cmd_count(args) -> int:
    ds = load_dataset(args.dataset)
    recs = ds.pairs[args.split]
    pairs = [(ds.patterns[r.pattern_id], ds.graphs[r.graph_id]) for r in recs]
    results = count_many(pairs, jobs=args.jobs, timeout=args.timeout)
    out = _out_dir(args)
    mismatches = 0
    with open(out / f"counts_{args.split}.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("pattern_id,graph_id,recorded,count,elapsed,error\n")
        for r, (c, el, _, err) in zip(recs, results):
            fh.write(f"{r.pattern_id},{r.graph_id},{r.count},{'' if c is None else c},{el:.6f},{err or ''}\n")
            mismatches += c is not None and c != r.count
    total = sum(x[1] for x in results)
    log.info("counted %d pairs in %.3fs (sum of per-pair times), %d mismatches",
             len(pairs), total, mismatches)
    return 1 if (args.verify and mismatches) else 0


def _model_config(args) -> ModelConfig:
    if args.config:
        return ModelConfig.from_text(Path(args.config).read_text(encoding="utf-8"))
    return ModelConfig()


def _encoded(ds: Dataset, view: str, specs=None):
    ps, gs = specs or ds.specs()
    return encode_dataset({s: ds.triples(s) for s in ds.pairs}, view, ps, gs)


def cmd_encode(args) -> int:
    ds = load_dataset(args.dataset)
    data = _encoded(ds, args.view)
    out = _out_dir(args)
    for split in ("train", "dev", "test"):
        pairs = data.split(split)
        arrays = {"count": np.array([e.count for e in pairs]),
                  "sizes": np.stack([e.sizes for e in pairs]) if pairs else np.zeros((0, 4))}
        for i, e in enumerate(pairs):
            for side, parts in (("pattern", e.pattern), ("graph", e.graph)):
                for j, a in enumerate(parts):
                    arrays[f"{i}_{side}_{j}"] = a
        np.savez_compressed(out / f"{split}.npz", **arrays)
    (out / "specs.json").write_text(json.dumps({"pattern": data.pattern_spec.to_dict(),
                                                "graph": data.graph_spec.to_dict(),
                                                "view": data.view}, indent=2) + "\n", encoding="utf-8")
    log.info("encoded %s view into %s", args.view, out)
    return 0


def _hyper(args, lr_default: float) -> Hyper:
    return Hyper(lr=args.lr or lr_default, batch_size=args.batch_size, epochs=args.epochs,
                 patience=args.patience, seed=args.seed)


def _report(model, data, out: Path, tag: str):
    m = evaluate(model, data.test)
    zero = baseline_metrics(data, "zero")
    avg = baseline_metrics(data, "avg")
    with open(out / "metrics.jsonl", "a", encoding="utf-8", newline="\n") as fh:
        fh.write(m.to_record(kind=tag, split="test") + "\n")
        fh.write(zero.to_record(kind="zero", split="test") + "\n")
        fh.write(avg.to_record(kind="avg", split="test") + "\n")
    write_bins_csv(m, out / f"bins_{tag}.csv")
    print(f"{tag}: rmse={m.rmse:.4f} mae={m.mae:.4f} | zero rmse={zero.rmse:.4f} mae={zero.mae:.4f}"
          f" | avg rmse={avg.rmse:.4f} mae={avg.mae:.4f}")


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    cfg = _model_config(args)
    data = _encoded(ds, cfg.view)
    result = train(cfg, data, _hyper(args, 1e-3), log=log.info)
    out = _out_dir(args)
    save_model(result.model, out / "model.ckpt")
    _report(result.model, data, out, "train")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    ds = load_dataset(args.dataset)
    data = _encoded(ds, model.config.view, (model.pattern_spec, model.graph_spec))
    _report(model, data, _out_dir(args), "eval")
    return 0


def cmd_finetune(args) -> int:
    source = load_model(args.checkpoint)
    ds = load_dataset(args.dataset)
    data = _encoded(ds, source.config.view)
    if args.fraction < 1.0:
        data = data.subset_train(args.fraction, np.random.default_rng(args.seed))
    result = fine_tune(source, data, _hyper(args, FINE_TUNE_LR), log=log.info)
    out = _out_dir(args)
    save_model(result.model, out / "model.ckpt")
    ps, gs = result.model.pattern_spec, result.model.graph_spec
    _report(result.model, data.extended(ps, gs) if (ps, gs) != (data.pattern_spec, data.graph_spec)
            else data, out, "finetune")
    return 0


def cmd_bench(args) -> int:
    from .bench import run_benchmark

    model = load_model(args.checkpoint)
    ds = load_dataset(args.dataset)
    recs = ds.pairs[args.split][: args.limit] if args.limit else ds.pairs[args.split]
    pairs = [(ds.patterns[r.pattern_id], ds.graphs[r.graph_id]) for r in recs]
    report = run_benchmark(model, pairs, jobs=args.jobs, timeout=args.timeout)
    print(report.summary())
    out = _out_dir(args)
    with open(out / "bench.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("pattern_id,graph_id,count,prediction,vf2_elapsed,neural_elapsed\n")
        for r, c, p, a, b in zip(recs, report.counts, report.predictions, report.vf2_elapsed,
                                 report.neural_elapsed):
            fh.write(f"{r.pattern_id},{r.graph_id},{'' if c is None else c},{p:.6f},{a:.6f},{b:.6f}\n")
    return 0


def cmd_import_mutag(args) -> int:
    ds = import_mutag(args.root, name=args.name, seed=args.seed)
    save_dataset(ds, _out_dir(args))
    nv = np.mean([g.num_vertices for g in ds.graphs.values()])
    ne = np.mean([g.num_edges for g in ds.graphs.values()])
    log.info("imported %d graphs (mean %.1f vertices / %.1f edges), %d pairs",
             len(ds.graphs), nv, ne, len(ds))
    return _maybe_verify(ds, args)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", type=str, default=None,
                        help="dataset grid (.cfg or bundled name) or model config file")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", type=str, default="out")
    common.add_argument("--verify", action="store_true", help="recount every pair with VF2")
    common.add_argument("--timeout", type=float, default=None, help="per-pair VF2 timeout (s)")
    common.add_argument("-v", "--verbose", action="store_true")

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--epochs", type=int, default=100)
    train_opts.add_argument("--lr", type=float, default=None)
    train_opts.add_argument("--batch-size", type=int, default=64)
    train_opts.add_argument("--patience", type=int, default=10)

    parser = argparse.ArgumentParser(prog="subcount", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-patterns", parents=[common])
    p.set_defaults(func=cmd_gen_patterns, config="small-desk")

    p = sub.add_parser("gen-graphs", parents=[common])
    p.add_argument("--patterns", type=str, default=None, help="patterns.jsonl to reuse")
    p.add_argument("--graphs-per-pattern", type=int, default=None)
    p.add_argument("--no-mappings", action="store_true")
    p.set_defaults(func=cmd_gen_graphs, config="small-desk")

    p = sub.add_parser("count", parents=[common])
    p.add_argument("dataset")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("encode", parents=[common])
    p.add_argument("dataset")
    p.add_argument("--view", choices=("sequence", "graph"), default="graph")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", parents=[common, train_opts])
    p.add_argument("dataset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("finetune", parents=[common, train_opts])
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--fraction", type=float, default=1.0, help="share of training pairs to use")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("bench", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("import-mutag", parents=[common])
    p.add_argument("root")
    p.add_argument("--name", default="MUTAG")
    p.set_defaults(func=cmd_import_mutag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
