"""Command-line entry point: ``hypercondense <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 user/config error,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import artifacts as art
from .condenser import Condenser
from .config import RunConfig, parse_ratio
from .datasets import cora_like
from .diffusion import diffuse_features, truncation_order
from .errors import ConfigError, HypercondenseError, UserError
from .evaluation import (
    EvalReport,
    Evaluator,
    RunRow,
    _fan_out,
    derived_seed,
    run_coreset_protocol,
    run_full_data_protocol,
)
from .hypergraph import load_hypergraph, make_splits, propagation_operator, save_hypergraph
from .seeding import root_seed
from .theory import format_table, run_checks

log = logging.getLogger("hypercondense")

EXIT_OK, EXIT_INTERNAL, EXIT_USER, EXIT_VERIFY = 0, 1, 2, 3
CHECK_ALIASES = {"tail-bound": "tail", "mmd-identity": "mmd", "misranking": "misrank"}


def _load_data(args, seed):
    h = load_hypergraph(args.data, args.format)
    if not h.train_mask.any():
        h = make_splits(h, seed=seed)
    return h


def _resolve_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}:{exc.lineno}: {exc.msg}") from exc
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    over = {}
    if getattr(args, "ratio", None) is not None:
        over["ratio"] = parse_ratio(args.ratio)
    if getattr(args, "lam", None) is not None:
        over["lam"] = args.lam
    if getattr(args, "k_override", None) is not None:
        over["K"] = args.k_override
    if getattr(args, "epochs", None) is not None:
        over["epochs"] = args.epochs
    seed = getattr(args, "seed", None)
    if seed is not None or "seed" not in base:
        over["seed"] = root_seed(seed)
    ev = dict(base.get("eval", {}))
    for key in ("sets", "repeats"):
        if getattr(args, key, None) is not None:
            ev[key] = getattr(args, key)
    if ev:
        over["eval"] = ev
    cfg = RunConfig.from_dict({**base, **over})
    if cfg.K is None:
        cfg.K = truncation_order(cfg.lam)
    return cfg


def cmd_ingest(args):
    h = load_hypergraph(args.path, args.format)
    if args.split_seed is not None:
        h = make_splits(h, seed=args.split_seed)
    deg = h.degrees()
    summary = {"name": h.name, "nodes": h.num_nodes, "edges": h.num_edges,
               "memberships": h.total_edge_size, "features": h.features.shape[1],
               "classes": h.num_classes, "isolated_nodes": int(deg.isolated.sum()),
               "train": int(h.train_mask.sum()), "val": int(h.val_mask.sum()),
               "test": int(h.test_mask.sum()), "fingerprint": h.fingerprint()}
    if args.out:
        save_hypergraph(h, args.out)
        summary["written"] = str(args.out)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_generate(args):
    h = cora_like(seed=args.seed)
    save_hypergraph(h, args.out)
    print(f"wrote {h} to {args.out}")
    return EXIT_OK


def cmd_condense(args):
    started = art.now()
    cfg = _resolve_config(args)
    h = _load_data(args, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diffused = diffuse_features(propagation_operator(h), h.features, cfg.lam, cfg.K, h.name)
    sets = args.sets or 1
    outputs, timings, seeds = {}, {}, {"root": cfg.seed}
    for s in range(sets):
        set_seed = derived_seed(cfg.seed, "set", s)
        sub = RunConfig.from_dict({**cfg.to_dict(), "seed": set_seed})
        t0 = time.perf_counter()
        c = Condenser(h, sub, diffused).run()
        timings[f"set_{s}"] = time.perf_counter() - t0
        hashes = art.save_condensed(c, out / f"set_{s}", sub.to_dict())
        outputs.update({f"set_{s}/{k}": v for k, v in hashes.items()})
        seeds[f"set_{s}"] = set_seed
        print(f"set {s}: N'={c.num_nodes} final loss={c.losses[-1].total:.6f} "
              f"({timings[f'set_{s}']:.2f}s)")
    art.write_json(out / "config.json", cfg.to_dict())
    outputs["config.json"] = art.sha256_file(out / "config.json")
    off = cfg.off_grid()
    art.write_manifest(out, command=" ".join(sys.argv), config=cfg.to_dict(), dataset_path=args.data,
                       fingerprint=h.fingerprint(), seeds=seeds, outputs=outputs, started=started,
                       timings=timings, extra={"off_grid": off} if off else None)
    print(f"artifacts in {out}")
    return EXIT_OK


def _finish_report(args, reports, h, cfg, started, extra=None):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = art.report_rows(reports)
    art.write_report(out / "report.csv", rows)
    timings = {r.method: {"condense_seconds": r.condense_seconds, "eval_seconds": r.eval_seconds}
               for r in reports}
    art.write_manifest(out, command=" ".join(sys.argv), config=cfg.to_dict(), dataset_path=args.data,
                       fingerprint=h.fingerprint(), seeds={"root": cfg.seed},
                       outputs={"report.csv": art.sha256_file(out / "report.csv")},
                       started=started, timings=timings, extra=extra)
    for r in reports:
        print(f"{r.method:>8} r={r.ratio:g}: {100 * r.mean:.2f} +- {100 * r.std:.2f} ({len(r.rows)} runs)")
    print(f"report in {out / 'report.csv'}")


def cmd_evaluate(args):
    started = art.now()
    cdir = Path(args.condensed)
    ccfg = json.loads((cdir / "config.json").read_text()) if (cdir / "config.json").exists() else {}
    cfg = RunConfig.from_dict({**ccfg, "eval": {**ccfg.get("eval", {}), "sets": args.sets,
                                                 "repeats": args.repeats}})
    if args.seed is not None:
        cfg.seed = args.seed
    h = _load_data(args, cfg.seed)
    manifest = cdir / "manifest.json"
    if manifest.exists():
        fp = art.read_manifest(cdir)["dataset"]["fingerprint"]
        if fp != h.fingerprint():
            raise ConfigError(f"{args.data}: dataset fingerprint differs from the one used to condense")
    ev = Evaluator(h, cfg.eval)
    dirs = art.condensed_sets(cdir)[:args.sets]
    meta, tasks = [], []
    for s, d in enumerate(dirs):
        c = art.load_condensed(d)
        for r in range(args.repeats):
            es = derived_seed(cfg.seed, "eval", s, r)
            meta.append((s, r, derived_seed(cfg.seed, "set", s), es))
            tasks.append((c, es))
    t0 = time.perf_counter()
    accs = _fan_out(ev.condensed, tasks, args.jobs)
    rep = EvalReport("ahgcdd", cfg.ratio, eval_seconds=time.perf_counter() - t0)
    rep.rows = [RunRow("ahgcdd", cfg.ratio, *m, a) for m, a in sorted(zip(meta, accs))]
    reports = [rep]
    if args.whole:
        reports.append(run_full_data_protocol(h, cfg, ev, args.jobs))
    _finish_report(args, reports, h, cfg, started, {"condensed": str(cdir)})
    return EXIT_OK


def cmd_baseline(args):
    started = art.now()
    cfg = _resolve_config(args)
    h = _load_data(args, cfg.seed)
    ev = Evaluator(h, cfg.eval)
    if args.method == "whole":
        reports = [run_full_data_protocol(h, cfg, ev, args.jobs)]
    else:
        reports = [run_coreset_protocol(h, cfg, args.method, ev, args.jobs)]
    _finish_report(args, reports, h, cfg, started)
    return EXIT_OK


def cmd_verify(args):
    check = CHECK_ALIASES.get(args.check, args.check)
    names = None if check == "all" else [check]
    seed = root_seed(args.seed)
    results = run_checks(names, seed=seed, jobs=args.jobs)
    print(format_table(results))
    doc = {"seed": seed, "checks": [r.to_dict() for r in results]}
    if args.json:
        art.write_json(args.json, doc)
    else:
        print(json.dumps({"seed": seed, "checks": [{k: v for k, v in r.to_dict().items() if k != "offending"}
                                                   for r in results]}, indent=2))
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAILED {r.name}: replay inputs {json.dumps(r.offending[:1])}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_report(args):
    rows, fps = [], set()
    for d in args.runs:
        d = Path(d)
        rows.extend(art.read_report(d / "report.csv"))
        fps.add(art.read_manifest(d)["dataset"]["fingerprint"])
    if len(fps) > 1:
        raise ConfigError("runs were produced on different datasets (fingerprints differ); refusing to aggregate")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    art.write_report(out / "comparison.csv", rows)
    art.write_plot_data(out / "plot_data.csv", rows)
    for s in art.summarize([r for r in rows if r["kind"] == "run"]):
        print(f"{s['method']:>8} r={float(s['ratio']):g}: {100 * float(s['accuracy']):.2f} "
              f"+- {100 * float(s['std']):.2f} ({s['runs']} runs)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypercondense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="dataset file (json or text)")
        sp.add_argument("--format", choices=("json", "text"), default=None)

    def run_args(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--ratio", help="condensation ratio, e.g. 0.01 or 1%%")
        sp.add_argument("--lam", type=float, help="diffusion parameter (default 2)")
        sp.add_argument("--k-override", type=int, help="truncation order instead of ceil(lam + 3 sqrt(lam))")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int, help="root seed (fallback: $HYPERCONDENSE_SEED)")

    sp = sub.add_parser("ingest", help="validate and summarize a dataset")
    sp.add_argument("path")
    sp.add_argument("--format", choices=("json", "text"), default=None)
    sp.add_argument("--split-seed", type=int, help="attach stratified 50/25/25 splits")
    sp.add_argument("--out", help="write the (split) dataset here")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("generate", help="write the synthetic Cora-shaped stand-in dataset")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("condense", help="run condensation and write artifacts")
    data_args(sp)
    run_args(sp)
    sp.add_argument("--sets", type=int, help="number of synthetic hypergraphs (default 1)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_condense)

    sp = sub.add_parser("evaluate", help="train HGNNs on condensed data, test on the original split")
    data_args(sp)
    sp.add_argument("--condensed", required=True)
    sp.add_argument("--repeats", type=int, default=5)
    sp.add_argument("--sets", type=int, default=5)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--whole", action="store_true", help="also report whole-dataset training")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("baseline", help="coreset or whole-dataset baseline")
    data_args(sp)
    run_args(sp)
    sp.add_argument("--method", choices=("random", "herding", "kcenter", "whole"), required=True)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--sets", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("verify", help="numerical checks of the theoretical claims")
    sp.add_argument("--check", default="all", choices=("all", "spectral", "tail", "mmd", "margin", "misrank",
                                                          *CHECK_ALIASES))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--json", help="write full results (including offending inputs) here")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="aggregate report.csv files of several runs")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USER
    except HypercondenseError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
