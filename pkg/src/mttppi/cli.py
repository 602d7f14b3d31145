"""Command-line entry point.

Exit codes: 0 success, 2 input/config error, 3 data error, 4 internal error.
Progress goes to stderr; results go to files (plus short summaries on stdout).
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import logging
import os
import sys

import numpy as np

from . import embedder, pipeline, seqio
from . import model as M
from .errors import ConfigError, DataError, InputError, PPIError, UnknownProtein
from .metrics import ranked, topk_hits, welch_ttest

log = logging.getLogger("mttppi")

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path, what="config"):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}", EXIT_INPUT) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_INPUT) from None


# ---------------------------------------------------------------------------
# embed


def cmd_embed(args):
    try:
        layers = embedder.load_mlstm_stack(args.weights)
    except FileNotFoundError as exc:
        raise CliError(f"weights file not found: {exc.filename}", EXIT_INPUT) from None
    except PPIError as exc:
        raise CliError(f"{args.weights[0]}: {exc}", EXIT_INPUT) from None
    records = []
    for path in args.fasta:
        try:
            with open(path, "rb") as fh:
                recs = seqio.parse_fasta(fh)
        except FileNotFoundError:
            raise CliError(f"FASTA file not found: {path}", EXIT_INPUT) from None
        except (PPIError, UnicodeDecodeError) as exc:
            raise CliError(f"{path}: {exc}", EXIT_INPUT) from None
        print(f"{path}\t{len(recs)}")
        records.extend(recs)
    workers = args.parallel or embedder.default_parallelism()
    cap = os.environ.get("PPI_MTT_THREADS")
    if cap and cap.isdigit():
        workers = min(workers, max(1, int(cap)))
    try:
        table = embedder.embed_batch(layers, records, parallelism=workers, pool=args.pool)
    except PPIError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    embedder.write_embeddings(table, args.out)
    log.info("wrote %d embeddings of dim %d to %s", len(table), table.dim, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / gridsearch


def _experiment(args):
    cfg = _load_json(args.config)
    if not isinstance(cfg, dict):
        raise CliError("experiment config must be a JSON object", EXIT_INPUT)
    known = {"data", "embeddings", "sampling", "config", "grid", "n_runs", "output_dir"}
    unknown = set(cfg) - known
    if unknown:
        raise CliError(f"unknown experiment config keys: {sorted(unknown)}", EXIT_INPUT)
    if "data" not in cfg:
        raise CliError("experiment config needs a 'data' manifest path", EXIT_INPUT)
    base = os.path.dirname(os.path.abspath(args.config))

    def rel(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        train_cfg = M.TrainConfig.from_dict(cfg.get("config", {}))
        grid = pipeline.GridSpec.from_dict(cfg["grid"]) if "grid" in cfg else None
        samp = dict(cfg.get("sampling") or {})
        train_rates = samp.pop("train_rates", None)
        test_rates = samp.pop("test_rates", None)
        sampling = pipeline.SamplingSpec(**samp) if "sampling" in cfg else None
    except (ConfigError, TypeError) as exc:
        raise CliError(f"config error: {exc}", EXIT_INPUT) from None
    n_runs = cfg.get("n_runs", 1)
    if not isinstance(n_runs, int) or n_runs < 1:
        raise CliError("n_runs must be a positive integer", EXIT_INPUT)
    out_dir = args.out or cfg.get("output_dir")
    if not out_dir:
        raise CliError("no output directory (--out or output_dir)", EXIT_INPUT)

    try:
        bundle, emb_path = seqio.load_manifest(rel(cfg["data"]))
        emb_path = rel(cfg["embeddings"]) if "embeddings" in cfg else emb_path
        if not emb_path:
            raise CliError("no embeddings path in config or manifest", EXIT_INPUT)
        table = embedder.read_embeddings(emb_path)
    except FileNotFoundError as exc:
        raise CliError(f"data file not found: {exc.filename or exc}", EXIT_DATA) from None
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    except (PPIError, UnicodeDecodeError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None
    os.makedirs(out_dir, exist_ok=True)
    return dict(bundle=bundle, table=table, config=train_cfg, grid=grid, sampling=sampling,
                train_rates=train_rates, test_rates=test_rates, n_runs=n_runs, out=out_dir)


def _with_sampled_negatives(bundle, sampling, table):
    """Bundle whose train/test negatives are drawn once with ``sampling``."""
    _, h_tab = pipeline.split_tables(bundle, table)
    humans = h_tab.ids()
    train_pos = [e for e in bundle.vh_train if e.target >= 0.5]
    test_pos = [e for e in bundle.vh_test if e.target >= 0.5]
    known = train_pos + test_pos

    def draw(pos, part):
        if not pos:
            return []
        spec = dataclasses.replace(sampling, seed=pipeline.derive_seed(sampling.seed, part))
        return pipeline.sample_negatives(pos, sorted({e.a for e in pos}), humans, spec, exclude=known)

    return seqio.DatasetBundle(bundle.name, bundle.proteins, train_pos + draw(train_pos, 0),
                               test_pos + draw(test_pos, 1), bundle.hh_train, bundle.report)


def _run_name(i):
    return f"run_{i:03d}"


def cmd_train(args):
    exp = _experiment(args)
    bundle, table, cfg, out = exp["bundle"], exp["table"], exp["config"], exp["out"]
    results = []
    try:
        if exp["sampling"] is not None:
            sampling = exp["sampling"]
            states = {}

            def train_fn(b, c, e, tables=None):
                state, res = pipeline.train(b, c, e, tables=tables)
                states[len(states)] = state
                return state, res

            rep = pipeline.repeated_runs(bundle, sampling, cfg, table, n_runs=exp["n_runs"],
                                         train_rates=exp["train_rates"], test_rates=exp["test_rates"],
                                         train_fn=train_fn)
            for i, state in states.items():
                M.save_checkpoint(state, os.path.join(out, f"model_{i:03d}.ckpt"))
            results = rep.runs
            summary = rep.summary
        else:
            for r in range(exp["n_runs"]):
                state, res = pipeline.train(bundle, cfg.replace(seed=cfg.seed + r), table)
                res.tags = {"run": r}
                M.save_checkpoint(state, os.path.join(out, f"{_run_name(r)}.ckpt"))
                results.append(res)
            summary = pipeline.summarize(results, group_keys=())
    except (DataError, InputError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None
    for i, res in enumerate(results):
        _dump_json(res.to_dict(), os.path.join(out, f"{_run_name(i)}.json"))
    _dump_json({"variant": cfg.variant, "n_results": len(results), "summary": summary,
                "best_val_f1": max(r.val_f1 for r in results)},
               os.path.join(out, "aggregate.json"))
    print(f"variant: {cfg.variant}")
    print(f"best validation F1: {max(r.val_f1 for r in results):.2f}")
    return EXIT_OK


def cmd_gridsearch(args):
    exp = _experiment(args)
    bundle, table, out = exp["bundle"], exp["table"], exp["out"]
    grid = exp["grid"] or pipeline.GridSpec()
    try:
        if exp["sampling"] is not None:
            bundle = _with_sampled_negatives(bundle, exp["sampling"], table)
        res = pipeline.grid_search(bundle, grid, table, seed=exp["config"].seed, base_config=exp["config"])
    except (DataError, InputError) as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None
    M.save_checkpoint(res.best_state, os.path.join(out, "best.ckpt"))
    _dump_json({"best": res.best.to_dict(), "table": res.table, "variant": res.best.variant},
               os.path.join(out, "report.json"))
    print(f"variant: {res.best.variant}")
    print(f"best validation F1: {res.best.val_f1:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / rank / ttest


def _load_state(path):
    try:
        return M.load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}", EXIT_INPUT) from None
    except (PPIError, KeyError, ValueError) as exc:
        raise CliError(f"{path}: bad checkpoint ({exc})", EXIT_INPUT) from None


def cmd_evaluate(args):
    state = _load_state(args.checkpoint)
    try:
        with open(args.test, "rb") as fh:
            examples = seqio.parse_interactions(fh)
    except FileNotFoundError:
        raise CliError(f"test file not found: {args.test}", EXIT_INPUT) from None
    except (PPIError, UnicodeDecodeError) as exc:
        raise CliError(f"{args.test}: {exc}", EXIT_INPUT) from None
    if not examples:
        raise CliError(f"{args.test}: no test pairs", EXIT_DATA)
    try:
        report = pipeline.evaluate_state(state, examples, args.threshold, args.r_precision)
    except UnknownProtein as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    _dump_json(report.to_dict(), args.out)
    print(f"auc={report.auc} ap={report.ap} f1={report.f1:.2f}")
    return EXIT_OK


def _read_candidates(path):
    try:
        with open(path, encoding="utf-8") as fh:
            ids = [ln.split("\t")[0].strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    except FileNotFoundError:
        raise CliError(f"candidates file not found: {path}", EXIT_INPUT) from None
    if len(set(ids)) != len(ids):
        raise CliError(f"{path}: duplicate candidate ids", EXIT_INPUT)
    return ids


def cmd_rank(args):
    paths = []
    for pattern in args.checkpoint:
        matches = sorted(glob.glob(pattern))
        paths.extend(matches if matches else [pattern])
    if len(paths) < args.runs:
        raise CliError(f"--runs {args.runs} needs {args.runs} checkpoints, found {len(paths)}", EXIT_INPUT)
    candidates = _read_candidates(args.candidates)
    if args.true_id not in candidates:
        raise CliError(f"true id {args.true_id!r} is not among the candidates", EXIT_INPUT)
    per_run = []
    for path in paths[: args.runs]:
        state = _load_state(path)
        try:
            per_run.append({c: M.score_pair(state, M.Task.VH, args.virus_protein, c) for c in candidates})
        except UnknownProtein as exc:
            raise CliError(str(exc), EXIT_DATA) from None
    scores = np.array([[run[c] for c in candidates] for run in per_run])
    mean = dict(zip(candidates, scores.mean(axis=0)))
    std = dict(zip(candidates, scores.std(axis=0, ddof=1) if len(per_run) > 1 else np.zeros(len(candidates))))
    order = ranked(mean)
    hits = topk_hits(mean, args.true_id)
    run_hits = np.array([topk_hits(run, args.true_id) for run in per_run], dtype=float).mean(axis=0)

    print("rank\tid\tmean\tstd")
    for i, c in enumerate(order, start=1):
        print(f"{i}\t{c}\t{mean[c]:.6f}\t{std[c]:.6f}")
    for k, (h, frac) in enumerate(zip(hits, run_hits), start=1):
        print(f"top{k}\t{str(h).lower()}\t{frac:.2f}")
    if args.out:
        _dump_json({
            "virus_protein": args.virus_protein,
            "true_id": args.true_id,
            "runs": len(per_run),
            "ranking": [{"id": c, "mean": float(mean[c]), "std": float(std[c])} for c in order],
            "topk": hits,
            "topk_run_fraction": [float(x) for x in run_hits],
        }, args.out)
    return EXIT_OK


def _f1_samples(pattern):
    files = sorted(glob.glob(pattern))
    if len(files) < 2:
        raise CliError(f"{pattern!r} matches {len(files)} result files, need at least 2", EXIT_INPUT)
    out = []
    for f in files:
        d = _load_json(f, "result")
        try:
            res = pipeline.RunResult.from_dict(d)
        except (KeyError, TypeError, ConfigError) as exc:
            raise CliError(f"{f}: not a run result ({exc})", EXIT_INPUT) from None
        out.append(res.metrics.f1 if res.metrics is not None else res.val_f1)
    return out


def cmd_ttest(args):
    a = _f1_samples(args.a)
    b = _f1_samples(args.b)
    try:
        t, p = welch_ttest(a, b)
    except PPIError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    print(f"n_a={len(a)} n_b={len(b)} mean_a={np.mean(a):.4f} mean_b={np.mean(b):.4f}")
    print(f"t={t!r}")
    print(f"p={p!r}")
    print(f"significant at 0.05: {'yes' if p < 0.05 else 'no'}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="mttppi", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="embed FASTA sequences with mLSTM weights")
    p.add_argument("--weights", required=True, action="append",
                   help="named-tensor weight file; repeat for stacked layers")
    p.add_argument("--fasta", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--pool", choices=("avg", "last"), default="avg")
    p.add_argument("--parallel", type=int, default=None)
    p.set_defaults(func=cmd_embed)

    for name, func in (("train", cmd_train), ("gridsearch", cmd_gridsearch)):
        p = sub.add_parser(name, help=f"{name} from an experiment config")
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a test table with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--r-precision", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="rank candidate human proteins for one pathogen protein")
    p.add_argument("--checkpoint", required=True, action="append",
                   help="checkpoint path or glob; repeat or glob one per seeded run")
    p.add_argument("--virus-protein", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--true-id", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("ttest", help="Welch t-test on F1 of two result sets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_ttest)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort guard
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
