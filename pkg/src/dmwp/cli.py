"""Command-line entry point: ``dmwp <subcommand> ...``.

Option values resolve in the order: built-in default, ``--config`` JSON
file, ``DMWP_<OPTION>`` environment variable, explicit flag.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict, fields
from pathlib import Path

from . import autodiff as ad
from .augment import AugmentConfig, NegativeSamplingError, gen_positives, make_batch, write_batches
from .buffer import inspect, load_buffers, save_buffers
from .dataio import Corpus, DataError, Mode, convert_math23k, infer_mode, kfold, load, save
from .expr import ExprError, from_prefix, render_infix, try_evaluate, matches_answer
from .synth import DESK_TEMPLATES, TEMPLATES, semi_weak, synth_corpus
from .trainer import (
    TrainConfig,
    Trainer,
    ablate,
    child_rng,
    evaluate,
    load_model,
    run_kfold,
    summarize,
)
from .wda import WdaConfig, batch_augment

log = logging.getLogger("dmwp")

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# option dest -> (TrainConfig field or None, type)
_TRAIN_OPTS = {
    "drop_trivial": (None, bool),  # corpus filter, not a TrainConfig field
    "mode": ("mode", str), "epochs": ("epochs", int), "stage_switch": ("stage_switch", int),
    "refresh_period": ("refresh_period", int), "beam": ("beam", int), "lr": ("lr", float),
    "lr_halving": ("lr_halving", int), "batch_size": ("batch_size", int), "variant": ("variant", str),
    "topk_mode": ("topk_mode", str), "use_wda": ("use_wda", bool), "max_iter": ("max_iterations", int),
    "embedding": ("embedding", int), "hidden": ("hidden", int),
    "disc_updates_encoder": ("disc_updates_encoder", bool), "disc_positives": ("disc_positives", int),
    "lambda_": ("disturbance", float), "negatives": ("negatives_per_positive", int),
    "max_positives": ("max_positive_variants", int), "buffer_cap": ("buffer_cap", int),
    "log_weights": ("log_weights", bool),
}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--mode", choices=["full", "semi", "weak"], help="supervision mode (default: full)")
    g.add_argument("--epochs", type=int, help="training epochs (default: 200)")
    g.add_argument("--stage-switch", type=int, help="first epoch that mixes in discriminator scores (default: 100)")
    g.add_argument("--refresh-period", type=int, help="epochs between buffer refreshes (default: 5)")
    g.add_argument("--beam", type=int, help="beam width for refresh and evaluation (default: 5)")
    g.add_argument("--lr", type=float, help="initial learning rate (default: 0.001)")
    g.add_argument("--lr-halving", type=int, help="epochs between learning-rate halvings (default: 30)")
    g.add_argument("--batch-size", type=int, help="problems per solver update (default: 64)")
    g.add_argument("--variant", choices=["full_method", "one_stage", "non_probabilistic", "gold_only"],
                   help="weighting variant (default: full_method)")
    g.add_argument("--topk-mode", choices=["all", "any"], help="top-k accuracy reading (default: all)")
    g.add_argument("--use-wda", action="store_const", const=True,
                   help="semi-weak: seed answer-only buffers by search")
    g.add_argument("--max-iter", type=int, help="search attempt budget per problem (default: 50000)")
    g.add_argument("--embedding", type=int, help="embedding width (default: 32)")
    g.add_argument("--hidden", type=int, help="hidden width (default: 64)")
    g.add_argument("--disc-updates-encoder", action="store_const", const=True,
                   help="let the contrastive loss update the problem encoder")
    g.add_argument("--disc-positives", type=int, help="positives sampled per problem per epoch (default: 2)")
    g.add_argument("--lambda", dest="lambda_", type=float, help="negative disturbance probability (default: 0.3)")
    g.add_argument("--negatives", type=int, help="negatives per positive (default: 2)")
    g.add_argument("--max-positives", type=int, help="cap on rule-generated positives (default: 32)")
    g.add_argument("--buffer-cap", type=int, help="optional cap on buffer size (model entries evicted first)")
    g.add_argument("--drop-trivial", action="store_const", const=True,
                   help="discard problems flagged trivial (equation written out in the text)")
    g.add_argument("--log-weights", action="store_const", const=True,
                   help="write per-problem s/t/a records to the instrumentation log")


def _common() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from clobbering a value given before it
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--config", default=argparse.SUPPRESS, help="JSON file with option defaults")
    c.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="seed for every stochastic component (default: 0)")
    c.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes for search (default: 1)")
    c.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    return c


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    root = _Parser(prog="dmwp", description="Diversity-aware math word problem solving toolkit.", parents=[common])
    sub = root.add_subparsers(dest="command", parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[common], **kw)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--templates", help="comma-separated template ids, 'desk' or 'all' (default: desk)")
    p.add_argument("--n", type=int, help="number of problems (default: 2000)")
    p.add_argument("--mode", choices=["full", "semi", "weak"], help="supervision mode (default: full)")
    p.add_argument("--weak-fraction", type=float, help="semi mode: share of answer-only problems (default: 0.5)")
    p.add_argument("--out", required=True, help="output JSONL path")

    p = sub.add_parser("wda", help="search equations for answer-only problems")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--max-iter", type=int, help="attempt budget per problem (default: 50000)")
    p.add_argument("--out", required=True, help="output JSONL of search results")

    p = sub.add_parser("augment", help="emit contrastive batches for inspection")
    p.add_argument("--input", required=True, help="corpus JSONL with equations")
    p.add_argument("--lambda", dest="lambda_", type=float, help="disturbance probability (default: 0.3)")
    p.add_argument("--negatives", type=int, help="negatives per positive (default: 2)")
    p.add_argument("--max-positives", type=int, help="cap on positives per problem (default: 32)")
    p.add_argument("--out", required=True, help="output JSONL")

    p = sub.add_parser("train", help="run iterative training")
    p.add_argument("--input", required=True, help="training corpus JSONL")
    p.add_argument("--test", help="optional held-out corpus evaluated after training")
    p.add_argument("--out-dir", required=True, help="directory for checkpoint, buffers, metrics and logs")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="top-k answer accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model checkpoint written by train")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--beam", type=int, help="beam width (default: 5)")
    p.add_argument("--topk-mode", choices=["all", "any"], help="top-k accuracy reading (default: all)")
    p.add_argument("--trace", help="write decoded beams per problem to this JSON file")
    p.add_argument("--out", help="write the accuracy table as JSON")

    p = sub.add_parser("kfold", help="k-fold cross-validation")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--folds", type=int, help="number of folds (default: 5)")
    p.add_argument("--out-dir", required=True, help="directory for metrics.json, metrics.csv and checkpoints")
    _add_train_flags(p)

    p = sub.add_parser("ablate", help="compare weighting variants on one held-out split")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--variants", help="comma-separated variants (default: full_method,one_stage,non_probabilistic)")
    p.add_argument("--seeds", help="comma-separated training seeds (default: 0,1,2)")
    p.add_argument("--folds", type=int, help="number of folds defining the split (default: 5)")
    p.add_argument("--fold", type=int, help="held-out fold index (default: 0)")
    p.add_argument("--out", required=True, help="output JSON with per-run rows and a summary")
    _add_train_flags(p)

    p = sub.add_parser("inspect-buffer", help="print buffered solutions with logP, t and a")
    p.add_argument("--buffers", required=True, help="buffers.jsonl written by train")
    p.add_argument("--id", help="problem id (default: all problems)")

    p = sub.add_parser("stats", help="corpus statistics report as JSON")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--out", help="also write the report to this path")

    p = sub.add_parser("convert", help="convert Math23k-style records to JSONL")
    p.add_argument("--input", required=True, help="Math23k JSON or JSONL")
    p.add_argument("--out", required=True, help="output JSONL")
    return root


_DEFAULTS = {"seed": 0, "workers": 1, "n": 2000, "templates": "desk", "weak_fraction": 0.5, "folds": 5,
             "fold": 0, "variants": "full_method,one_stage,non_probabilistic", "seeds": "0,1,2"}


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def resolve(args: argparse.Namespace, config: dict, env=os.environ) -> dict:
    """Merge flag values over environment variables over config-file values."""
    out = {}
    for key, val in vars(args).items():
        if val is not None:
            out[key] = val
            continue
        name = key.rstrip("_")
        env_key = "DMWP_" + name.upper()
        typ = _TRAIN_OPTS.get(key, (None, str))[1]
        if env_key in env:
            raw = env[env_key]
        elif name in config:
            raw = config[name]
        elif key in config:
            raw = config[key]
        elif key in _TRAIN_OPTS and _TRAIN_OPTS[key][0] in config:
            raw = config[_TRAIN_OPTS[key][0]]
        else:
            out[key] = _DEFAULTS.get(key)
            continue
        if key in _DEFAULTS and isinstance(_DEFAULTS[key], int):
            typ = int
        elif key in _DEFAULTS and isinstance(_DEFAULTS[key], float):
            typ = float
        out[key] = _bool(raw) if typ is bool else typ(raw)
    return out


def train_config(opts: dict) -> TrainConfig:
    kw = {"seed": opts.get("seed") or 0, "workers": opts.get("workers") or 1}
    for dest, (field_name, _) in _TRAIN_OPTS.items():
        if opts.get(dest) is not None:
            kw[field_name] = opts[dest]
    names = {f.name for f in fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in kw.items() if k in names})


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path} is not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise DataError("config file must hold a JSON object")
    return data


# -- subcommands ---------------------------------------------------------------

def cmd_synth(o: dict) -> None:
    t = o["templates"]
    names = DESK_TEMPLATES if t == "desk" else (list(TEMPLATES) if t == "all" else t.split(","))
    mode = Mode.parse(o.get("mode") or "full")
    corpus = synth_corpus(names, o["n"], o["seed"], Mode.WEAK if mode is Mode.WEAK else Mode.FULL)
    if mode is Mode.SEMI_WEAK:
        corpus = semi_weak(corpus, o["weak_fraction"], o["seed"])
    save(corpus, o["out"])
    print(json.dumps(corpus.stats()))


def cmd_wda(o: dict) -> None:
    corpus = load(o["input"]).as_weak()  # annotated equations are ignored, every problem is searched
    cfg = WdaConfig(max_iterations=o.get("max_iter") or 50000)
    summary = batch_augment(corpus, cfg, workers=o["workers"])
    with open(o["out"], "w", encoding="utf-8") as fh:
        for pid, r in summary.results.items():
            fh.write(json.dumps({"id": pid, "equation": render_infix(r.expr) if r.ok else None,
                                 "iterations": r.iterations, "depth": r.depth, "status": r.status}) + "\n")
    print(json.dumps(summary.stats()))


def cmd_augment(o: dict) -> None:
    corpus = load(o["input"])
    cfg = AugmentConfig(disturbance=o["lambda_"] if o.get("lambda_") is not None else 0.3,
                        max_positive_variants=o.get("max_positives") or 32,
                        negatives_per_positive=o.get("negatives") or 2)
    rng = child_rng(o["seed"], "augment")
    batches, skipped = [], 0
    for p in corpus:
        if p.gold is None:
            skipped += 1
            continue
        try:
            batches.append(make_batch(p, gen_positives(p.gold, cfg), rng, cfg))
        except NegativeSamplingError as exc:
            log.warning("%s", exc)
            skipped += 1
    write_batches(batches, o["out"])
    print(json.dumps({"batches": len(batches), "skipped": skipped,
                      "positives": sum(len(b.positives) for b in batches),
                      "negatives": sum(len(b.negatives) for b in batches)}))


def _train_corpus(o: dict) -> Corpus:
    corpus = load(o["input"])
    if o.get("drop_trivial"):
        kept = [p for p in corpus if not p.trivial]
        log.info("dropped %d trivial problems", len(corpus) - len(kept))
        if not kept:
            raise DataError("every problem is flagged trivial")
        corpus = Corpus(kept, infer_mode(kept))
    return corpus


def cmd_train(o: dict) -> None:
    cfg = train_config(o)
    corpus = _train_corpus(o)
    out = Path(o["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "instrument.jsonl", "w", encoding="utf-8") as log_fh:
        def sink(rec):
            log_fh.write(json.dumps(rec) + "\n")
            if rec.get("event") == "epoch":
                log.info("epoch %d loss %.4f disc %.4f buffer %d", rec["epoch"], rec["solver_loss"],
                         rec["disc_loss"], rec["buffer_total"])

        tr = Trainer(corpus, cfg, sink=sink)
        tr.run()
    tr.save(out / "model.ckpt")
    save_buffers(tr.buffers, out / "buffers.jsonl")
    result = {"config": asdict(cfg), "epochs": tr.metrics.epochs}
    if o.get("test"):
        result["final"] = evaluate(tr.solver, load(o["test"]).problems, cfg.beam, cfg.topk_mode)
    (out / "metrics.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    last = tr.metrics.epochs[-1]
    print(json.dumps({"epochs": cfg.epochs, "final_loss": last["solver_loss"], "buffer_total": last["buffer_total"],
                      **result.get("final", {})}))


def cmd_eval(o: dict) -> None:
    solver, _ = load_model(o["checkpoint"])
    corpus = load(o["input"])
    k = o.get("beam") or 5
    mode = o.get("topk_mode") or "all"
    acc = evaluate(solver, corpus.problems, k, mode)
    if o.get("trace"):
        trace = []
        beams = []
        for lo in range(0, len(corpus), 64):
            beams += solver.beam_decode(corpus.problems[lo:lo + 64], k)
        for p, bs in zip(corpus.problems, beams):
            rows = []
            for toks, lp in bs:
                try:
                    e = from_prefix(toks, solver.out.constants)
                    v = try_evaluate(e, p.values)
                    rows.append({"prefix": " ".join(toks), "infix": render_infix(e), "logp": lp, "value": v,
                                 "correct": matches_answer(v, p.answer)})
                except ExprError:
                    rows.append({"prefix": " ".join(toks), "logp": lp, "correct": False})
            trace.append({"id": p.id, "answer": p.answer, "beams": rows})
        Path(o["trace"]).write_text(json.dumps(trace, indent=1))
    if o.get("out"):
        Path(o["out"]).write_text(json.dumps(acc, indent=1) + "\n")
    print(f"top-k answer accuracy ({mode} of top-j correct), beam {k}, {len(corpus)} problems")
    for key, v in acc.items():
        print(f"  {key:<6} {100 * v:6.2f}")


def cmd_kfold(o: dict) -> None:
    cfg = train_config(o)
    corpus = _train_corpus(o)
    res = run_kfold(corpus, cfg, o["folds"], o["out_dir"])
    print(json.dumps(res["mean"]))


def cmd_ablate(o: dict) -> None:
    cfg = train_config(o)
    corpus = _train_corpus(o)
    variants = o["variants"].split(",")
    seeds = [int(s) for s in str(o["seeds"]).split(",")]
    rows = ablate(corpus, cfg, variants, seeds, o["folds"], o["fold"])
    summary = summarize(rows)
    Path(o["out"]).write_text(json.dumps({"rows": rows, "summary": summary}, indent=1, sort_keys=True) + "\n")
    for v, st in summary.items():
        print(v, " ".join(f"{k}={st[k]:.3f}" for k in st if k.startswith("top") and not k.endswith("_se")))


def cmd_inspect(o: dict) -> None:
    bufs = load_buffers(o["buffers"])
    if o.get("id"):
        if o["id"] not in bufs:
            raise DataError(f"no buffer for problem {o['id']!r}")
        print(inspect(bufs[o["id"]]))
        return
    for b in bufs.values():
        print(inspect(b))


def cmd_stats(o: dict) -> None:
    corpus = load(o["input"])
    rep = corpus.stats()
    rep["templates"] = dict(sorted(Counter(p.template or "unknown" for p in corpus).items()))
    text = json.dumps(rep, indent=1)
    if o.get("out"):
        Path(o["out"]).write_text(text + "\n")
    print(text)


def cmd_convert(o: dict) -> None:
    print(json.dumps(convert_math23k(o["input"], o["out"])))


COMMANDS = {"synth": cmd_synth, "wda": cmd_wda, "augment": cmd_augment, "train": cmd_train, "eval": cmd_eval,
            "kfold": cmd_kfold, "ablate": cmd_ablate, "inspect-buffer": cmd_inspect, "stats": cmd_stats,
            "convert": cmd_convert}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for key in ("config", "seed", "workers"):
            if not hasattr(args, key):
                setattr(args, key, None)
        args.verbose = getattr(args, "verbose", False)
        if not args.command:
            raise UsageError("a subcommand is required (see --help)")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
        config = _read_json(args.config) if args.config else {}
        opts = resolve(args, config)
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ExprError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ad.NonFiniteError, NegativeSamplingError, ArithmeticError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
