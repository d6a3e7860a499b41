"""Iterative training: weighted solver updates, discriminator updates and
periodic buffer refresh from beam search; evaluation and k-fold runs."""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, NegativeSamplingError, gen_negatives, gen_positives
from .buffer import (
    VARIANTS,
    SolutionBuffer,
    apply_cap,
    compute_weights,
    init_buffers,
    update_from_beams,
)
from .dataio import Corpus, DataError, Mode, Problem, kfold
from .discriminator import DiscConfig, Discriminator, roc_auc
from .expr import EPS, ExprError, from_prefix, matches_answer, try_evaluate
from .solver import Solver, SolverConfig, build_input_vocab
from .wda import WdaConfig, batch_augment

log = logging.getLogger(__name__)


def child_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per named component, all derived from one seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class TrainConfig:
    mode: str = "full"
    epochs: int = 200
    stage_switch: int = 100
    refresh_period: int = 5
    beam: int = 5
    lr: float = 1e-3
    lr_halving: int = 30
    batch_size: int = 64
    seed: int = 0
    variant: str = "full_method"
    topk_mode: str = "all"
    use_wda: bool = False  # semi-weak only: seed answer-only buffers by search
    max_iterations: int = 50000
    embedding: int = 32
    hidden: int = 64
    max_quantities: int = 8
    disc_updates_encoder: bool = False
    disc_positives: int = 2  # positives sampled per problem per epoch
    disturbance: float = 0.3
    negatives_per_positive: int = 2
    max_positive_variants: int = 32
    buffer_cap: int | None = None
    workers: int = 1
    log_weights: bool = False

    def __post_init__(self):
        self.mode = Mode.parse(self.mode).value
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.topk_mode not in ("all", "any"):
            raise ValueError("topk_mode must be 'all' or 'any'")
        if self.epochs < 1 or self.refresh_period < 1 or self.lr_halving < 1 or self.beam < 1:
            raise ValueError("epochs, periods and beam width must be at least 1")
        if self.stage_switch > self.epochs:
            raise ValueError("stage_switch must not exceed epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr / 2 ** (epoch // self.lr_halving)

    def refreshes_at(self, epoch: int) -> bool:
        return epoch > 0 and epoch % self.refresh_period == 0

    def uses_discriminator(self, epoch: int) -> bool:
        return self.variant == "full_method" and epoch >= self.stage_switch


@dataclass
class Metrics:
    epochs: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "final": self.final}


def _entropy(a: np.ndarray) -> float:
    p = a / a.sum() if a.sum() > 0 else np.full(len(a), 1.0 / len(a))
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


class Trainer:
    def __init__(self, corpus: Corpus, cfg: TrainConfig, wda_results: Mapping | None = None,
                 sink: Callable[[dict], None] | None = None):
        self.cfg = cfg
        self.corpus = corpus
        self.problems = list(corpus.problems)
        if not self.problems:
            raise DataError("empty training corpus")
        self.sink = sink
        mode = Mode.parse(cfg.mode)
        if mode is Mode.WEAK and corpus.mode is not Mode.WEAK:
            corpus = corpus.as_weak()
            self.problems = list(corpus.problems)
        if wda_results is None and (mode is Mode.WEAK or (mode is Mode.SEMI_WEAK and cfg.use_wda)):
            summary = batch_augment(corpus, WdaConfig(max_iterations=cfg.max_iterations), workers=cfg.workers)
            wda_results = summary.results
            self._emit({"event": "wda", "success_rate": summary.success_rate,
                        "mean_iterations": summary.mean_iterations})
        if mode is Mode.SEMI_WEAK and not cfg.use_wda:
            wda_results = None
        self.buffers: dict[str, SolutionBuffer] = init_buffers(corpus, mode, wda_results)
        if not any(len(b) for b in self.buffers.values()):
            raise DataError("every buffer is empty; training cannot start")

        qmax = max(cfg.max_quantities, max(p.num_count for p in self.problems))
        self.solver = Solver(SolverConfig(cfg.embedding, cfg.hidden, max_quantities=qmax),
                             build_input_vocab(self.problems), child_rng(cfg.seed, "solver-init"))
        self.disc = Discriminator(DiscConfig(cfg.embedding, cfg.hidden, cfg.hidden, cfg.disc_updates_encoder),
                                  self.solver.out.tokens, child_rng(cfg.seed, "disc-init"))
        self.aug = AugmentConfig(cfg.disturbance, cfg.max_positive_variants, cfg.negatives_per_positive)
        self.shuffle_rng = child_rng(cfg.seed, "shuffle")
        self.aug_rng = child_rng(cfg.seed, "augment")
        # positives for the contrastive loss: rule closure of annotated equations
        self.closures = {p.id: gen_positives(p.gold, self.aug) for p in self.problems
                         if p.gold is not None and mode is not Mode.WEAK}
        self.zw: dict[str, np.ndarray] = {}
        self.metrics = Metrics()

    # -- plumbing ----------------------------------------------------------------

    def _emit(self, rec: dict) -> None:
        if self.sink is not None:
            self.sink(rec)

    def _batches(self, items: Sequence, rng: np.random.Generator | None) -> list[list]:
        order = rng.permutation(len(items)) if rng is not None else np.arange(len(items))
        bs = self.cfg.batch_size
        return [[items[i] for i in order[lo:lo + bs]] for lo in range(0, len(items), bs)]

    # -- phases ------------------------------------------------------------------

    def _score_entries(self, probs: Sequence[Problem], pooled: Mapping[str, np.ndarray] | None = None,
                       only_missing: bool = False) -> None:
        """Refresh discriminator scores of buffered entries."""
        probs = [p for p in probs if self.buffers[p.id]]
        for chunk in self._batches(probs, None):
            if pooled is None:
                with ad.no_grad():
                    vecs = self.solver.encode(chunk).pooled.data
            else:
                vecs = np.stack([pooled[p.id] for p in chunk])
            rows, sols, entries = [], [], []
            for j, p in enumerate(chunk):
                for e in self.buffers[p.id].entries:
                    if only_missing and e.t is not None:
                        continue
                    rows.append(j)
                    sols.append(e.expr)
                    entries.append(e)
            if not sols:
                continue
            t = self.disc.score(vecs[np.array(rows)], sols)
            for e, v in zip(entries, t):
                e.t = float(v)

    def solver_phase(self, epoch: int) -> float:
        cfg = self.cfg
        lr = cfg.lr_at(epoch)
        active = [p for p in self.problems if self.buffers[p.id]]
        if cfg.uses_discriminator(epoch):
            self._score_entries(active, only_missing=True)
        total, n = 0.0, 0
        for chunk in self._batches(active, self.shuffle_rng):
            with ad.Tape() as tape:
                enc = self.solver.encode(chunk)
                idx, seqs, owners = [], [], []
                for j, p in enumerate(chunk):
                    for e in self.buffers[p.id].entries:
                        idx.append(j)
                        seqs.append(self.solver.out.encode(e.expr))
                        owners.append(e)
                steps, order, logp = self.solver.teacher_force(enc, idx, seqs)
                coef = np.empty(len(seqs))
                k = 0
                for p in chunk:
                    buf = self.buffers[p.id]
                    m = len(buf)
                    lp = logp[k:k + m]
                    ts = [e.t for e in buf.entries] if cfg.uses_discriminator(epoch) else None
                    s, a = compute_weights(lp, ts, epoch, cfg.stage_switch, cfg.variant)
                    for e, l_, a_ in zip(buf.entries, lp, a):
                        e.logp, e.weight = float(l_), float(a_)
                    coef[k:k + m] = -a
                    if cfg.log_weights:
                        self._emit({"event": "weights", "epoch": epoch, "problem": p.id, "size": m,
                                    "s": s.tolist(), "t": [e.t for e in buf.entries], "a": a.tolist(),
                                    "stage": 2 if cfg.uses_discriminator(epoch) else 1})
                    k += m
                loss = self.solver.loss_from_steps(steps, order, coef)
            grads = ad.backward(tape, loss, self.solver.params)
            ad.adam_step(self.solver.params, grads, lr)
            for j, p in enumerate(chunk):
                self.zw[p.id] = enc.pooled.data[j]
            total += loss.item()
            n += len(chunk)
        return total / max(n, 1)

    def contrast_rows(self, probs: Sequence[Problem], rng: np.random.Generator):
        """(problem index, solution, label) rows for the contrastive loss."""
        rows = []
        for j, p in enumerate(probs):
            buf = self.buffers[p.id]
            if not buf:
                continue
            if p.id in self.closures:
                pool = self.closures[p.id]
                take = min(self.cfg.disc_positives, len(pool))
                pos = [pool[i] for i in sorted(rng.choice(len(pool), size=take, replace=False))]
            else:
                pos = [buf.entries[0].expr]
            try:
                neg = [n for e in pos for n in gen_negatives(e, p, rng, self.aug)]
            except NegativeSamplingError as exc:
                log.debug("skipping contrastive rows: %s", exc)
                continue
            rows += [(j, e, 1) for e in pos] + [(j, e, 0) for e in neg]
        return rows

    def disc_phase(self, epoch: int) -> float:
        cfg = self.cfg
        lr = cfg.lr_at(epoch)
        active = [p for p in self.problems if self.buffers[p.id]]
        total, n = 0.0, 0
        for chunk in self._batches(active, self.shuffle_rng):
            rows = self.contrast_rows(chunk, self.aug_rng)
            labels = [r[2] for r in rows]
            if not rows or 1 not in labels or 0 not in labels:
                continue
            ridx = np.array([r[0] for r in rows])
            with ad.Tape() as tape:
                if cfg.disc_updates_encoder:
                    zw = ad.take(self.solver.encode(chunk).pooled, ridx)
                else:
                    zw = ad.Tensor(np.stack([self.zw[p.id] if p.id in self.zw else self._pooled(p)
                                             for p in chunk])[ridx])
                loss = self.disc.contrastive_loss(zw, [r[1] for r in rows], labels)
            grads = ad.backward(tape, loss, self.disc.params)
            ad.adam_step(self.disc.params, grads, lr)
            if cfg.disc_updates_encoder:
                sg = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                      for k, t in self.solver.params.items()}
                ad.adam_step(self.solver.params, sg, lr)
            total += loss.item()
            n += len(rows)
        return total / max(n, 1)

    def _pooled(self, p: Problem) -> np.ndarray:
        with ad.no_grad():
            return self.solver.encode([p]).pooled.data[0]

    def refresh(self, epoch: int) -> int:
        """Beam-decode every training problem and append new value-correct solutions."""
        added = 0
        for chunk in self._batches(self.problems, None):
            with ad.no_grad():
                enc = self.solver.encode(chunk)
                beams = self.solver.beam_decode(chunk, self.cfg.beam, enc=enc)
            for p, bs in zip(chunk, beams):
                buf = self.buffers[p.id]
                added += len(update_from_beams(buf, bs, epoch, self.solver.out.constants))
                apply_cap(buf, self.cfg.buffer_cap)
            if self.cfg.variant == "full_method":
                self._score_entries(chunk, {p.id: enc.pooled.data[j] for j, p in enumerate(chunk)})
        return added

    # -- main loop -----------------------------------------------------------------

    def run_epoch(self, epoch: int) -> dict:
        cfg = self.cfg
        sizes_before = {pid: len(b) for pid, b in self.buffers.items()}
        s_loss = self.solver_phase(epoch)
        d_loss = self.disc_phase(epoch) if cfg.variant != "gold_only" else 0.0
        refreshed = cfg.refreshes_at(epoch) and cfg.variant != "gold_only"
        added = self.refresh(epoch) if refreshed else 0
        sizes = [len(b) for b in self.buffers.values()]
        hist: dict[str, int] = {}
        for s in sizes:
            hist[str(s)] = hist.get(str(s), 0) + 1
        ent = [_entropy(np.array([e.weight for e in b.entries])) for b in self.buffers.values() if len(b)]
        rec = {"epoch": epoch, "lr": cfg.lr_at(epoch), "stage": 2 if cfg.uses_discriminator(epoch) else 1,
               "solver_loss": s_loss, "disc_loss": d_loss, "refresh": refreshed, "added": added,
               "buffer_total": int(sum(sizes)), "buffer_hist": dict(sorted(hist.items(), key=lambda kv: int(kv[0]))),
               "mean_entropy": float(np.mean(ent)) if ent else 0.0,
               "shrunk": sum(len(self.buffers[k]) < v for k, v in sizes_before.items())}
        self.metrics.epochs.append(rec)
        self._emit({"event": "epoch", **rec})
        return rec

    def run(self) -> Metrics:
        for epoch in range(self.cfg.epochs):
            self.run_epoch(epoch)
        return self.metrics

    # -- persistence ------------------------------------------------------------------

    def save(self, path) -> None:
        save_model(path, self.solver, self.disc)


def save_model(path, solver: Solver, disc: Discriminator | None = None) -> None:
    arrays = {f"solver/{k}": v for k, v in solver.state().items()}
    if disc is not None:
        arrays.update({f"disc/{k}": v for k, v in disc.state().items()})
    ad.save_checkpoint(path, arrays)
    meta = {"input_vocab": solver.input_vocab, "solver": {"embedding": solver.cfg.embedding,
            "hidden": solver.cfg.hidden, "max_quantities": solver.cfg.max_quantities,
            "constants": list(solver.cfg.constants), "ops": [o.value for o in solver.cfg.ops]},
            "disc": disc is not None}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=1))


def load_model(path) -> tuple[Solver, Discriminator | None]:
    from .expr import Op

    meta = json.loads(Path(str(path) + ".json").read_text())
    sc = meta["solver"]
    cfg = SolverConfig(sc["embedding"], sc["hidden"], tuple(Op(o) for o in sc["ops"]), tuple(sc["constants"]),
                       sc["max_quantities"])
    rng = np.random.default_rng(0)
    solver = Solver(cfg, meta["input_vocab"], rng)
    arrays = ad.load_checkpoint(path)
    solver.load_state({k[7:]: v for k, v in arrays.items() if k.startswith("solver/")})
    disc = None
    if meta.get("disc"):
        disc = Discriminator(DiscConfig(cfg.embedding, cfg.hidden, cfg.hidden), solver.out.tokens, rng,
                             cfg.constants)
        disc.load_state({k[5:]: v for k, v in arrays.items() if k.startswith("disc/")})
    return solver, disc


# -- evaluation ---------------------------------------------------------------------

def beam_correctness(solver: Solver, problems: Sequence[Problem], k: int, batch_size: int = 64):
    """Per problem: list of booleans, one per returned beam (best first)."""
    out = []
    for lo in range(0, len(problems), batch_size):
        chunk = problems[lo:lo + batch_size]
        for p, beams in zip(chunk, solver.beam_decode(chunk, k)):
            flags = []
            for toks, _ in beams:
                try:
                    v = try_evaluate(from_prefix(toks, solver.out.constants), p.values)
                except ExprError:
                    v = None
                flags.append(matches_answer(v, p.answer, EPS))
            out.append(flags)
    return out


def topk_accuracy(flags: Sequence[Sequence[bool]], ks: Sequence[int], mode: str = "all") -> dict[str, float]:
    """``all``: the j best beams must all be correct; ``any``: at least one of them."""
    res = {}
    for j in ks:
        if mode == "all":
            hits = [len(f) >= j and all(f[:j]) for f in flags]
        else:
            hits = [any(f[:j]) for f in flags]
        res[f"top{j}"] = float(np.mean(hits)) if hits else 0.0
    return res


def evaluate(solver: Solver, problems: Sequence[Problem], k: int = 5, topk_mode: str = "all") -> dict[str, float]:
    if k < 1:
        raise ValueError("k must be at least 1")
    ks = [j for j in (1, 3, 5) if j <= k]
    if k not in ks:
        ks.append(k)
    return topk_accuracy(beam_correctness(solver, problems, k), ks, topk_mode)


def disc_auc(trainer: Trainer, problems: Sequence[Problem], seed: int = 0) -> float:
    """ROC-AUC of discriminator scores on contrast rows built for ``problems``."""
    rng = child_rng(seed, "auc")
    with ad.no_grad():
        enc = trainer.solver.encode
        scores, labels = [], []
        for lo in range(0, len(problems), 64):
            chunk = [p for p in problems[lo:lo + 64] if p.gold is not None]
            if not chunk:
                continue
            pooled = enc(chunk).pooled.data
            rows = []
            for j, p in enumerate(chunk):
                pos = gen_positives(p.gold, trainer.aug)[:trainer.cfg.disc_positives]
                try:
                    neg = [n for e in pos for n in gen_negatives(e, p, rng, trainer.aug)]
                except NegativeSamplingError:
                    continue
                rows += [(j, e, 1) for e in pos] + [(j, e, 0) for e in neg]
            if not rows:
                continue
            s = trainer.disc.score(pooled[np.array([r[0] for r in rows])], [r[1] for r in rows])
            scores += s.tolist()
            labels += [r[2] for r in rows]
    return roc_auc(scores, labels)


# -- orchestration -------------------------------------------------------------------

def train(corpus: Corpus, cfg: TrainConfig, wda_results: Mapping | None = None,
          sink: Callable[[dict], None] | None = None) -> Trainer:
    tr = Trainer(corpus, cfg, wda_results, sink)
    tr.run()
    return tr


def train_and_eval(train_set: Corpus, test_set: Corpus, cfg: TrainConfig,
                   sink: Callable[[dict], None] | None = None) -> tuple[Trainer, dict]:
    tr = train(train_set, cfg, sink=sink)
    acc = evaluate(tr.solver, test_set.problems, cfg.beam, cfg.topk_mode)
    tr.metrics.final = dict(acc)
    return tr, acc


def run_kfold(corpus: Corpus, cfg: TrainConfig, folds: int = 5, out_dir=None,
              sink: Callable[[dict], None] | None = None, only: Sequence[int] | None = None) -> dict:
    """Train and evaluate on each split; writes metrics (and checkpoints) to ``out_dir``."""
    splits = kfold(corpus, folds, cfg.seed)
    per_fold = []
    for i, (tr_set, te_set) in enumerate(splits):
        if only is not None and i not in only:
            continue
        tr, acc = train_and_eval(tr_set, te_set, cfg, sink)
        per_fold.append({"fold": i, "train": len(tr_set), "test": len(te_set), **acc,
                         "final_buffer_total": tr.metrics.epochs[-1]["buffer_total"]})
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            tr.save(Path(out_dir) / f"fold{i}.ckpt")
    keys = [k for k in per_fold[0] if k.startswith("top")]
    mean = {k: float(np.mean([f[k] for f in per_fold])) for k in keys}
    result = {"config": asdict(cfg), "folds": per_fold, "mean": mean}
    if out_dir is not None:
        write_metrics(result, out_dir)
    return result


def write_metrics(result: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    folds = result["folds"]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(folds[0]))
        w.writeheader()
        w.writerows(folds)


def ablate(corpus: Corpus, cfg: TrainConfig, variants: Sequence[str], seeds: Sequence[int],
           folds: int = 5, fold: int = 0, sink: Callable[[dict], None] | None = None) -> list[dict]:
    """Train each variant for each seed on one held-out split (split fixed by ``cfg.seed``)."""
    tr_set, te_set = kfold(corpus, folds, cfg.seed)[fold]
    rows = []
    for v in variants:
        for s in seeds:
            c = TrainConfig(**{**asdict(cfg), "variant": v, "seed": s})
            _, acc = train_and_eval(tr_set, te_set, c, sink)
            rows.append({"variant": v, "seed": s, **acc})
    return rows


def summarize(rows: Sequence[dict]) -> dict[str, dict[str, float]]:
    """Mean and standard error of every top-j column per variant."""
    out: dict[str, dict[str, float]] = {}
    for v in dict.fromkeys(r["variant"] for r in rows):
        sub = [r for r in rows if r["variant"] == v]
        stats = {"n": len(sub)}
        for key in (k for k in sub[0] if k.startswith("top")):
            xs = np.array([r[key] for r in sub])
            stats[key] = float(xs.mean())
            stats[key + "_se"] = float(xs.std(ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else 0.0
        out[v] = stats
    return out


__all__ = ["TrainConfig", "Trainer", "Metrics", "train", "train_and_eval", "evaluate", "topk_accuracy",
           "run_kfold", "ablate", "summarize", "disc_auc", "save_model", "load_model", "child_rng",
           "beam_correctness", "write_metrics"]
