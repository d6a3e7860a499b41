"""Sequence encoder + goal-driven tree decoder.

The encoder is a bidirectional GRU whose two directions are summed.  The
decoder keeps a stack of pending goals: predicting an operator splits the
current goal into a left goal (expanded next) and a pending right goal; a
finished left subtree conditions the right goal, and a finished right
subtree is merged with its operator and left sibling into a subtree
embedding that propagates upwards.

Teacher forcing runs all target sequences of a minibatch in lock-step, one
prefix position at a time; sequences are sorted by length so that the rows
still active at step ``t`` are always a prefix of the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .dataio import Problem
from .expr import DEFAULT_CONSTANTS, OPS, Expr, Op, constant_token, from_prefix, to_prefix

PAD, UNK, NUM = "<pad>", "<unk>", "NUM"
NEG = -1e9


@dataclass(frozen=True)
class SolverConfig:
    embedding: int = 32
    hidden: int = 64
    ops: tuple[Op, ...] = OPS
    constants: tuple[float, ...] = DEFAULT_CONSTANTS
    max_quantities: int = 8


class OutputVocab:
    """Decoder vocabulary: operators, then constants ``C<j>``, then ``N1..Nmax``."""

    def __init__(self, ops: Sequence[Op], constants: Sequence[float], max_quantities: int):
        self.ops = tuple(ops)
        self.constants = tuple(constants)
        self.max_quantities = max_quantities
        self.tokens = ([op.value for op in self.ops] + [f"C{j}" for j in range(1, len(self.constants) + 1)]
                       + [f"N{i}" for i in range(1, max_quantities + 1)])
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.n_ops = len(self.ops)
        self.n_leaves = len(self.tokens) - self.n_ops

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, e: Expr) -> list[int]:
        out = []
        for tok in to_prefix(e, self.constants):
            if tok not in self.index:
                raise ValueError(f"token {tok!r} is outside the decoder vocabulary")
            out.append(self.index[tok])
        return out

    def decode(self, ids: Sequence[int]) -> Expr:
        return from_prefix([self.tokens[i] for i in ids], self.constants)

    def valid_leaf_mask(self, num_count: int) -> np.ndarray:
        m = np.zeros(self.n_leaves)
        m[len(self.constants) + num_count:] = NEG
        return m


@dataclass
class Encoding:
    """Encoder output for a batch of problems."""

    outputs: ad.Tensor  # (P, T, H) per-token context vectors
    mask: np.ndarray  # (P, T) 1 for real tokens
    pooled: ad.Tensor  # (P, H) mean of the context vectors
    root: ad.Tensor  # (P, H) root goals
    leaves: ad.Tensor  # (P, L, H) constant + quantity embeddings
    leaf_mask: np.ndarray  # (P, L) additive mask
    counts: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.mask.shape[0]


def build_input_vocab(problems: Sequence[Problem]) -> list[str]:
    words = sorted({_input_token(t) for p in problems for t in p.tokens})
    return [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]


def _input_token(tok: str) -> str:
    if tok.startswith("N") and tok[1:].isdigit():
        return NUM
    return tok.lower()


class Solver:
    def __init__(self, cfg: SolverConfig, input_vocab: Sequence[str], rng: np.random.Generator):
        self.cfg = cfg
        self.input_vocab = list(input_vocab)
        self.word_index = {w: i for i, w in enumerate(self.input_vocab)}
        self.out = OutputVocab(cfg.ops, cfg.constants, cfg.max_quantities)
        E, H = cfg.embedding, cfg.hidden
        p = self.params = ad.ParamStore()
        p.create("emb", (len(self.input_vocab), E), rng)
        for d in ("f", "b"):
            p.create(f"enc_{d}_wx", (E, 3 * H), rng)
            p.create(f"enc_{d}_wh", (H, 3 * H), rng)
            p.create(f"enc_{d}_b", (3 * H,), rng, fan_in=H)
        p.create("root_w", (H, H), rng)
        p.create("root_b", (H,), rng, fan_in=H)
        p.create("att_w", (H, H), rng)
        p.create("score_w", (2 * H, H), rng)
        p.create("score_b", (H,), rng, fan_in=2 * H)
        p.create("op_w", (H, self.out.n_ops), rng)
        p.create("op_b", (self.out.n_ops,), rng, fan_in=H)
        p.create("leaf_w", (H, H), rng)
        if self.out.constants:
            p.create("const_emb", (len(self.out.constants), H), rng, fan_in=H)
        p.create("op_emb", (self.out.n_ops, H), rng, fan_in=H)
        p.create("left_w", (3 * H, 2 * H), rng)
        p.create("left_b", (2 * H,), rng, fan_in=3 * H)
        p.create("right_w", (3 * H, 2 * H), rng)
        p.create("right_b", (2 * H,), rng, fan_in=3 * H)
        p.create("goal_w", (2 * H, 2 * H), rng)
        p.create("goal_b", (2 * H,), rng, fan_in=2 * H)
        p.create("merge_w", (3 * H, 2 * H), rng)
        p.create("merge_b", (2 * H,), rng, fan_in=3 * H)

    # -- encoder -------------------------------------------------------------

    def token_ids(self, p: Problem) -> list[int]:
        unk = self.word_index[UNK]
        return [self.word_index.get(_input_token(t), unk) for t in p.tokens]

    def max_len(self, p: Problem) -> int:
        return 2 * p.num_count + 5

    def encode(self, problems: Sequence[Problem]) -> Encoding:
        P = len(problems)
        H = self.cfg.hidden
        ids = [self.token_ids(p) for p in problems]
        T = max(len(x) for x in ids)
        idx = np.zeros((P, T), dtype=np.int64)
        mask = np.zeros((P, T))
        for i, x in enumerate(ids):
            idx[i, :len(x)] = x
            mask[i, :len(x)] = 1.0
        prm = self.params
        emb = ad.reshape(ad.embedding_lookup(prm["emb"], idx.reshape(-1)), (P, T, self.cfg.embedding))
        fwd = ad.gru(emb, mask, prm["enc_f_wx"], prm["enc_f_wh"], prm["enc_f_b"])
        bwd = ad.gru(emb, mask, prm["enc_b_wx"], prm["enc_b_wh"], prm["enc_b_b"], reverse=True)
        outputs = ad.add(fwd, bwd)
        lengths = mask.sum(axis=1, keepdims=True)
        pooled = ad.mul(ad.sum(outputs, axis=1), 1.0 / lengths)
        root = ad.tanh(ad.add(ad.matmul(pooled, prm["root_w"]), prm["root_b"]))

        Q = self.cfg.max_quantities
        rows = np.zeros(P * Q, dtype=np.int64)
        leaf_mask = np.zeros((P, self.out.n_leaves))
        counts = []
        for i, p in enumerate(problems):
            pos = p.quantity_positions
            if len(pos) > Q:
                raise ValueError(f"problem {p.id} has {len(pos)} quantities; solver supports {Q}")
            rows[i * Q:i * Q + len(pos)] = [i * T + j for j in pos]
            leaf_mask[i] = self.out.valid_leaf_mask(len(pos))
            counts.append(len(pos))
        quant = ad.reshape(ad.take(ad.reshape(outputs, (P * T, H)), rows), (P, Q, H))
        C = len(self.out.constants)
        if C:
            const = ad.reshape(ad.take(prm["const_emb"], np.tile(np.arange(C), P)), (P, C, H))
            leaves = ad.concat([const, quant], axis=1)
        else:
            leaves = quant
        return Encoding(outputs, mask, pooled, root, leaves, leaf_mask, counts)

    # -- decoder cells ---------------------------------------------------------

    def _score(self, goal, outputs, out_mask_add, leaves, leaf_mask_add):
        prm = self.params
        n, T, H = outputs.shape
        qa = ad.reshape(ad.matmul(goal, prm["att_w"]), (n, H, 1))
        att = ad.add(ad.reshape(ad.matmul(outputs, qa), (n, T)), out_mask_add)
        alpha = ad.reshape(ad.softmax(att), (n, 1, T))
        ctx = ad.reshape(ad.matmul(alpha, outputs), (n, H))
        hq = ad.tanh(ad.add(ad.matmul(ad.concat([goal, ctx], axis=1), prm["score_w"]), prm["score_b"]))
        op_logits = ad.add(ad.matmul(hq, prm["op_w"]), prm["op_b"])
        u = ad.reshape(ad.matmul(hq, prm["leaf_w"]), (n, H, 1))
        L = leaves.shape[1]
        leaf_logits = ad.add(ad.reshape(ad.matmul(leaves, u), (n, L)), leaf_mask_add)
        logp = ad.log_softmax(ad.concat([op_logits, leaf_logits], axis=1))
        return logp, ctx

    def _expand(self, goal, ctx, op_ids):
        prm = self.params
        op_e = ad.take(prm["op_emb"], op_ids)
        x = ad.concat([goal, ctx, op_e], axis=1)
        return ad.gated(x, prm["left_w"], prm["left_b"]), ad.gated(x, prm["right_w"], prm["right_b"]), op_e

    def _right_goal(self, pending, left_tree):
        prm = self.params
        return ad.gated(ad.concat([pending, left_tree], axis=1), prm["goal_w"], prm["goal_b"])

    def _merge(self, op_e, left_tree, right_tree):
        prm = self.params
        return ad.gated(ad.concat([op_e, left_tree, right_tree], axis=1), prm["merge_w"], prm["merge_b"])

    # -- teacher forcing -------------------------------------------------------

    def teacher_force(self, enc: Encoding, prob_idx: Sequence[int], targets: Sequence[Sequence[int]]):
        """Score target prefix sequences (decoder ids) under the model.

        Returns ``(steps, order, logp)``: ``steps`` is a list of
        ``(picked, n)`` where ``picked`` holds the log-probabilities of the
        target tokens at that position for the first ``n`` sorted sequences;
        ``order[s]`` is the original index of sorted sequence ``s``; ``logp``
        holds the total log-probability per original sequence.
        """
        S = len(targets)
        lengths = np.array([len(t) for t in targets])
        order = np.argsort(-lengths, kind="stable")
        lengths = lengths[order]
        prob_sorted = np.asarray(prob_idx, dtype=np.int64)[order]
        maxlen = int(lengths[0])
        tok = np.zeros((S, maxlen), dtype=np.int64)
        for s, o in enumerate(order):
            tok[s, :len(targets[o])] = targets[o]
        n_ops = self.out.n_ops
        L = self.out.n_leaves
        H = self.cfg.hidden

        outputs = ad.take(enc.outputs, prob_sorted)
        out_mask_add = (1.0 - enc.mask[prob_sorted]) * NEG
        leaves = ad.take(enc.leaves, prob_sorted)
        leaves_flat = ad.reshape(leaves, (S * L, H))
        leaf_mask_add = enc.leaf_mask[prob_sorted]
        root = ad.take(enc.root, prob_sorted)

        bank: list[ad.Tensor] = [root]
        goal_ref = [(0, s) for s in range(S)]
        stacks: list[list[list]] = [[] for _ in range(S)]
        steps = []
        logp_total = np.zeros(S)
        for t in range(maxlen):
            n = int((lengths > t).sum())
            goal = _gather(bank, goal_ref[:n])
            out_n = outputs if n == S else ad.getitem(outputs, slice(0, n))
            lv_n = leaves if n == S else ad.getitem(leaves, slice(0, n))
            logp, ctx = self._score(goal, out_n, out_mask_add[:n], lv_n, leaf_mask_add[:n])
            toks = tok[:n, t]
            picked = ad.pick(logp, toks)
            steps.append((picked, n))
            logp_total[:n] += picked.data
            is_op = toks < n_ops
            if is_op.any():
                ql, rg, op_e = self._expand(goal, ctx, np.where(is_op, toks, 0))
                bank.extend([ql, rg, op_e])
                iq, ir, ie = len(bank) - 3, len(bank) - 2, len(bank) - 1
                for s in np.nonzero(is_op)[0]:
                    stacks[s].append([(ie, s), (ir, s), None])
                    goal_ref[s] = (iq, s)
            if not is_op.all():
                leaf_rows = np.arange(n) * L + np.where(is_op, 0, toks - n_ops)
                bank.append(ad.take(leaves_flat, leaf_rows))
                il = len(bank) - 1
                pending = [(s, (il, s)) for s in np.nonzero(~is_op)[0]]
                self._cascade(bank, stacks, goal_ref, pending)
        return steps, order, _unsort(logp_total, order)

    def _cascade(self, bank, stacks, goal_ref, pending):
        """Attach finished subtrees to their parents, merging upwards."""
        while pending:
            rights, merges = [], []
            for s, tref in pending:
                st = stacks[s]
                if not st:
                    continue
                (rights if st[-1][2] is None else merges).append((s, tref))
            if rights:
                rg = self._right_goal(_gather(bank, [stacks[s][-1][1] for s, _ in rights]),
                                      _gather(bank, [tr for _, tr in rights]))
                bank.append(rg)
                ig = len(bank) - 1
                for i, (s, tref) in enumerate(rights):
                    stacks[s][-1][2] = tref
                    goal_ref[s] = (ig, i)
            pending = []
            if merges:
                frames = [stacks[s][-1] for s, _ in merges]
                m = self._merge(_gather(bank, [f[0] for f in frames]), _gather(bank, [f[2] for f in frames]),
                                _gather(bank, [tr for _, tr in merges]))
                bank.append(m)
                im = len(bank) - 1
                for i, (s, _) in enumerate(merges):
                    stacks[s].pop()
                    pending.append((s, (im, i)))

    def weighted_loss(self, problems: Sequence[Problem], targets: Sequence[Sequence[Expr]],
                      weights: Sequence[Sequence[float]], enc: Encoding | None = None):
        """``-sum_i a_i log P(B_i | W)`` summed over the given problems.

        Returns ``(loss, logp)`` where ``logp[j]`` lists the per-entry
        log-probabilities of problem ``j`` (from the same forward pass).
        """
        if enc is None:
            enc = self.encode(problems)
        prob_idx, seqs, coef = [], [], []
        for j, (exprs, ws) in enumerate(zip(targets, weights)):
            if len(exprs) != len(ws):
                raise ValueError("one weight per buffer entry is required")
            if not exprs:
                raise ValueError(f"problem {problems[j].id}: empty buffer")
            for e, w in zip(exprs, ws):
                if not (math.isfinite(w) and w >= 0):
                    raise ValueError(f"weights must be finite and non-negative, got {w}")
                prob_idx.append(j)
                seqs.append(self.out.encode(e))
                coef.append(-float(w))
        steps, order, logp = self.teacher_force(enc, prob_idx, seqs)
        loss = self.loss_from_steps(steps, order, np.asarray(coef))
        split, k = [], 0
        for exprs in targets:
            split.append(logp[k:k + len(exprs)])
            k += len(exprs)
        return loss, split

    @staticmethod
    def loss_from_steps(steps, order, coef: np.ndarray) -> ad.Tensor:
        """Sum of ``coef[seq] * log p(token)`` over all steps."""
        c_sorted = np.asarray(coef, dtype=np.float64)[order]
        total = None
        for picked, n in steps:
            term = ad.sum(ad.mul(picked, c_sorted[:n]))
            total = term if total is None else ad.add(total, term)
        return total

    def sequence_log_prob(self, problem: Problem, target: Expr, enc: Encoding | None = None) -> float:
        with ad.no_grad():
            enc = enc or self.encode([problem])
            _, _, logp = self.teacher_force(enc, [0], [self.out.encode(target)])
        return float(logp[0])

    def log_probs(self, problems: Sequence[Problem], targets: Sequence[Sequence[Expr]],
                  batch_size: int = 64) -> list[np.ndarray]:
        """Model log-probabilities of every target of every problem (no gradients)."""
        out: list[np.ndarray] = []
        with ad.no_grad():
            for lo in range(0, len(problems), batch_size):
                probs = problems[lo:lo + batch_size]
                tg = targets[lo:lo + batch_size]
                enc = self.encode(probs)
                idx = [j for j, ex in enumerate(tg) for _ in ex]
                seqs = [self.out.encode(e) for ex in tg for e in ex]
                if seqs:
                    _, _, lp = self.teacher_force(enc, idx, seqs)
                else:
                    lp = np.zeros(0)
                k = 0
                for ex in tg:
                    out.append(lp[k:k + len(ex)])
                    k += len(ex)
        return out

    # -- search ------------------------------------------------------------------

    def beam_decode(self, problems: Sequence[Problem], k: int, enc: Encoding | None = None,
                    max_len: Sequence[int] | None = None) -> list[list[tuple[list[str], float]]]:
        """Beam search for every problem; results sorted by descending log-prob."""
        if k < 1:
            raise ValueError("beam width must be at least 1")
        with ad.no_grad():
            enc = enc or self.encode(problems)
            limits = list(max_len) if max_len is not None else [self.max_len(p) for p in problems]
            return _BeamSearch(self, enc, k, limits).run()

    def greedy_decode(self, problem: Problem) -> tuple[list[str], float]:
        with ad.no_grad():
            enc = self.encode([problem])
            limit = self.max_len(problem)
            O = enc.outputs.data
            lv = enc.leaves.data
            goal = enc.root.data[0:1]
            stack: list[list] = []
            toks: list[int] = []
            need, total = 1, 0.0
            while need:
                logp, ctx = self._score(ad.Tensor(goal), ad.Tensor(O), (1.0 - enc.mask) * NEG,
                                        ad.Tensor(lv), enc.leaf_mask)
                lp = logp.data[0].copy()
                lp[_disallowed(self.out, len(toks), need, limit)] = -np.inf
                lp[lp < NEG / 2] = -np.inf
                j = int(np.argmax(lp))
                if not np.isfinite(lp[j]):
                    return [], -math.inf
                toks.append(j)
                total += float(lp[j])
                if j < self.out.n_ops:
                    ql, rg, op_e = self._expand(ad.Tensor(goal), ctx, np.array([j]))
                    stack.append([op_e.data, rg.data, None])
                    goal = ql.data
                    need += 1
                else:
                    need -= 1
                    tree = lv[0:1, j - self.out.n_ops]
                    while stack:
                        fr = stack[-1]
                        if fr[2] is None:
                            fr[2] = tree
                            goal = self._right_goal(ad.Tensor(fr[1]), ad.Tensor(tree)).data
                            break
                        stack.pop()
                        tree = self._merge(ad.Tensor(fr[0]), ad.Tensor(fr[2]), ad.Tensor(tree)).data
            return [self.out.tokens[i] for i in toks], total

    # -- persistence -----------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return self.params.snapshot()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.params.load_arrays(arrays)


def _disallowed(out: OutputVocab, length: int, need: int, limit: int) -> np.ndarray:
    """Boolean mask of tokens that can no longer yield a complete sequence within ``limit``."""
    bad = np.zeros(len(out), dtype=bool)
    # an operator adds one token and one more open slot
    if length + 1 + need + 1 > limit:
        bad[:out.n_ops] = True
    if length + need > limit:
        bad[:] = True
    return bad


@dataclass
class _Beam:
    prob: int
    tokens: tuple[int, ...]
    logp: float
    goal: np.ndarray | None
    stack: tuple  # frames (op_e, pending_right, left_tree or None)
    need: int


class _BeamSearch:
    def __init__(self, solver: Solver, enc: Encoding, k: int, limits: list[int]):
        self.s = solver
        self.enc = enc
        self.k = k
        self.limits = limits

    def run(self):
        s, enc, k = self.s, self.enc, self.k
        P = len(enc)
        root = enc.root.data
        beams: list[list[_Beam]] = [[_Beam(p, (), 0.0, root[p], (), 1)] for p in range(P)]
        finished: list[list[_Beam]] = [[] for _ in range(P)]
        n_ops = s.out.n_ops
        V = len(s.out)
        O = enc.outputs.data
        M = (1.0 - enc.mask) * NEG
        LV = enc.leaves.data
        LM = enc.leaf_mask
        while any(beams):
            live = [b for bs in beams for b in bs]
            pidx = np.array([b.prob for b in live])
            goal = np.stack([b.goal for b in live])
            logp, ctx = s._score(ad.Tensor(goal), ad.Tensor(O[pidx]), M[pidx], ad.Tensor(LV[pidx]), LM[pidx])
            lp = logp.data.copy()
            for i, b in enumerate(live):
                lp[i, _disallowed(s.out, len(b.tokens), b.need, self.limits[b.prob])] = -np.inf
            lp[lp < NEG / 2] = -np.inf
            cand = lp + np.array([b.logp for b in live])[:, None]
            chosen = []  # (row, token)
            row = 0
            for p in range(P):
                nb = len(beams[p])
                if nb == 0:
                    continue
                block = cand[row:row + nb].reshape(-1)
                fin = finished[p]
                # hypotheses already finished compete for the same k slots
                pool = [(float(block[j]), 0, row + j // V, j % V) for j in np.argsort(-block, kind="stable")[:k]
                        if np.isfinite(block[j])]
                pool += [(f.logp, 1, f, None) for f in fin]
                pool.sort(key=lambda x: -x[0])
                pool = pool[:k]
                finished[p] = [x[2] for x in pool if x[1] == 1]
                chosen.extend((x[2], x[3]) for x in pool if x[1] == 0)
                row += nb
            new_beams: list[list[_Beam]] = [[] for _ in range(P)]
            if chosen:
                self._advance(live, chosen, cand, ctx, n_ops, LV, new_beams, finished)
            beams = new_beams
        out = []
        for p in range(P):
            fs = sorted(finished[p], key=lambda b: -b.logp)[:k]
            out.append([([s.out.tokens[i] for i in b.tokens], b.logp) for b in fs])
        return out

    def _advance(self, live, chosen, cand, ctx, n_ops, LV, new_beams, finished):
        s = self.s
        rows = np.array([r for r, _ in chosen])
        toks = np.array([t for _, t in chosen])
        is_op = toks < n_ops
        results: list[_Beam | None] = [None] * len(chosen)
        if is_op.any():
            sel = np.nonzero(is_op)[0]
            goal = np.stack([live[rows[i]].goal for i in sel])
            ql, rg, op_e = s._expand(ad.Tensor(goal), ad.Tensor(ctx.data[rows[sel]]), toks[sel])
            for j, i in enumerate(sel):
                b = live[rows[i]]
                frame = (op_e.data[j], rg.data[j], None)
                results[i] = _Beam(b.prob, b.tokens + (int(toks[i]),), float(cand[rows[i], toks[i]]),
                                   ql.data[j], b.stack + (frame,), b.need + 1)
        # leaves: attach to parents, merging finished subtrees in batched rounds
        pending = []
        for i in np.nonzero(~is_op)[0]:
            b = live[rows[i]]
            tree = LV[b.prob, toks[i] - n_ops]
            nb = _Beam(b.prob, b.tokens + (int(toks[i]),), float(cand[rows[i], toks[i]]), None, b.stack,
                       b.need - 1)
            results[i] = nb
            pending.append((i, tree))
        while pending:
            rights, merges = [], []
            for i, tree in pending:
                st = results[i].stack
                if not st:
                    continue
                (rights if st[-1][2] is None else merges).append((i, tree))
            if rights:
                g = s._right_goal(ad.Tensor(np.stack([results[i].stack[-1][1] for i, _ in rights])),
                                  ad.Tensor(np.stack([t for _, t in rights]))).data
                for j, (i, tree) in enumerate(rights):
                    b = results[i]
                    op_e, pend, _ = b.stack[-1]
                    b.stack = b.stack[:-1] + ((op_e, pend, tree),)
                    b.goal = g[j]
            pending = []
            if merges:
                fr = [results[i].stack[-1] for i, _ in merges]
                m = s._merge(ad.Tensor(np.stack([f[0] for f in fr])), ad.Tensor(np.stack([f[2] for f in fr])),
                             ad.Tensor(np.stack([t for _, t in merges]))).data
                for j, (i, _) in enumerate(merges):
                    results[i].stack = results[i].stack[:-1]
                    pending.append((i, m[j]))
        for b in results:
            if b.need == 0:
                finished[b.prob].append(b)
            else:
                new_beams[b.prob].append(b)


def _gather(bank: list[ad.Tensor], refs: Sequence[tuple[int, int]]) -> ad.Tensor:
    src = {r[0] for r in refs}
    if len(src) == 1:
        (i,) = src
        rows = [r[1] for r in refs]
        t = bank[i]
        if rows == list(range(len(rows))):
            return t if len(rows) == t.shape[0] else ad.getitem(t, slice(0, len(rows)))
        return ad.take(t, rows)
    return ad.gather_rows(bank, [r[0] for r in refs], [r[1] for r in refs])


def _unsort(values: np.ndarray, order: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[order] = values
    return out


def tokens_to_expr(tokens: Sequence[str], constants: Sequence[float] = DEFAULT_CONSTANTS) -> Expr:
    return from_prefix(list(tokens), constants)


__all__ = ["Solver", "SolverConfig", "Encoding", "OutputVocab", "build_input_vocab", "tokens_to_expr",
           "constant_token"]
