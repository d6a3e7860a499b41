"""Bilinear problem/solution fitness scorer trained with a contrastive objective.

``t = sigmoid(mean(Z_w) . X_t . mean(Z_s))`` where ``Z_w`` comes from the
solver's encoder and ``Z_s`` from a bidirectional GRU over the solution's
prefix tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .expr import DEFAULT_CONSTANTS, Expr, to_prefix


@dataclass(frozen=True)
class DiscConfig:
    embedding: int = 32
    hidden: int = 64
    problem_dim: int = 64  # width of the solver's pooled encoding
    updates_encoder: bool = False


class Discriminator:
    def __init__(self, cfg: DiscConfig, tokens: Sequence[str], rng: np.random.Generator,
                 constants: Sequence[float] = DEFAULT_CONSTANTS):
        self.cfg = cfg
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.constants = tuple(constants)
        E, H = cfg.embedding, cfg.hidden
        p = self.params = ad.ParamStore()
        p.create("emb", (len(self.tokens), E), rng)
        for d in ("f", "b"):
            p.create(f"enc_{d}_wx", (E, 3 * H), rng)
            p.create(f"enc_{d}_wh", (H, 3 * H), rng)
            p.create(f"enc_{d}_b", (3 * H,), rng, fan_in=H)
        p.create("x_t", (cfg.problem_dim, H), rng)

    def token_ids(self, sol: Expr | Sequence[str]) -> list[int]:
        toks = to_prefix(sol, self.constants) if not isinstance(sol, (list, tuple)) else sol
        try:
            return [self.index[t] for t in toks]
        except KeyError as exc:
            raise ValueError(f"unknown solution token {exc.args[0]!r}") from None

    def encode_solutions(self, sols: Sequence[Expr | Sequence[str]]) -> tuple[ad.Tensor, ad.Tensor, np.ndarray]:
        """Per-token vectors (B, T, H), mean vectors (B, H) and the mask."""
        ids = [self.token_ids(s) for s in sols]
        B, T = len(ids), max(len(x) for x in ids)
        idx = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T))
        for i, x in enumerate(ids):
            idx[i, :len(x)] = x
            mask[i, :len(x)] = 1.0
        prm = self.params
        emb = ad.reshape(ad.embedding_lookup(prm["emb"], idx.reshape(-1)), (B, T, self.cfg.embedding))
        z = ad.add(ad.gru(emb, mask, prm["enc_f_wx"], prm["enc_f_wh"], prm["enc_f_b"]),
                   ad.gru(emb, mask, prm["enc_b_wx"], prm["enc_b_wh"], prm["enc_b_b"], reverse=True))
        mean = ad.mul(ad.sum(z, axis=1), 1.0 / mask.sum(axis=1, keepdims=True))
        return z, mean, mask

    def encode_solution(self, sol: Expr | Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        with ad.no_grad():
            z, mean, mask = self.encode_solutions([sol])
        n = int(mask[0].sum())
        return z.data[0, :n], mean.data[0]

    def logits(self, zw: ad.Tensor, sols: Sequence[Expr | Sequence[str]]) -> ad.Tensor:
        """Bilinear forms for row-aligned problem means ``zw`` (B, D) and solutions."""
        _, zs, _ = self.encode_solutions(sols)
        return ad.sum(ad.mul(ad.matmul(zw, self.params["x_t"]), zs), axis=1)

    def score(self, zw, sols: Sequence[Expr | Sequence[str]]) -> np.ndarray:
        """Scores in (0, 1); ``zw`` is one problem mean (D,) or row-aligned means (B, D)."""
        zw = np.asarray(zw.data if isinstance(zw, ad.Tensor) else zw, dtype=np.float64)
        if zw.ndim == 1:
            zw = np.broadcast_to(zw, (len(sols), zw.shape[0]))
        with ad.no_grad():
            out = self.logits(ad.Tensor(np.array(zw)), sols)
        return 0.5 * (1.0 + np.tanh(0.5 * out.data))

    def contrastive_loss(self, zw: ad.Tensor, sols: Sequence[Expr | Sequence[str]],
                         labels: Sequence[int]) -> ad.Tensor:
        """``-sum log t`` over positives ``- sum log(1 - t)`` over negatives."""
        labels = np.asarray(labels)
        if not (labels == 1).any() or not (labels == 0).any():
            raise ValueError("contrastive loss needs at least one positive and one negative")
        lg = self.logits(zw, sols)
        sign = np.where(labels == 1, 1.0, -1.0)
        return ad.scale(ad.sum(ad.log_sigmoid(ad.mul(lg, sign))), -1.0)

    def batch_loss(self, batch, zw_row: np.ndarray | ad.Tensor) -> ad.Tensor:
        """Loss of one ContrastBatch against a single problem mean vector."""
        sols = list(batch.positives) + list(batch.negatives)
        labels = [1] * len(batch.positives) + [0] * len(batch.negatives)
        if isinstance(zw_row, ad.Tensor):
            zw = ad.take(ad.reshape(zw_row, (1, zw_row.shape[-1])), np.zeros(len(sols), dtype=np.int64))
        else:
            zw = ad.Tensor(np.broadcast_to(np.asarray(zw_row), (len(sols), len(zw_row))).copy())
        return self.contrastive_loss(zw, sols, labels)

    def state(self) -> dict[str, np.ndarray]:
        return self.params.snapshot()

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.params.load_arrays(arrays)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    from sklearn.metrics import roc_auc_score

    return float(roc_auc_score(np.asarray(labels), np.asarray(scores)))
