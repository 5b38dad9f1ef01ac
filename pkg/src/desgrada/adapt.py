"""Temporal attention, classifier/discriminator heads, pseudo-labels and losses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad

Q_CLAMP = 1e-7


def _glorot(rng, fan_in, fan_out, name):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return ad.param(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name)


@dataclass
class AttentionParams:
    query: ad.Node
    key_proj: ad.Node
    value_proj: ad.Node

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(
            ad.param(rng.normal(0.0, 1.0 / math.sqrt(d), size=d), "attention.query"),
            _glorot(rng, d, d, "attention.key_proj"),
            _glorot(rng, d, d, "attention.value_proj"),
        )

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.query.value.shape[0])

    def parameters(self):
        return [self.query, self.key_proj, self.value_proj]


@dataclass
class MLPParams:
    """Two affine layers with tanh in between."""

    w1: ad.Node
    b1: ad.Node
    w2: ad.Node
    b2: ad.Node

    @classmethod
    def init(cls, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator, prefix: str):
        return cls(
            _glorot(rng, d_in, d_hidden, f"{prefix}.w1"),
            ad.param(np.zeros(d_hidden), f"{prefix}.b1"),
            _glorot(rng, d_hidden, d_out, f"{prefix}.w2"),
            ad.param(np.zeros(d_out), f"{prefix}.b2"),
        )

    def __call__(self, x) -> ad.Node:
        x = ad.const(x)
        if x.value.ndim == 1:
            x = ad.reshape(x, (1, -1))
        if x.value.shape[1] != self.w1.value.shape[0]:
            raise ad.ShapeError(f"input width {x.value.shape[1]} != {self.w1.value.shape[0]}")
        h = ad.tanh(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def out_dim(self) -> int:
        return self.w2.value.shape[1]


class ClassifierParams(MLPParams):
    """Semantic classifier ``d -> d -> num_classes``; returns logits."""


class DiscriminatorParams(MLPParams):
    """Domain discriminator ``in -> d -> 1``; :meth:`prob` applies the sigmoid."""

    def prob(self, x) -> ad.Node:
        return ad.sigmoid(self(x))


def temporal_attention(U, p: AttentionParams):
    """Attention-weighted summary of per-step membrane readouts.

    ``U`` is ``[T x d]`` or batched ``[B x T x d]``. Scores are
    ``(U K) q / sqrt(d)``; the summary is the alpha-weighted sum of ``U V``.
    """
    U = ad.const(U)
    single = U.value.ndim == 2
    if single:
        U = ad.reshape(U, (1,) + U.value.shape)
    if U.value.ndim != 3:
        raise ad.ShapeError(f"U must be [T x d] or [B x T x d], got {U.value.shape}")
    B, T, d = U.value.shape
    if p.key_proj.value.shape != (d, d) or p.value_proj.value.shape != (d, d) or p.query.value.shape != (d,):
        raise ad.ShapeError("attention parameters do not match hidden width")
    flat = ad.reshape(U, (B * T, d))
    scores = ad.scale(ad.matmul(ad.matmul(flat, p.key_proj), p.query), p.scale)
    alpha = ad.softmax(ad.reshape(scores, (B, T)), axis=1)
    values = ad.reshape(ad.matmul(flat, p.value_proj), (B, T, d))
    u_tilde = ad.reduce_sum(ad.mul(ad.reshape(alpha, (B, T, 1)), values), axis=1)
    if single:
        return ad.reshape(alpha, (T,)), ad.reshape(u_tilde, (d,))
    return alpha, u_tilde


def cross_entropy(logits, labels) -> ad.Node:
    logits = ad.const(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or len(labels) != logits.value.shape[0]:
        raise ad.ShapeError("logits must be [B x C] with one label per row")
    C = logits.value.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    return ad.scale(ad.mean(ad.pick(ad.log_softmax(logits, axis=1), labels)), -1.0)


def source_loss(logits, labels) -> ad.Node:
    """Mean cross-entropy of source predictions."""
    return cross_entropy(logits, labels)


def discriminator_probs(features, cls: ClassifierParams, disc: DiscriminatorParams, lambda_coeff: float,
                        discriminator_input: str = "logits") -> ad.Node:
    """``Q(GRL(H(features)))`` (or ``Q(GRL(features))`` for ``features`` input), shape ``[B]``.

    The reversal sits after the semantic classifier so that H is trained
    only by the classification losses while the encoder is pushed to fool Q.
    """
    if discriminator_input == "logits":
        x = ad.grad_reverse(cls(features), lambda_coeff)
    elif discriminator_input == "features":
        x = ad.grad_reverse(features, lambda_coeff)
    else:
        raise ValueError("discriminator_input must be 'logits' or 'features'")
    q = disc.prob(x)
    return ad.reshape(q, (q.value.shape[0],))


def adversarial_loss_from_probs(q_src, q_tgt) -> ad.Node:
    """``mean log Q(src) + mean log(1 - Q(tgt))`` with Q clamped away from 0 and 1."""
    q_src, q_tgt = ad.const(q_src), ad.const(q_tgt)
    if q_src.value.size == 0 or q_tgt.value.size == 0:
        raise ValueError("adversarial loss needs non-empty source and target batches")
    src = ad.mean(ad.log(ad.clip(q_src, Q_CLAMP, 1 - Q_CLAMP)))
    tgt = ad.mean(ad.log(ad.clip(ad.sub(1.0, q_tgt), Q_CLAMP, 1 - Q_CLAMP)))
    return ad.add(src, tgt)


def adversarial_loss(src_tilde, tgt_tilde, cls: ClassifierParams, disc: DiscriminatorParams,
                     lambda_coeff: float, discriminator_input: str = "logits") -> ad.Node:
    q_src = discriminator_probs(src_tilde, cls, disc, lambda_coeff, discriminator_input)
    q_tgt = discriminator_probs(tgt_tilde, cls, disc, lambda_coeff, discriminator_input)
    return adversarial_loss_from_probs(q_src, q_tgt)


def target_loss(logits, pseudo_labels) -> ad.Node:
    """Cross-entropy on pseudo-labelled target graphs; 0 when there are none."""
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    if pseudo_labels.size == 0:
        return ad.const(0.0)
    return cross_entropy(logits, pseudo_labels)


def total_loss(l_s, l_t, l_ad, lambda_coeff: float):
    """``l_s + l_t - lambda_coeff * l_ad``."""
    if any(isinstance(x, ad.Node) for x in (l_s, l_t, l_ad)):
        return ad.sub(ad.add(l_s, l_t), ad.scale(l_ad, lambda_coeff))
    return l_s + l_t - lambda_coeff * l_ad


# ---------------------------------------------------------------------------
# clustering and pseudo-label distillation

def _kmeans_once(X, k, rng, max_iter):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    assign = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            members = X[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    inertia = float(((X - centers[assign]) ** 2).sum())
    return assign, centers, inertia


def kmeans(X: np.ndarray, k: int, seed: int, max_iter: int = 100, n_init: int = 10):
    """Lloyd's algorithm with k-means++ seeding; returns ``(assignments, centers)``.

    Runs ``n_init`` seeded restarts and keeps the lowest inertia (earliest
    restart on ties). Empty clusters keep their previous center. Ties in
    assignment go to the lowest cluster index.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k < 1 or n < k:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        assign, centers, inertia = _kmeans_once(X, k, rng, max_iter)
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia)
    return best[0], best[1]


@dataclass
class PseudoLabelSet:
    entries: list  # (graph index, pseudo-label)
    cluster_info: list = field(default_factory=list)
    assignments: np.ndarray | None = None

    def __len__(self):
        return len(self.entries)

    @property
    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.entries], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.entries], dtype=np.int64)

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def to_json(self, graph_ids: Sequence[int] | None = None) -> str:
        purity = {c["cluster"]: c["purity"] for c in self.cluster_info}
        rows = []
        for i, y in self.entries:
            c = int(self.assignments[i]) if self.assignments is not None else None
            rows.append({
                "graph": int(graph_ids[i]) if graph_ids is not None else int(i),
                "label": int(y),
                "cluster": c,
                "purity": purity.get(c),
            })
        return json.dumps({"entries": rows, "clusters": self.cluster_info}, indent=2, sort_keys=True)


def select_pseudo_labels(assign: np.ndarray, preds: np.ndarray, C: int) -> tuple[list, list]:
    """Keep graphs agreeing with their cluster's dominating label.

    A cluster's dominating label needs a strict majority of its members'
    predictions (otherwise the cluster is dropped). For each label only the
    cluster holding the most graphs predicted with that label keeps them;
    a tie between clusters drops the label.
    """
    assign = np.asarray(assign, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    k = int(assign.max()) + 1 if assign.size else 0
    counts = np.zeros((k, C), dtype=np.int64)
    np.add.at(counts, (assign, preds), 1)
    sizes = counts.sum(axis=1)
    dominating = np.full(k, -1)
    info = []
    for r in range(k):
        if sizes[r] == 0:
            info.append({"cluster": r, "size": 0, "dominating_label": None, "purity": 0.0})
            continue
        top = int(counts[r].argmax())
        if 2 * counts[r, top] > sizes[r]:
            dominating[r] = top
        info.append({
            "cluster": r,
            "size": int(sizes[r]),
            "dominating_label": int(top) if dominating[r] >= 0 else None,
            "purity": float(counts[r, top] / sizes[r]),
        })
    owner = np.full(C, -1)
    for y in range(C):
        col = counts[:, y]
        if col.size and col.max() > 0 and np.sum(col == col.max()) == 1:
            owner[y] = int(col.argmax())
    keep = (dominating[assign] == preds) & (owner[preds] == assign)
    entries = [(int(i), int(preds[i])) for i in np.flatnonzero(keep)]
    return entries, info


def distill_pseudo_labels(shallow: np.ndarray, preds: np.ndarray, C: int, seed: int,
                          max_iter: int = 100) -> PseudoLabelSet:
    """Cluster shallow target representations and keep cluster-consistent predictions."""
    shallow = np.asarray(shallow, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.int64)
    if C < 1:
        raise ValueError("C must be >= 1")
    if len(shallow) < C:
        raise ValueError("need at least C target graphs")
    if len(preds) != len(shallow):
        raise ValueError("one prediction per target graph required")
    assign, _ = kmeans(shallow, C, seed, max_iter)
    entries, info = select_pseudo_labels(assign, preds, max(C, int(preds.max()) + 1))
    return PseudoLabelSet(entries, info, assign)
