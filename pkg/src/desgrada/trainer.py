"""Training loop: paired source/target mini-batches, losses, Adam updates, evaluation."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .adapt import (
    AttentionParams,
    ClassifierParams,
    DiscriminatorParams,
    PseudoLabelSet,
    adversarial_loss_from_probs,
    discriminator_probs,
    distill_pseudo_labels,
    source_loss,
    target_loss,
    temporal_attention,
    total_loss,
)
from .encoding import bernoulli_probs_encode, derive_seed
from .graph import DegreeTable, Graph, GraphBatch, GraphDataset, collect_degree_set
from .optim import AdamState, adam_step
from .spiking import EncoderOutput, LIFConfig, ThresholdTable, init_layers, run_encoder

log = logging.getLogger(__name__)

EVAL_SEED = 20250101
_SOURCE, _TARGET, _EVAL = 0, 1, 2


class ConfigError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    """Loss became non-finite; ``model`` holds the last finite-loss parameters."""

    def __init__(self, message, model, history):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-12
    hidden_dim: int = 256
    layers: int = 4
    epochs: int = 200
    batch_size: int = 32
    lambda_coeff: float = 0.9
    lif: LIFConfig = LIFConfig()
    seed: int = 0
    pseudo_label_start_epoch: int = 20
    use_alignment: bool = True
    use_pseudo_labels: bool = True
    pseudo_label_min_classes: int = 2
    adapt_thresholds: bool = True
    discriminator_input: str = "logits"
    align_only_unseen_degree_graphs: bool = False
    init_gain: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.pseudo_label_min_classes < 1:
            raise ConfigError("pseudo_label_min_classes must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.discriminator_input not in ("logits", "features"):
            raise ConfigError("discriminator_input must be 'logits' or 'features'")
        lif = self.lif
        if lif.hidden_dim != self.hidden_dim or lif.layers != self.layers:
            object.__setattr__(self, "lif", dataclasses.replace(lif, hidden_dim=self.hidden_dim, layers=self.layers))

    @classmethod
    def from_flat(cls, values: dict) -> "TrainConfig":
        """Build from a flat key/value mapping; LIF keys sit alongside trainer keys."""
        lif_keys = {f.name for f in fields(LIFConfig)} - {"hidden_dim", "layers"}
        own_keys = {f.name for f in fields(cls)} - {"lif"}
        unknown = set(values) - lif_keys - own_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            lif = LIFConfig(**{k: v for k, v in values.items() if k in lif_keys})
            return cls(lif=lif, **{k: v for k, v in values.items() if k in own_keys})
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    def to_flat(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "lif"}
        for f in fields(LIFConfig):
            if f.name not in ("hidden_dim", "layers"):
                out[f.name] = getattr(self.lif, f.name)
        return out

    def source_only(self) -> "TrainConfig":
        return dataclasses.replace(self, lambda_coeff=0.0, use_alignment=False, use_pseudo_labels=False)


@dataclass
class Model:
    layers: list
    attention: AttentionParams
    classifier: ClassifierParams
    discriminator: DiscriminatorParams
    table: ThresholdTable
    lif: LIFConfig
    num_classes: int
    feature_dim: int
    source_degrees: DegreeTable
    discriminator_input: str = "logits"

    @classmethod
    def init(cls, cfg: TrainConfig, feature_dim: int, num_classes: int, source_degrees: DegreeTable) -> "Model":
        rng = np.random.default_rng(derive_seed(cfg.seed, 17))
        d = cfg.hidden_dim
        layers = init_layers(feature_dim, cfg.lif, rng, gain=cfg.init_gain)
        attention = AttentionParams.init(d, rng)
        classifier = ClassifierParams.init(d, d, num_classes, rng, "classifier")
        disc_in = num_classes if cfg.discriminator_input == "logits" else d
        discriminator = DiscriminatorParams.init(disc_in, d, 1, rng, "discriminator")
        table = ThresholdTable.from_degrees(source_degrees.degrees, cfg.lif.v_th_init)
        return cls(layers, attention, classifier, discriminator, table, cfg.lif, num_classes, feature_dim,
                   source_degrees, cfg.discriminator_input)

    def named_parameters(self) -> list[tuple[str, ad.Node]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"layer{i}.weight", layer.weight))
            out.append((f"layer{i}.bias", layer.bias))
        for prefix, mod in (("attention", self.attention), ("classifier", self.classifier),
                            ("discriminator", self.discriminator)):
            for f in fields(mod):
                out.append((f"{prefix}.{f.name}", getattr(mod, f.name)))
        return out

    def parameters(self) -> dict[str, ad.Node]:
        return dict(self.named_parameters())

    def encode(self, graphs: Sequence[Graph], inputs: np.ndarray, adapt=False, adapt_mask=None,
               adapt_degrees=None, table: ThresholdTable | None = None) -> EncoderOutput:
        batch = GraphBatch(graphs, self.lif.aggregation)
        return run_encoder(batch, inputs, self.layers, table if table is not None else self.table, self.lif, adapt, adapt_mask, adapt_degrees)

    def logits(self, s_G) -> ad.Node:
        return self.classifier(s_G)


def encode_inputs(graphs: Sequence[Graph], T: int, seeds: Sequence[int]) -> np.ndarray:
    """Concatenate per-graph Bernoulli frames along the node axis."""
    return np.concatenate([bernoulli_probs_encode(g.features, T, s) for g, s in zip(graphs, seeds)], axis=1)


@dataclass
class History:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    source_only: bool = False

    COLUMNS = ("epoch", "l_s", "l_t", "l_ad", "src_acc", "tgt_acc", "disc_acc", "spikes",
               "thr_mean", "thr_min", "thr_max", "pseudo_labels")

    def columns(self):
        if self.source_only:
            return tuple(c for c in self.COLUMNS if c != "l_ad")
        return self.COLUMNS

    def to_csv(self, path) -> None:
        from .metrics import write_csv

        cols = self.columns()
        write_csv(path, cols, ([_fmt(row.get(c)) for c in cols] for row in self.epochs))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict  # class -> (correct, total)
    predictions: np.ndarray
    logits: np.ndarray


def predict(model: Model, ds: GraphDataset, seed: int = EVAL_SEED, samples: int = 1, batch_size: int = 64):
    """Deterministic inference (no threshold adaptation).

    Returns ``(probabilities, shallow representations, traces)`` where
    traces is a list of per-batch :class:`EncoderOutput`. With ``samples`` >
    1 class probabilities are averaged over independent input encodings.
    """
    graphs = list(ds.graphs)
    probs = np.zeros((len(graphs), model.num_classes))
    shallow = np.zeros((len(graphs), model.lif.hidden_dim))
    outputs = []
    for k in range(samples):
        for lo in range(0, len(graphs), batch_size):
            chunk = graphs[lo:lo + batch_size]
            seeds = [derive_seed(seed, _EVAL, k, lo + i) for i in range(len(chunk))]
            out = model.encode(chunk, encode_inputs(chunk, model.lif.T, seeds))
            z = model.logits(out.s_G).value
            z = z - z.max(axis=1, keepdims=True)
            p = np.exp(z)
            probs[lo:lo + len(chunk)] += p / p.sum(axis=1, keepdims=True)
            if k == 0:
                shallow[lo:lo + len(chunk)] = out.shallow
                outputs.append(out)
    return probs / samples, shallow, outputs


def evaluate(model: Model, ds: GraphDataset, seed: int = EVAL_SEED, samples: int = 1) -> EvalResult:
    if not ds.has_labels:
        raise ValueError("evaluation needs labelled graphs")
    probs, _, _ = predict(model, ds, seed, samples)
    preds = probs.argmax(axis=1)
    labels = ds.labels
    per_class = {}
    for c in range(model.num_classes):
        m = labels == c
        per_class[c] = (int(np.sum(preds[m] == c)), int(m.sum()))
    return EvalResult(float(np.mean(preds == labels)), per_class, preds, np.log(np.maximum(probs, 1e-300)))


def pseudo_label_round(model: Model, target: GraphDataset, seed: int) -> PseudoLabelSet:
    probs, shallow, _ = predict(model, target, seed)
    return distill_pseudo_labels(shallow, probs.argmax(axis=1), model.num_classes, seed)


@dataclass
class StepResult:
    total: ad.Node
    l_s: float
    l_t: float
    l_ad: float
    src_correct: int
    tgt_correct: int
    tgt_seen: int
    disc_correct: int
    disc_seen: int
    spikes: int
    table: ThresholdTable


def forward_losses(model: Model, cfg: TrainConfig, src_graphs, src_inputs, tgt_graphs, tgt_inputs,
                   tgt_pseudo=None, adapt: bool | None = None) -> StepResult:
    """Forward pass of one paired mini-batch; builds the tape when one is active.

    ``tgt_pseudo`` gives the pseudo-label of each target graph in the batch
    (-1 for none). Threshold adaptation (if enabled) runs on the source
    batch over all of its degrees, then on the pseudo-labelled target graphs
    for degrees outside the source degree set.
    """
    adapt = cfg.adapt_thresholds if adapt is None else adapt
    if tgt_pseudo is None:
        tgt_pseudo = np.full(len(tgt_graphs), -1)
    tgt_pseudo = np.asarray(tgt_pseudo, dtype=np.int64)
    labels = np.array([g.label for g in src_graphs], dtype=np.int64)
    out_s = model.encode(src_graphs, src_inputs, adapt=adapt)
    table = out_s.table
    logits_s = model.logits(out_s.s_G)
    l_s = source_loss(logits_s, labels)
    spikes = int(out_s.spike_counts.sum())

    need_target = cfg.use_alignment or cfg.use_pseudo_labels or any(g.label is not None for g in tgt_graphs)
    l_t = ad.const(0.0)
    l_ad = ad.const(0.0)
    tgt_correct = tgt_seen = disc_correct = disc_seen = 0
    if need_target and tgt_graphs:
        in_p = tgt_pseudo >= 0
        batch_t = GraphBatch(tgt_graphs, model.lif.aggregation)
        unseen = set(np.unique(batch_t.degrees).tolist()) - set(model.source_degrees.degrees)
        adapt_t = adapt and bool(in_p.any()) and bool(unseen)
        out_t = run_encoder(batch_t, tgt_inputs, model.layers, table, model.lif, adapt_t,
                            batch_t.node_mask(in_p), unseen)
        table = out_t.table
        spikes += int(out_t.spike_counts.sum())
        logits_t = model.logits(out_t.s_G)
        if cfg.use_pseudo_labels and in_p.any():
            rows = np.flatnonzero(in_p)
            l_t = target_loss(ad.take_rows(logits_t, rows), tgt_pseudo[rows])
        if cfg.use_alignment:
            _, ut_s = temporal_attention(out_s.U, model.attention)
            _, ut_t = temporal_attention(out_t.U, model.attention)
            if cfg.align_only_unseen_degree_graphs:
                known = set(model.source_degrees.degrees)
                rows = [i for i, g in enumerate(tgt_graphs) if any(d not in known for d in np.unique(g.degrees))]
                ut_t = ad.take_rows(ut_t, rows) if rows else None
            if ut_t is not None:
                q_s = discriminator_probs(ut_s, model.classifier, model.discriminator, cfg.lambda_coeff,
                                          cfg.discriminator_input)
                q_t = discriminator_probs(ut_t, model.classifier, model.discriminator, cfg.lambda_coeff,
                                          cfg.discriminator_input)
                l_ad = adversarial_loss_from_probs(q_s, q_t)
                disc_correct = int(np.sum(q_s.value > 0.5) + np.sum(q_t.value < 0.5))
                disc_seen = q_s.value.size + q_t.value.size
        if all(g.label is not None for g in tgt_graphs):
            tl = np.array([g.label for g in tgt_graphs])
            tgt_correct = int(np.sum(logits_t.value.argmax(axis=1) == tl))
            tgt_seen = len(tl)

    total = total_loss(l_s, l_t, l_ad, cfg.lambda_coeff)
    return StepResult(
        total=total,
        l_s=float(l_s.value),
        l_t=float(l_t.value),
        l_ad=float(l_ad.value),
        src_correct=int(np.sum(logits_s.value.argmax(axis=1) == labels)),
        tgt_correct=tgt_correct,
        tgt_seen=tgt_seen,
        disc_correct=disc_correct,
        disc_seen=disc_seen,
        spikes=spikes,
        table=table,
    )


def _check_datasets(source: GraphDataset, target: GraphDataset | None):
    if len(source) == 0:
        raise ConfigError("source dataset is empty")
    if not source.has_labels:
        raise ConfigError("source dataset must be fully labelled")
    if target is not None and target.feature_dim != source.feature_dim:
        raise ConfigError(f"feature_dim mismatch: source {source.feature_dim}, target {target.feature_dim}")


def train(cfg: TrainConfig, source: GraphDataset, target: GraphDataset | None = None,
          callback=None) -> tuple[Model, History]:
    """Joint training on labelled source and unlabelled target graphs.

    Each epoch shuffles both domains with a seeded generator and walks
    paired mini-batches (the target side cycles when the domains differ in
    size). Pseudo-labels are recomputed once per epoch from
    ``pseudo_label_start_epoch`` on. Target labels, when present, are only
    used for reporting.
    """
    _check_datasets(source, target)
    if target is None:
        cfg = cfg.source_only()
    source_only = not (cfg.use_alignment or cfg.use_pseudo_labels)
    model = Model.init(cfg, source.feature_dim, source.num_classes, collect_degree_set(source))
    history = History(source_only=source_only)
    params = model.parameters()
    state = AdamState()
    src_graphs = list(source.graphs)
    tgt_graphs = list(target.graphs) if target is not None else []
    T = cfg.lif.T
    bs = cfg.batch_size
    n_batches = math.ceil(len(src_graphs) / bs)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, epoch, 7))
        src_perm = rng.permutation(len(src_graphs))
        tgt_perm = rng.permutation(len(tgt_graphs)) if tgt_graphs else np.array([], dtype=np.int64)
        pseudo = np.full(len(tgt_graphs), -1, dtype=np.int64)
        n_pseudo = 0
        if cfg.use_pseudo_labels and tgt_graphs and epoch >= cfg.pseudo_label_start_epoch:
            pls = pseudo_label_round(model, target, derive_seed(cfg.seed, epoch, 11))
            # a round that keeps fewer classes than this would only pull the
            # target towards one class, so it is skipped
            if len(np.unique(pls.labels)) >= min(cfg.pseudo_label_min_classes, model.num_classes):
                pseudo[pls.indices] = pls.labels
                n_pseudo = len(pls)
        sums = dict(l_s=0.0, l_t=0.0, l_ad=0.0, src=0, tgt=0, tgt_n=0, disc=0, disc_n=0, spikes=0)
        for b in range(n_batches):
            s_idx = src_perm[b * bs:(b + 1) * bs]
            sb = [src_graphs[i] for i in s_idx]
            s_inputs = encode_inputs(sb, T, [derive_seed(cfg.seed, epoch, _SOURCE, int(i)) for i in s_idx])
            if tgt_graphs:
                t_idx = tgt_perm[(b * bs + np.arange(len(sb))) % len(tgt_graphs)]
                tb = [tgt_graphs[i] for i in t_idx]
                t_inputs = encode_inputs(tb, T, [derive_seed(cfg.seed, epoch, _TARGET, int(i)) for i in t_idx])
            else:
                t_idx, tb, t_inputs = np.array([], dtype=np.int64), [], None
            for p in params.values():
                p.zero_grad()
            with ad.Tape() as tape:
                res = forward_losses(model, cfg, sb, s_inputs, tb, t_inputs, pseudo[t_idx])
            total = float(res.total.value)
            # nothing is mutated before these checks, so ``model`` still
            # holds the last finite-loss parameters when they fire
            if not math.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}", model, history)
            tape.backward(res.total)
            grads = {name: p.grad for name, p in params.items()}
            try:
                adam_step(params, grads, state, cfg.lr, cfg.weight_decay)
            except ad.NumericError as err:
                raise TrainingDiverged(str(err), model, history) from err
            model.table = res.table
            history.steps.append({
                "epoch": epoch, "batch": b, "l_s": res.l_s, "l_t": res.l_t, "l_ad": res.l_ad,
                "total": total, "lambda_coeff": cfg.lambda_coeff,
            })
            w = len(sb)
            sums["l_s"] += res.l_s * w
            sums["l_t"] += res.l_t * w
            sums["l_ad"] += res.l_ad * w
            sums["src"] += res.src_correct
            sums["tgt"] += res.tgt_correct
            sums["tgt_n"] += res.tgt_seen
            sums["disc"] += res.disc_correct
            sums["disc_n"] += res.disc_seen
            sums["spikes"] += res.spikes
        n = len(src_graphs)
        thr = model.table.values
        row = {
            "epoch": epoch,
            "l_s": sums["l_s"] / n,
            "l_t": sums["l_t"] / n,
            "l_ad": sums["l_ad"] / n,
            "src_acc": sums["src"] / n,
            "tgt_acc": sums["tgt"] / sums["tgt_n"] if sums["tgt_n"] else None,
            "disc_acc": sums["disc"] / sums["disc_n"] if sums["disc_n"] else None,
            "spikes": sums["spikes"],
            "thr_mean": float(thr.mean()) if thr.size else None,
            "thr_min": float(thr.min()) if thr.size else None,
            "thr_max": float(thr.max()) if thr.size else None,
            "pseudo_labels": n_pseudo,
        }
        history.epochs.append(row)
        log.debug("epoch %d: %s", epoch, row)
        if callback is not None:
            callback(epoch, model, row)
    return model, history


def train_source_only(cfg: TrainConfig, source: GraphDataset) -> Model:
    model, _ = train(cfg.source_only(), source, None)
    return model
