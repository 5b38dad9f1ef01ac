"""Leaky integrate-and-fire message passing with degree-conscious thresholds.

The forward pass is written once over :mod:`desgrada.autodiff` nodes. Under
an active tape it is differentiated end to end (surrogate gradients through
all latency steps and layers); without one it is plain numpy evaluation.
Thresholds are running state and never enter the tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .encoding import SpikeTensor, bernoulli_probs_encode, derive_seed
from .graph import Graph, GraphBatch


@dataclass(frozen=True)
class LIFConfig:
    leak: float = 0.5
    v_reset: float = 0.0
    T: int = 9
    v_th_init: float = 0.2
    surrogate_width: float = 1.0
    ema_alpha: float = 0.1
    layers: int = 4
    hidden_dim: int = 256
    aggregation: str = "sym"

    def __post_init__(self):
        if not 0.0 < self.leak < 1.0:
            raise ValueError("leak must lie in (0, 1)")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.surrogate_width <= 0:
            raise ValueError("surrogate_width must be positive")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in [0, 1]")
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("layers and hidden_dim must be >= 1")
        if self.v_th_init <= 0:
            raise ValueError("v_th_init must be positive")
        if self.aggregation not in ("sym", "sum"):
            raise ValueError("aggregation must be 'sym' or 'sum'")

    @property
    def shallow_step(self) -> int:
        """1-based latency step whose spikes form the shallow representation."""
        return math.ceil(self.T / 2)


class ThresholdTable:
    """Firing threshold per node degree.

    Lookups for unregistered degrees fall back to the nearest registered one
    (ties resolve to the smaller degree); an empty table answers ``default``.
    """

    def __init__(self, entries: Mapping[int, float] | None = None, default: float = 0.2):
        self.default = float(default)
        items = sorted((int(k), float(v)) for k, v in (entries or {}).items())
        if any(v <= 0 for _, v in items):
            raise ValueError("thresholds must be positive")
        self._keys = np.array([k for k, _ in items], dtype=np.int64)
        self._vals = np.array([v for _, v in items], dtype=np.float64)

    @classmethod
    def from_degrees(cls, degrees: Iterable[int], v_th_init: float) -> "ThresholdTable":
        return cls({int(d): v_th_init for d in degrees}, default=v_th_init)

    @property
    def entries(self) -> dict[int, float]:
        return dict(zip(self._keys.tolist(), self._vals.tolist()))

    @property
    def degrees(self) -> np.ndarray:
        return self._keys.copy()

    @property
    def values(self) -> np.ndarray:
        return self._vals.copy()

    def __len__(self):
        return len(self._keys)

    def __contains__(self, d):
        i = np.searchsorted(self._keys, int(d))
        return i < len(self._keys) and self._keys[i] == int(d)

    def __eq__(self, other):
        return (
            isinstance(other, ThresholdTable)
            and np.array_equal(self._keys, other._keys)
            and np.array_equal(self._vals, other._vals)
        )

    def __repr__(self):
        return f"ThresholdTable({self.entries})"

    def lookup(self, degrees) -> np.ndarray:
        degrees = np.asarray(degrees, dtype=np.int64)
        if len(self._keys) == 0:
            return np.full(degrees.shape, self.default)
        right = np.clip(np.searchsorted(self._keys, degrees, side="left"), 0, len(self._keys) - 1)
        left = np.clip(right - 1, 0, len(self._keys) - 1)
        take_left = np.abs(degrees - self._keys[left]) <= np.abs(self._keys[right] - degrees)
        return np.where(take_left, self._vals[left], self._vals[right])

    def with_entries(self, updates: Mapping[int, float]) -> "ThresholdTable":
        merged = self.entries
        merged.update({int(k): float(v) for k, v in updates.items()})
        return ThresholdTable(merged, self.default)

    def copy(self) -> "ThresholdTable":
        return ThresholdTable(self.entries, self.default)


def adapt_thresholds(table: ThresholdTable, mean_rates: Mapping[int, float], alpha: float) -> ThresholdTable:
    """EMA step ``V <- (1 - alpha) V + alpha * rate`` for every degree in ``mean_rates``.

    Degrees missing from the table are first registered with their
    nearest-degree threshold. Absent degrees are untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not mean_rates:
        return table
    keys = np.fromiter(mean_rates.keys(), dtype=np.int64, count=len(mean_rates))
    rates = np.fromiter(mean_rates.values(), dtype=np.float64, count=len(mean_rates))
    current = table.lookup(keys)
    new = (1.0 - alpha) * current + alpha * rates
    # a rate of exactly 0 with alpha = 1 would zero the threshold
    new = np.maximum(new, 1e-12)
    return table.with_entries(dict(zip(keys.tolist(), new.tolist())))


def per_degree_rates(degrees: np.ndarray, spikes: np.ndarray, mask=None, allowed=None) -> dict[int, float]:
    """Mean spike value of each degree group (over its nodes and channels)."""
    node_rate = spikes.mean(axis=1)
    deg = degrees
    if mask is not None:
        node_rate, deg = node_rate[mask], deg[mask]
    if deg.size == 0:
        return {}
    uniq, inv = np.unique(deg, return_inverse=True)
    sums = np.bincount(inv, weights=node_rate)
    counts = np.bincount(inv)
    rates = dict(zip(uniq.tolist(), (sums / counts).tolist()))
    if allowed is not None:
        rates = {d: r for d, r in rates.items() if d in allowed}
    return rates


@dataclass
class LayerParams:
    weight: ad.Node
    bias: ad.Node

    def __post_init__(self):
        if not isinstance(self.weight, ad.Node):
            self.weight = ad.const(np.asarray(self.weight, dtype=np.float64))
        if not isinstance(self.bias, ad.Node):
            self.bias = ad.const(np.asarray(self.bias, dtype=np.float64))
        if self.weight.value.ndim != 2 or self.bias.value.shape != (self.weight.value.shape[1],):
            raise ad.ShapeError("layer weight must be [in x out] with bias [out]")

    @property
    def in_dim(self) -> int:
        return self.weight.value.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.value.shape[1]


@dataclass
class MembraneState:
    u: ad.Node
    last_spikes: ad.Node

    @classmethod
    def zeros(cls, n: int, d: int) -> "MembraneState":
        return cls(ad.const(np.zeros((n, d))), ad.const(np.zeros((n, d))))


@dataclass
class GraphTrace:
    s_G: np.ndarray
    U_G: np.ndarray
    shallow: np.ndarray
    spike_count: int
    sop_count: int
    op_count: int = 0
    table: ThresholdTable | None = None
    node_frequency: np.ndarray | None = field(default=None, repr=False)


def aggregate(adj, spikes, layer: LayerParams, adj_t=None) -> ad.Node:
    """Synaptic current ``adj @ (spikes @ W) + b``.

    ``adj`` is a graph (aggregated with its symmetric-normalised ``A + I``)
    or a precomputed sparse aggregation matrix.
    """
    if isinstance(adj, Graph):
        adj = adj.adjacency("sym")
    spikes = ad.const(spikes)
    if spikes.value.ndim != 2 or spikes.value.shape[1] != layer.in_dim or spikes.value.shape[0] != adj.shape[0]:
        raise ad.ShapeError(
            f"aggregate: spikes {spikes.value.shape} vs adjacency {adj.shape} and weight {layer.weight.value.shape}"
        )
    return ad.add(ad.spmm(adj, ad.matmul(spikes, layer.weight), adj_t), layer.bias)


def lif_step(state: MembraneState, current, thresholds, leak: float = 0.5, v_reset: float = 0.0,
             surrogate_width: float = 1.0):
    """One integrate / fire / reset update.

    ``u' = leak * (u - V_th * s_prev) + current``; a unit spikes when
    ``u' >= V_th`` and is then hard-reset to ``v_reset``.
    """
    current = ad.const(current)
    if not np.all(np.isfinite(current.value)):
        raise ad.NumericError("non-finite input current")
    th = np.asarray(thresholds, dtype=np.float64)
    if th.ndim == 1:
        th = th[:, None]
    if np.any(th <= 0):
        raise ValueError("thresholds must be positive")
    if state.u.value.shape != current.value.shape:
        raise ad.ShapeError(f"membrane {state.u.value.shape} vs current {current.value.shape}")
    u = ad.leaky_integrate(state.u, state.last_spikes, current, th, leak)
    s = ad.heaviside_sg(ad.sub(u, th), surrogate_width)
    u_post = ad.reset(u, s, v_reset)
    return s, MembraneState(u_post, s)


@dataclass
class EncoderOutput:
    U: ad.Node                 # [B x T x d] readout of final-layer membrane per step
    s_G: ad.Node               # [B x d] readout of final-layer spikes at step T
    shallow: np.ndarray        # [B x d] readout of final-layer spikes at the shallow step
    table: ThresholdTable
    spike_counts: np.ndarray   # per graph
    sop_counts: np.ndarray     # per graph
    op_count: int
    node_frequency: np.ndarray  # per node, mean final-layer spike rate over steps


def run_encoder(
    batch: GraphBatch,
    inputs: np.ndarray,
    params: Sequence[LayerParams],
    table: ThresholdTable,
    cfg: LIFConfig,
    adapt: bool = False,
    adapt_mask: np.ndarray | None = None,
    adapt_degrees=None,
) -> EncoderOutput:
    """Run ``cfg.T`` latency steps of the layered LIF encoder over a batch.

    ``inputs`` holds the binary input frames ``[T x n x f]``. With ``adapt``
    the threshold table is updated after every step from the per-degree mean
    spike rate of the final layer, restricted to nodes in ``adapt_mask`` and
    degrees in ``adapt_degrees`` when given. All nodes of the batch share a
    single table snapshot per step.
    """
    T = cfg.T
    if inputs.shape[0] != T:
        raise ad.ShapeError(f"input has {inputs.shape[0]} steps, config expects T={T}")
    if inputs.shape[1] != batch.num_nodes:
        raise ad.ShapeError("input node count does not match batch")
    if len(params) != cfg.layers:
        raise ad.ShapeError(f"expected {cfg.layers} layers, got {len(params)}")
    n = batch.num_nodes
    deg = batch.degrees
    offsets = batch.offsets[:-1]
    states = [MembraneState.zeros(n, p.out_dim) for p in params]
    spike_counts = np.zeros(batch.num_graphs, dtype=np.int64)
    sop_counts = np.zeros(batch.num_graphs, dtype=np.int64)
    freq = np.zeros(n)
    ops = 0
    readouts, s_last, shallow = [], None, None
    shallow_step = cfg.shallow_step
    for t in range(T):
        th = table.lookup(deg)
        x = ad.const(inputs[t].astype(np.float64))
        for li, layer in enumerate(params):
            in_per_node = x.value.sum(axis=1)
            sop_counts += np.add.reduceat(in_per_node * deg * layer.out_dim, offsets).astype(np.int64)
            current = aggregate(batch.adj, x, layer, batch.adj_t)
            s, states[li] = lif_step(states[li], current, th, cfg.leak, cfg.v_reset, cfg.surrogate_width)
            ops += n * layer.in_dim * layer.out_dim + batch.nnz * layer.out_dim + 9 * n * layer.out_dim
            emitted = s.value.sum(axis=1)
            spike_counts += np.add.reduceat(emitted, offsets).astype(np.int64)
            x = s
        # final-layer spikes feed the readout, one event each
        sop_counts += np.add.reduceat(x.value.sum(axis=1), offsets).astype(np.int64)
        freq += x.value.mean(axis=1)
        d = params[-1].out_dim
        readouts.append(ad.spmm(batch.pool, states[-1].u, batch.pool_t))
        ops += n * d
        if t + 1 == shallow_step:
            shallow = np.asarray(batch.pool @ x.value)
        if t + 1 == T:
            s_last = ad.spmm(batch.pool, x, batch.pool_t)
            ops += n * d
        if adapt:
            rates = per_degree_rates(deg, x.value, adapt_mask, adapt_degrees)
            table = adapt_thresholds(table, rates, cfg.ema_alpha)
    U = ad.stack(readouts, axis=1)
    return EncoderOutput(U, s_last, shallow, table, spike_counts, sop_counts, ops, freq / T)


def encode_graph(
    g: Graph,
    spikes: SpikeTensor | np.ndarray,
    params: Sequence[LayerParams],
    table: ThresholdTable,
    cfg: LIFConfig,
    adapt: bool = False,
) -> GraphTrace:
    """Forward trace of one graph; the (possibly adapted) table is returned on the trace."""
    values = spikes.values if isinstance(spikes, SpikeTensor) else np.asarray(spikes)
    out = run_encoder(GraphBatch([g], cfg.aggregation), values, params, table, cfg, adapt=adapt)
    return GraphTrace(
        s_G=out.s_G.value[0].copy(),
        U_G=out.U.value[0].copy(),
        shallow=out.shallow[0].copy(),
        spike_count=int(out.spike_counts[0]),
        sop_count=int(out.sop_counts[0]),
        op_count=int(out.op_count),
        table=out.table,
        node_frequency=out.node_frequency,
    )


def init_layers(in_dim: int, cfg: LIFConfig, rng: np.random.Generator, gain: float = 1.0) -> list[LayerParams]:
    """Glorot-uniform spiking layers with zero bias."""
    layers = []
    d_in = in_dim
    for i in range(cfg.layers):
        limit = gain * math.sqrt(6.0 / (d_in + cfg.hidden_dim))
        w = rng.uniform(-limit, limit, size=(d_in, cfg.hidden_dim))
        layers.append(LayerParams(ad.param(w, f"layer{i}.weight"), ad.param(np.zeros(cfg.hidden_dim), f"layer{i}.bias")))
        d_in = cfg.hidden_dim
    return layers


# ---------------------------------------------------------------------------
# degree / firing-rate diagnostics

@dataclass
class Prop1Result:
    fixed_corr: float
    adaptive_corr: float
    fixed_degenerate: bool
    adaptive_degenerate: bool
    records: list = field(default_factory=list)  # (aggregated_weight, fixed_freq, adaptive_freq, degree)


def realize_degree_sequence(degree_seq: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Random simple graph (edge array) with the given neighbour counts.

    Graphical sequences are realised exactly (Havel-Hakimi, then randomised
    by degree-preserving double-edge swaps and a random node relabelling);
    otherwise a configuration model with self-loops and multi-edges dropped
    gives an approximate realisation.
    """
    import networkx as nx

    seq = [int(d) for d in degree_seq]
    n = len(seq)
    if sum(seq) % 2:
        seq[int(np.argmax(seq))] -= 1
    if nx.is_graphical(seq):
        g = nx.havel_hakimi_graph(seq)
        m = g.number_of_edges()
        if m >= 2:
            try:
                nx.double_edge_swap(g, nswap=2 * m, max_tries=20 * m + 100, seed=int(rng.integers(2**31)))
            except nx.NetworkXAlgorithmError:
                pass
        g = nx.relabel_nodes(g, dict(enumerate(rng.permutation(n).tolist())))
    else:
        g = nx.Graph(nx.configuration_model(seq, seed=int(rng.integers(2**31))))
        g.remove_edges_from(nx.selfloop_edges(g))
    edges = np.array(sorted((min(u, v), max(u, v)) for u, v in g.edges()), dtype=np.int64).reshape(-1, 2)
    return edges


def prop1_experiment(
    degree_seq: Sequence[int],
    trials: int,
    cfg: LIFConfig,
    seed: int,
    feature_dim: int = 4,
    feature_mean: float = 0.5,
    feature_std: float = 0.2,
    weight_scale: float = 0.02,
    warmup: int = 20,
) -> Prop1Result:
    """Correlation between aggregated neighbour weight and firing rate.

    Each trial realises ``degree_seq`` as a random graph with clipped
    Gaussian node features and drives a fixed positive-weight encoder with
    Bernoulli inputs. Node firing rates are recorded once with the fixed
    initial threshold and once with degree-adaptive thresholds. The adaptive
    table is running state: it is carried across trials and first settled
    by ``warmup`` adaptive passes on freshly sampled inputs. Records are
    pooled over trials before the Pearson coefficients are taken.
    """
    from .metrics import spike_degree_correlation

    if not len(degree_seq):
        raise ValueError("degree_seq must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    params, d_in = [], feature_dim
    for _ in range(cfg.layers):
        params.append(LayerParams(np.full((d_in, cfg.hidden_dim), weight_scale / d_in), np.zeros(cfg.hidden_dim)))
        d_in = cfg.hidden_dim
    n = len(degree_seq)
    adaptive_table = ThresholdTable(default=cfg.v_th_init)
    weights, f_fixed, f_adapt, degs = [], [], [], []
    for trial in range(trials):
        edges = realize_degree_sequence(degree_seq, rng)
        feats = np.clip(rng.normal(feature_mean, feature_std, size=(n, feature_dim)), 0.0, 1.0)
        g = Graph(n, edges, feats)
        adj = g.adjacency(cfg.aggregation).tocsr()
        agg_weight = np.asarray(adj.sum(axis=1)).ravel() - adj.diagonal()
        fixed_table = ThresholdTable.from_degrees(np.unique(g.degrees), cfg.v_th_init)
        unseen = [d for d in np.unique(g.degrees).tolist() if d not in adaptive_table]
        adaptive_table = adaptive_table.with_entries({d: cfg.v_th_init for d in unseen})
        for k in range(warmup):
            warm_inputs = bernoulli_probs_encode(feats, cfg.T, derive_seed(seed, trial, k + 1))
            adaptive_table = encode_graph(g, warm_inputs, params, adaptive_table, cfg, adapt=True).table
        inputs = bernoulli_probs_encode(feats, cfg.T, derive_seed(seed, trial, 0))
        fixed = encode_graph(g, inputs, params, fixed_table, cfg, adapt=False)
        adaptive = encode_graph(g, inputs, params, adaptive_table, cfg, adapt=True)
        adaptive_table = adaptive.table
        weights.append(agg_weight)
        f_fixed.append(fixed.node_frequency)
        f_adapt.append(adaptive.node_frequency)
        degs.append(g.degrees)
    w = np.concatenate(weights)
    ff = np.concatenate(f_fixed)
    fa = np.concatenate(f_adapt)
    rf = spike_degree_correlation(np.stack([w, ff], axis=1))
    ra = spike_degree_correlation(np.stack([w, fa], axis=1))
    records = list(zip(w.tolist(), ff.tolist(), fa.tolist(), np.concatenate(degs).tolist()))
    return Prop1Result(rf.r, ra.r, rf.degenerate, ra.degenerate, records)


def prop1_config(**overrides) -> LIFConfig:
    """LIF setup of the degree/firing-rate study: one raw-sum layer, T=9, threshold 0.2."""
    base = dict(layers=1, hidden_dim=4, aggregation="sum", T=9, v_th_init=0.2, ema_alpha=0.1)
    base.update(overrides)
    return LIFConfig(**base)


def prop1_powerlaw(seed: int, nodes: int = 200, exponent: float = 2.5, trials: int = 1,
                   cfg: LIFConfig | None = None, **kwargs) -> Prop1Result:
    """:func:`prop1_experiment` on a seeded power-law degree sequence."""
    from .synthetic import powerlaw_degree_sequence

    rng = np.random.default_rng(seed)
    seq = powerlaw_degree_sequence(nodes, exponent, rng)
    return prop1_experiment(seq, trials, cfg or prop1_config(), derive_seed(seed, 1), **kwargs)
