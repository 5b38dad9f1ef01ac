"""Accuracy, energy, correlation and divergence diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .graph import GraphDataset, density_scores
from .wasserstein import wasserstein_1d

DEFAULT_ENERGY_PER_SOP = 77e-15  # joules


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("prediction/label length mismatch")
    return float(np.mean(preds == labels)) if labels.size else 0.0


@dataclass(frozen=True)
class EnergyModel:
    energy_per_sop: float = DEFAULT_ENERGY_PER_SOP
    count_mode: str = "sop"  # "sop" or "spikes"

    def __post_init__(self):
        if self.energy_per_sop <= 0:
            raise ValueError("energy_per_sop must be positive")
        if self.count_mode not in ("sop", "spikes"):
            raise ValueError("count_mode must be 'sop' or 'spikes'")


class EnergyReport(NamedTuple):
    total: float
    per_graph: list


def count_sops(spikes_per_node, fan_out, width: int) -> int:
    """Synaptic events driven by spikes: each spike reaches ``fan_out * width`` synapses."""
    return int(np.sum(np.asarray(spikes_per_node) * np.asarray(fan_out) * width))


def energy_estimate(traces: Sequence, model: EnergyModel = EnergyModel()) -> EnergyReport:
    per_graph = []
    for tr in traces:
        events = tr.sop_count if model.count_mode == "sop" else tr.spike_count
        per_graph.append(events * model.energy_per_sop)
    return EnergyReport(float(sum(per_graph)), per_graph)


class Correlation(NamedTuple):
    r: float
    degenerate: bool


def spike_degree_correlation(records) -> Correlation:
    """Pearson r over ``(aggregated_weight, spike_frequency)`` records.

    Zero variance in either coordinate gives ``r = 0`` with the degenerate flag.
    """
    arr = np.asarray(records, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 2 or arr.shape[0] < 2:
        raise ValueError("need at least 2 records of (weight, frequency)")
    x, y = arr[:, 0], arr[:, 1]
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    scale = max(1.0, float(np.abs(x).max()), float(np.abs(y).max()))
    if sxx <= (1e-12 * scale) ** 2 * len(x) or syy <= (1e-12 * scale) ** 2 * len(y):
        return Correlation(0.0, True)
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return Correlation(float(np.clip(r, -1.0, 1.0)), False)


def divergence_report(partitions: Sequence[GraphDataset], metric: str) -> np.ndarray:
    """Pairwise W1 distances between the density-score distributions of partitions."""
    if len(partitions) < 2:
        raise ValueError("need at least 2 partitions")
    scores = []
    for p in partitions:
        if len(p) == 0:
            raise ValueError(f"partition {p.name!r} is empty")
        scores.append(density_scores(p, metric))
    k = len(scores)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = wasserstein_1d(scores[i], scores[j])
    return out


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
