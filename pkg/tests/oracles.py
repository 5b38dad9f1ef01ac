"""Slow, literal reference implementations used to cross-check the package."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog


def neighbours(n, edges):
    """Adjacency lists including the self-loop."""
    adj = [{v} for v in range(n)]
    for u, v in edges:
        adj[u].add(int(v))
        adj[v].add(int(u))
    return [sorted(a) for a in adj]


def lif_forward(n, edges, inputs, weights, biases, thresholds_of, T, leak=0.5, v_reset=0.0,
                aggregation="sym", degree_rate_update=None):
    """Per-neuron scalar simulation of the layered LIF encoder.

    ``thresholds_of(step)`` returns a dict degree -> threshold used during
    that step. ``degree_rate_update(step, degrees, final_spikes)`` is called
    after every step (for adaptive runs). Returns the per-step graph mean of
    final-layer post-reset membranes, the final-step mean spikes, the total
    spike count and per-step final spikes.
    """
    adj = neighbours(n, edges)
    deg = [len(a) for a in adj]
    L = len(weights)
    d = [w.shape[1] for w in weights]
    u = [[[0.0] * d[l] for _ in range(n)] for l in range(L)]
    s = [[[0.0] * d[l] for _ in range(n)] for l in range(L)]
    U_rows, finals, count = [], [], 0
    for t in range(T):
        th = thresholds_of(t)
        x = [[float(inputs[t][v][j]) for j in range(inputs.shape[2])] for v in range(n)]
        for l in range(L):
            W, b = weights[l], biases[l]
            proj = [[sum(x[v][i] * W[i][k] for i in range(len(x[v]))) for k in range(d[l])] for v in range(n)]
            new_s = [[0.0] * d[l] for _ in range(n)]
            for v in range(n):
                for k in range(d[l]):
                    cur = b[k]
                    for w_ in adj[v]:
                        coef = 1.0 / np.sqrt(deg[v] * deg[w_]) if aggregation == "sym" else 1.0
                        cur += coef * proj[w_][k]
                    vth = th[deg[v]]
                    pot = leak * (u[l][v][k] - vth * s[l][v][k]) + cur
                    spike = 1.0 if pot >= vth else 0.0
                    u[l][v][k] = v_reset if spike else pot
                    new_s[v][k] = spike
                    count += int(spike)
            s[l] = new_s
            x = new_s
        U_rows.append([sum(u[L - 1][v][k] for v in range(n)) / n for k in range(d[-1])])
        finals.append(np.array(x))
        if degree_rate_update is not None:
            degree_rate_update(t, deg, np.array(x))
    s_G = finals[-1].mean(axis=0)
    return np.array(U_rows), s_G, count, finals


def wasserstein_lp(a, b, wa=None, wb=None):
    """W1 between two weighted point sets by solving the transport LP."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wa = np.full(len(a), 1.0 / len(a)) if wa is None else np.asarray(wa, float) / np.sum(wa)
    wb = np.full(len(b), 1.0 / len(b)) if wb is None else np.asarray(wb, float) / np.sum(wb)
    m, n = len(a), len(b)
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    A_eq, b_eq = [], []
    for i in range(m):
        row = np.zeros(m * n)
        row[i * n:(i + 1) * n] = 1.0
        A_eq.append(row)
        b_eq.append(wa[i])
    for j in range(n):
        row = np.zeros(m * n)
        row[j::n] = 1.0
        A_eq.append(row)
        b_eq.append(wb[j])
    res = linprog(cost, A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.success, res.message
    return float(res.fun)


def pseudo_label_rule(assign, preds, C):
    """The dominating-label rule written out with plain loops.

    Cluster r keeps label e_r only if more than half of its members predict
    e_r. A label belongs to the single cluster with the most graphs
    predicting it (no owner on a tie). A graph is retained when its
    prediction is its cluster's dominating label and that cluster owns it.
    """
    clusters = sorted(set(int(a) for a in assign))
    members = {r: [j for j, a in enumerate(assign) if a == r] for r in clusters}
    dominant = {}
    for r in clusters:
        for y in range(C):
            holders = sum(1 for j in members[r] if preds[j] == y)
            if 2 * holders > len(members[r]):
                dominant[r] = y
    owner = {}
    for y in range(C):
        tally = {r: sum(1 for j in members[r] if preds[j] == y) for r in clusters}
        best = max(tally.values())
        winners = [r for r, c in tally.items() if c == best]
        if best > 0 and len(winners) == 1:
            owner[y] = winners[0]
    return sorted(j for j in range(len(preds))
                  if dominant.get(int(assign[j])) == preds[j] and owner.get(int(preds[j])) == int(assign[j]))


def all_configurations(n_max=8, c_max=2):
    """Every (assignment, prediction, C) with N <= n_max and cluster/label ids < C <= c_max."""
    for C in range(1, c_max + 1):
        for n in range(C, n_max + 1):
            for assign in itertools.product(range(C), repeat=n):
                for preds in itertools.product(range(C), repeat=n):
                    yield np.array(assign), np.array(preds), C


def best_two_partition(X):
    """Exhaustive minimum-inertia split of the rows of ``X`` into two non-empty groups."""
    n = len(X)
    best, best_mask = np.inf, None
    for bits in range(1, 2 ** (n - 1)):
        mask = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        inertia = sum(((X[m] - X[m].mean(axis=0)) ** 2).sum() for m in (mask, ~mask))
        if inertia < best:
            best, best_mask = inertia, mask
    return best, best_mask
