"""Shared test oracles: central finite differences and brute-force metrics.

These are written against the definitions, independent of the library code
they check. Finite differences run in float64 with the engine driven in
float64 too, so the comparison tolerance reflects the math, not the dtype.
"""

from __future__ import annotations

import numpy as np


def central_difference(f, arrays: list[np.ndarray], h: float = 1e-3) -> list[np.ndarray]:
    """Gradient estimate of scalar f(*arrays) w.r.t. each float64 array."""
    grads = []
    for i, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = f(*arrays)
            flat[j] = orig - h
            fm = f(*arrays)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def brute_force_ari(a, b) -> float:
    """ARI by explicit pair counting over all index pairs."""
    a = list(a)
    b = list(b)
    n = len(a)
    both = a_only = b_only = neither = 0
    for i in range(n):
        for j in range(i + 1, n):
            sa = a[i] == a[j]
            sb = b[i] == b[j]
            if sa and sb:
                both += 1
            elif sa:
                a_only += 1
            elif sb:
                b_only += 1
            else:
                neither += 1
    pairs = both + a_only + b_only + neither
    sum_a = both + a_only
    sum_b = both + b_only
    expected = sum_a * sum_b / pairs
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (both - expected) / (max_index - expected)


def brute_force_regression_metrics(pred: np.ndarray, truth: np.ndarray):
    """(per-gene MAE list, overall MAE, PCC or None) straight from definitions."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n_spots, n_genes = pred.shape
    maes = []
    for g in range(n_genes):
        total = 0.0
        for s in range(n_spots):
            total += abs(pred[s, g] - truth[s, g])
        maes.append(total / n_spots)
    mae_overall = sum(maes) / n_genes
    x = pred.reshape(-1)
    y = truth.reshape(-1)
    mx = sum(x) / len(x)
    my = sum(y) / len(y)
    sxx = sum((v - mx) ** 2 for v in x)
    syy = sum((v - my) ** 2 for v in y)
    if sxx == 0 or syy == 0:
        return maes, mae_overall, None
    sxy = sum((xv - mx) * (yv - my) for xv, yv in zip(x, y))
    return maes, mae_overall, sxy / (sxx * syy) ** 0.5
