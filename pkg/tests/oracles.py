"""Independent reference computations used to freeze and check expected values.

Nothing here imports the code under test.
"""
from __future__ import annotations

import itertools

import numba
import numpy as np


@numba.njit(cache=True)
def _project(v, y, C):
    """Euclidean projection onto {a : y'a = 0, 0 <= a <= C} by bisection on the multiplier."""
    lo = -(np.max(np.abs(v)) + C + 1.0)
    hi = -lo
    a = np.empty_like(v)
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        s = 0.0
        for i in range(v.shape[0]):
            a[i] = min(max(v[i] - lam * y[i], 0.0), C)
            s += y[i] * a[i]
        if s > 0:
            lo = lam
        else:
            hi = lam
    lam = 0.5 * (lo + hi)
    for i in range(v.shape[0]):
        a[i] = min(max(v[i] - lam * y[i], 0.0), C)
    return a


@numba.njit(cache=True)
def projected_gradient_svm(K, y, C, iterations):
    """Maximize sum(a) - 1/2 a'Qa over the SVM dual feasible set.

    Accelerated projected gradient with function-value restarts; returns the
    best objective seen and its point.
    """
    n = y.shape[0]
    Q = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            Q[i, j] = y[i] * y[j] * K[i, j]
    L = np.linalg.eigvalsh(Q)[-1] + 1e-12
    x = np.zeros(n)
    z = x.copy()
    t = 1.0
    best = 0.0
    best_x = x.copy()
    prev = 0.0
    for _ in range(iterations):
        grad = 1.0 - Q @ z
        x_new = _project(z + grad / L, y, C)
        obj = np.sum(x_new) - 0.5 * x_new @ Q @ x_new
        if obj < prev:
            # restart momentum
            t = 1.0
            z = x.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x = x_new
        t = t_new
        prev = obj
        if obj > best:
            best = obj
            best_x = x_new.copy()
    return best, best_x


def kmeans_bruteforce_1d(points, k=2):
    """Optimal k=2 partition of a small 1-D set by enumerating every split."""
    pts = np.asarray(points, dtype=float)
    best = (np.inf, None)
    n = len(pts)
    for mask in itertools.product([0, 1], repeat=n):
        mask = np.array(mask)
        if mask.sum() in (0, n):
            continue
        groups = [pts[mask == g] for g in range(k)]
        sse = sum(((g - g.mean()) ** 2).sum() for g in groups)
        if sse < best[0]:
            best = (sse, sorted(g.mean() for g in groups))
    return best[1]


def hilbert_variance_bruteforce(K):
    """Mean squared distance of embedded points to their centroid, by explicit sums."""
    n = K.shape[0]
    total = 0.0
    for i in range(n):
        # ||phi_i - mean||^2 = K_ii - 2/n sum_j K_ij + 1/n^2 sum_jl K_jl
        total += K[i, i] - 2.0 / n * K[i].sum() + K.sum() / n ** 2
    return total / n


def best_subset_exhaustive(score, n):
    """Best value of ``score`` over every non-empty subset of ``range(n)``.

    ``score`` maps a sorted index list to a number; the enumeration itself is
    the reference, the scoring function is supplied by the caller.
    """
    return max(score(list(s)) for r in range(1, n + 1) for s in itertools.combinations(range(n), r))
