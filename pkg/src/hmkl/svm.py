"""Binary soft-margin SVM trained in the dual on a precomputed Gram matrix.

The solver is SMO-style decomposition: each step picks the maximal violating
pair (first-order working-set selection, lowest index on ties) and solves the
two-variable subproblem exactly. Internally the dual is written as

    min_a  f(a) = 1/2 a' Q a - sum(a),   Q_ij = y_i y_j K_ij,
    s.t.   y' a = 0,  0 <= a_i <= C,

and ``SvmModel.objective`` reports ``-f(a)``, the maximization form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

SUPPORT_THRESHOLD = 1e-8
TAU = 1e-12


class SvmError(ValueError):
    pass


@dataclass
class SvmModel:
    alphas: np.ndarray
    bias: float
    labels: np.ndarray
    C: float
    objective: float
    iterations: int
    converged: bool = True

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alphas > SUPPORT_THRESHOLD)

    @property
    def coef(self) -> np.ndarray:
        """``alpha_i * y_i``, the weights of the kernel expansion."""
        return self.alphas * self.labels


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter, alpha, grad, check_every):
    n = y.shape[0]
    it = 0
    regressions = 0
    last_obj = 0.0
    if check_every > 0:
        last_obj = 0.0
        for t in range(n):
            last_obj -= 0.5 * alpha[t] * (grad[t] - 1.0)
    converged = False
    while it < max_iter:
        # i maximizes -y G over I_up, j minimizes -y G over I_low
        i = -1
        j = -1
        gmax = -np.inf
        gmin = np.inf
        for t in range(n):
            v = -y[t] * grad[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] < 0 and alpha[t] < C) or (y[t] > 0 and alpha[t] > 0):
                if v < gmin:
                    gmin = v
                    j = t
        if i < 0 or j < 0 or gmax - gmin < tol:
            converged = True
            break

        Ki = K[i]
        Kj = K[j]
        old_ai = alpha[i]
        old_aj = alpha[j]
        quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        for t in range(n):
            grad[t] += y[t] * (y[i] * Ki[t] * dai + y[j] * Kj[t] * daj)
        it += 1

        if check_every > 0 and it % check_every == 0:
            obj = 0.0
            for t in range(n):
                obj -= 0.5 * alpha[t] * (grad[t] - 1.0)
            if obj < last_obj - 1e-10 * (1.0 + abs(last_obj)):
                regressions += 1
            last_obj = obj
    return it, converged, regressions


def _bias(alpha, y, grad, C):
    """Bias from free support vectors, or the midpoint of the feasible interval."""
    r = y * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        return float(-np.mean(r[free]))
    at_upper = alpha >= C
    # upper/lower bounds on rho = -b implied by the KKT conditions at the bounds
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (~at_upper & (y < 0))
    ub = r[ub_mask].min() if np.any(ub_mask) else np.inf
    lb = r[lb_mask].max() if np.any(lb_mask) else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float(-(ub if np.isfinite(ub) else lb))
    return float(-(ub + lb) / 2.0)


def dual_objective(gram, labels, alphas) -> float:
    """``sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij``."""
    ay = np.asarray(alphas) * np.asarray(labels)
    return float(np.sum(alphas) - 0.5 * ay @ np.asarray(gram) @ ay)


def train_binary_svm(gram, labels, C: float = 1.0, tol: float = 1e-3, max_iter: int = 10_000_000,
                     alpha0=None, debug: bool = False, check_symmetric: bool = True) -> SvmModel:
    """Solve the SVM dual for a fixed Gram matrix.

    ``alpha0`` warm-starts the solver; it must be feasible for the same
    labels and ``C``. With ``debug=True`` the dual objective is checked for
    monotone increase every 1000 pair updates.
    """
    K = np.ascontiguousarray(gram, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = y.shape[0]
    if K.shape != (n, n):
        raise SvmError(f"Gram shape {K.shape} does not match {n} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise SvmError("labels must be -1 or +1")
    if np.all(y > 0) or np.all(y < 0):
        raise SvmError("both classes must be present")
    if not C > 0:
        raise SvmError(f"C must be positive, got {C}")
    if check_symmetric and not np.allclose(K, K.T, rtol=0, atol=1e-9 * max(1.0, np.abs(K).max())):
        raise SvmError("Gram matrix is not symmetric")

    if alpha0 is None:
        alpha = np.zeros(n)
        grad = -np.ones(n)
    else:
        alpha = np.clip(np.asarray(alpha0, dtype=np.float64), 0.0, C).copy()
        grad = y * (K @ (alpha * y)) - 1.0
    iterations, converged, regressions = _smo(K, y, float(C), float(tol), int(max_iter), alpha, grad,
                                              1000 if debug else 0)
    if debug and regressions:
        raise AssertionError(f"dual objective decreased {regressions} times")
    objective = float(-0.5 * np.dot(alpha, grad - 1.0))
    return SvmModel(alpha, _bias(alpha, y, grad, C), y.copy(), float(C), objective, int(iterations), bool(converged))


def decision_values(model: SvmModel, cross_gram) -> np.ndarray:
    """``b + sum_i a_i y_i K(x, x_i)`` for each row of an ``N_eval x N_train`` Gram."""
    G = np.asarray(cross_gram, dtype=np.float64)
    if G.ndim != 2 or G.shape[1] != model.alphas.shape[0]:
        raise SvmError(f"cross Gram has {G.shape[-1]} columns, model has {model.alphas.shape[0]} training samples")
    return model.bias + G @ model.coef


def predict_labels(values) -> np.ndarray:
    """Sign of decision values with ``sign(0) = +1``."""
    return np.where(np.asarray(values) >= 0, 1, -1)


def write_model(path, model: SvmModel, extra_lines=()) -> None:
    with open(path, "w") as fh:
        fh.write("# svm-model v1\n")
        fh.write(f"C {model.C!r}\n")
        fh.write(f"bias {model.bias!r}\n")
        for i, (a, lab) in enumerate(zip(model.alphas, model.labels)):
            fh.write(f"alpha {i} {float(a)!r}\n")
        fh.write("labels " + " ".join("+1" if v > 0 else "-1" for v in model.labels) + "\n")
        for line in extra_lines:
            fh.write(line + "\n")


def read_model(path) -> tuple[SvmModel, list[str]]:
    """Parse a model file; returns the model and any unrecognized lines."""
    alphas: dict[int, float] = {}
    C = bias = None
    labels = None
    rest = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "# svm-model v1":
            raise SvmError(f"{path}: not an svm-model v1 file")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "alpha":
                alphas[int(parts[1])] = float(parts[2])
            elif parts[0] == "bias":
                bias = float(parts[1])
            elif parts[0] == "C":
                C = float(parts[1])
            elif parts[0] == "labels":
                labels = np.array([float(v) for v in parts[1:]])
            else:
                rest.append(line.rstrip("\n"))
    if C is None or bias is None:
        raise SvmError(f"{path}: missing C or bias")
    alpha = np.array([alphas[i] for i in range(len(alphas))])
    if labels is None:
        labels = np.ones_like(alpha)
    return SvmModel(alpha, bias, labels, C, float("nan"), 0), rest
