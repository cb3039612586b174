"""l_p-norm multiple kernel learning by alternating SVM solves and weight updates.

Given the SVM solution for the current combination ``sum_m beta_m K_m``, the
block norms of the primal weights are

    ||w_m||^2 = beta_m^2 * (alpha*y)' K_m (alpha*y)

and the weights minimizing the MKL objective for fixed ``w`` under
``sum_m beta_m^p = 1`` have the closed form

    beta_m = ||w_m||^(2/(p+1)) / (sum_k ||w_k||^(2p/(p+1)))^(1/p).

For ``p = 1`` this reduces to ``beta_m = ||w_m|| / sum_k ||w_k||``; kernels
whose block norm vanishes drop out for good.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .svm import SvmModel, decision_values, train_binary_svm, write_model

log = logging.getLogger(__name__)

ZERO_NORM = 1e-12


class MklError(ValueError):
    pass


@dataclass
class MklModel:
    specs: list
    betas: np.ndarray
    p: float
    svm: SvmModel
    block_norms_sq: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = True

    @property
    def outer_iterations(self) -> int:
        return len(self.trace)


def _stack(grams) -> np.ndarray:
    if isinstance(grams, np.ndarray) and grams.ndim == 3:
        return grams
    if len(grams) == 0:
        raise MklError("no Gram matrices to combine")
    shape = np.shape(grams[0])
    for g in grams:
        if np.shape(g) != shape:
            raise MklError(f"Gram shape {np.shape(g)} differs from {shape}")
    return np.stack([np.asarray(g, dtype=np.float64) for g in grams])


def _symmetric(stack: np.ndarray) -> bool:
    if stack.shape[1] != stack.shape[2]:
        return False
    scale = max(1.0, float(np.abs(stack).max()))
    return bool(np.all(np.abs(stack - stack.transpose(0, 2, 1)) <= 1e-9 * scale))


def combined_gram(betas, grams) -> np.ndarray:
    """Entrywise ``sum_m betas[m] * grams[m]``; ``grams`` may be a list or an ``(M, R, S)`` stack."""
    stack = _stack(grams)
    betas = np.asarray(betas, dtype=np.float64)
    if betas.shape != (stack.shape[0],):
        raise MklError(f"{betas.size} weights for {stack.shape[0]} Gram matrices")
    m, rows, cols = stack.shape
    return (betas @ stack.reshape(m, rows * cols)).reshape(rows, cols)


def _quadratic_forms(stack: np.ndarray, coef: np.ndarray) -> np.ndarray:
    m, n, _ = stack.shape
    return (stack.reshape(m * n, n) @ coef).reshape(m, n) @ coef


def lp_update(block_norms_sq: np.ndarray, p: float) -> np.ndarray:
    """Closed-form weight update from squared block norms, renormalized to ``sum beta^p = 1``."""
    norms = np.sqrt(np.maximum(block_norms_sq, 0.0))
    active = norms >= ZERO_NORM
    if not np.any(active):
        raise MklError("all kernel block norms vanished (every alpha is 0); try a larger C")
    betas = np.zeros_like(norms)
    betas[active] = norms[active] ** (2.0 / (p + 1.0))
    betas[active] /= np.sum(norms[active] ** (2.0 * p / (p + 1.0))) ** (1.0 / p)
    return betas / np.sum(betas ** p) ** (1.0 / p)


def train_lp_mkl(grams: Sequence[np.ndarray], labels, C: float = 1.0, p: float = 2.0,
                 tol_beta: float = 1e-4, max_outer: int = 100, specs: Sequence | None = None,
                 svm_tol: float = 1e-3, check_symmetric: bool = True) -> MklModel:
    if len(grams) == 0:
        raise MklError("need at least one Gram matrix")
    if p < 1:
        raise MklError(f"p must be >= 1, got {p}")
    labels = np.asarray(labels, dtype=np.float64)
    if np.all(labels > 0) or np.all(labels < 0):
        raise MklError("both classes must be present")
    grams = _stack(grams)
    n_kernels = grams.shape[0]
    if check_symmetric and not _symmetric(grams):
        raise MklError("Gram matrices must be square and symmetric")
    specs = list(specs) if specs is not None else list(range(n_kernels))

    betas = np.full(n_kernels, (1.0 / n_kernels) ** (1.0 / p))
    alpha = None
    trace = []
    converged = False
    for _ in range(max_outer):
        svm = train_binary_svm(combined_gram(betas, grams), labels, C, tol=svm_tol, alpha0=alpha,
                               check_symmetric=False)
        alpha = svm.alphas
        norms_sq = betas ** 2 * _quadratic_forms(grams, svm.coef)
        new_betas = lp_update(norms_sq, p)
        trace.append((new_betas.copy(), svm.objective))
        step = float(np.max(np.abs(new_betas - betas)))
        betas = new_betas
        if step < tol_beta:
            converged = True
            break
    if not converged:
        log.debug("MKL stopped after %d outer iterations without beta convergence", max_outer)
    # final solve so the embedded SVM matches the reported weights
    svm = train_binary_svm(combined_gram(betas, grams), labels, C, tol=svm_tol, alpha0=alpha,
                           check_symmetric=False)
    norms_sq = betas ** 2 * _quadratic_forms(grams, svm.coef)
    return MklModel(specs, betas, float(p), svm, norms_sq, trace, converged)


def predict_mkl(model: MklModel, cross_grams: Sequence[np.ndarray]) -> np.ndarray:
    """Decision values on the weight-combined cross Gram (one per model spec)."""
    if len(cross_grams) != len(model.specs):
        raise MklError(f"expected {len(model.specs)} cross Grams, got {len(cross_grams)}")
    return decision_values(model.svm, combined_gram(model.betas, cross_grams))


def write_mkl_model(path, model: MklModel) -> None:
    extra = [f"p {model.p!r}"] + [f"beta {spec} {float(b)!r}" for spec, b in zip(model.specs, model.betas)]
    write_model(path, model.svm, extra)


# ---------------------------------------------------------------------------
# One-vs-all wrappers shared by cross-validation and the benchmark harness


def train_one_vs_all_mkl(grams: Sequence[np.ndarray], labels, n_classes: int, C: float, p: float = 2.0,
                         specs: Sequence | None = None, **kwargs) -> list[MklModel | None]:
    """One binary MKL per class (class k = +1). Classes that are absent, or
    that are the only class present, get ``None``."""
    labels = np.asarray(labels)
    grams = _stack(grams)
    if kwargs.pop("check_symmetric", True) and not _symmetric(grams):
        raise MklError("Gram matrices must be square and symmetric")
    models: list[MklModel | None] = []
    for k in range(n_classes):
        y = np.where(labels == k, 1.0, -1.0)
        if np.all(y > 0) or np.all(y < 0):
            models.append(None)
            continue
        models.append(train_lp_mkl(grams, y, C, p, specs=specs, check_symmetric=False, **kwargs))
    return models


def one_vs_all_scores(models: Sequence[MklModel | None], cross_grams: Sequence[np.ndarray],
                      present_class: int | None = None) -> np.ndarray:
    """``N_eval x K`` decision values; untrained classes score ``-inf``."""
    cross_grams = _stack(cross_grams)
    n_eval = cross_grams.shape[1]
    scores = np.full((n_eval, len(models)), -np.inf)
    combined_cache: dict[bytes, np.ndarray] = {}
    for k, model in enumerate(models):
        if model is None:
            continue
        key = model.betas.tobytes()
        if key not in combined_cache:
            combined_cache[key] = combined_gram(model.betas, cross_grams)
        scores[:, k] = decision_values(model.svm, combined_cache[key])
    if present_class is not None and np.all(np.isneginf(scores)):
        scores[:, present_class] = 0.0
    return scores

