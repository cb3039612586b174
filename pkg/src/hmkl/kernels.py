"""Kernel functions, Gram-matrix banks and kernel normalization."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import FeatureTable

log = logging.getLogger(__name__)

FAMILIES = ("linear", "rbf", "chi2")
DEFAULT_RBF_GAMMAS = (10.0, 1.0, 0.1, 0.01)
DEFAULT_CHI2_GAMMAS = (3.0, 2.0, 1.0, 0.5)
DEGENERATE_SCALE = 1e-12


class KernelError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class KernelSpec:
    view: int
    family: str
    gamma: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        if (self.gamma is None) != (self.family == "linear"):
            raise KernelError("gamma must be given for rbf/chi2 and omitted for linear")
        if self.gamma is not None and not self.gamma > 0:
            raise KernelError(f"gamma must be positive, got {self.gamma}")

    def __str__(self) -> str:
        if self.gamma is None:
            return f"f{self.view}:{self.family}"
        return f"f{self.view}:{self.family}:{self.gamma!r}"

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        parts = text.strip().split(":")
        if len(parts) not in (2, 3) or not parts[0].startswith("f"):
            raise KernelError(f"cannot parse kernel spec {text!r}")
        gamma = float(parts[2]) if len(parts) == 3 else None
        return cls(int(parts[0][1:]), parts[1], gamma)


def _chi2_distance(x1: np.ndarray, x2: np.ndarray) -> float:
    num = (x1 - x2) ** 2
    den = x1 + x2
    mask = den > 0
    return float(np.sum(num[mask] / den[mask]))


def eval_kernel(spec: KernelSpec, x1, x2) -> float:
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise KernelError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    if spec.family == "linear":
        return float(np.dot(x1, x2))
    if spec.family == "rbf":
        return float(np.exp(-spec.gamma * np.sum((x1 - x2) ** 2)))
    if np.any(x1 < 0) or np.any(x2 < 0):
        raise KernelError("chi2 kernel requires non-negative features")
    return float(np.exp(-spec.gamma * _chi2_distance(x1, x2)))


def _pairwise(fn, X: np.ndarray, Y: np.ndarray, chunk_elems: int = 8_000_000) -> np.ndarray:
    out = np.empty((X.shape[0], Y.shape[0]))
    rows = max(1, chunk_elems // max(1, Y.size))
    for start in range(0, X.shape[0], rows):
        out[start:start + rows] = fn(X[start:start + rows, None, :], Y[None, :, :])
    return out


def _sq_euclidean(a, b):
    return ((a - b) ** 2).sum(-1)


def _chi2_terms(a, b):
    den = a + b
    num = (a - b) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return terms.sum(-1)


def kernel_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Gram matrix ``K[i, j] = k(X[i], Y[j])`` (``Y`` defaults to ``X``).

    Every entry is computed from the pair alone (no shared expansions), so
    ``K(X, X)`` is exactly symmetric and matches :func:`eval_kernel`.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.family == "linear":
        return _pairwise(lambda a, b: (a * b).sum(-1), X, Y)
    if spec.family == "rbf":
        return np.exp(-spec.gamma * _pairwise(_sq_euclidean, X, Y))
    if np.any(X < 0) or np.any(Y < 0):
        raise KernelError("chi2 kernel requires non-negative features")
    return np.exp(-spec.gamma * _pairwise(_chi2_terms, X, Y))


def default_specs(table: FeatureTable, gamma_grid_rbf=DEFAULT_RBF_GAMMAS,
                  gamma_grid_chi2=DEFAULT_CHI2_GAMMAS) -> tuple[list[KernelSpec], list[str]]:
    """Per view: one linear, one RBF per gamma, one chi2 per gamma (non-negative views only)."""
    specs, warnings = [], []
    for f, (name, view) in enumerate(zip(table.view_names, table.views)):
        specs.append(KernelSpec(f, "linear"))
        specs.extend(KernelSpec(f, "rbf", float(g)) for g in gamma_grid_rbf)
        if np.all(view >= 0):
            specs.extend(KernelSpec(f, "chi2", float(g)) for g in gamma_grid_chi2)
        elif gamma_grid_chi2:
            msg = f"view {name!r} has negative values; its {len(gamma_grid_chi2)} chi2 kernels are unavailable"
            log.warning(msg)
            warnings.append(msg)
    return specs, warnings


def hilbert_variance(gram: np.ndarray) -> float:
    """Variance of the kernel-embedded points: mean(diag K) - mean(K)."""
    n = gram.shape[0]
    return float(np.trace(gram) / n - gram.sum() / (n * n))


@dataclass
class KernelBank:
    """Training Gram matrices for a list of kernel specs.

    ``scales[m]`` divides both the training Gram and every prediction-time
    cross Gram of kernel ``m``; it is 1 until a normalization is applied.
    ``train_views`` keeps the training features so cross Grams can be built.
    """

    specs: list[KernelSpec]
    grams: list[np.ndarray]
    train_views: tuple[np.ndarray, ...]
    view_names: tuple[str, ...] = ()
    scales: np.ndarray = None
    normalization: str = "none"
    unavailable: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.scales is None:
            self.scales = np.ones(len(self.specs))
        if len(self.grams) != len(self.specs):
            raise KernelError("every spec needs a Gram matrix")

    def __len__(self) -> int:
        return len(self.specs)

    @property
    def n_train(self) -> int:
        return self.grams[0].shape[0] if self.grams else self.train_views[0].shape[0]

    def index(self, spec: KernelSpec) -> int:
        return self.specs.index(spec)

    def cross_gram(self, m: int, views: Sequence[np.ndarray]) -> np.ndarray:
        """Rectangular ``N_eval x N_train`` Gram of kernel ``m`` with the stored scale."""
        spec = self.specs[m]
        return kernel_matrix(spec, views[spec.view], self.train_views[spec.view]) / self.scales[m]

    def cross_grams(self, table_or_views, indices: Sequence[int] | None = None) -> list[np.ndarray]:
        views = table_or_views.views if isinstance(table_or_views, FeatureTable) else table_or_views
        for f, v in enumerate(self.train_views):
            if views[f].shape[1] != v.shape[1]:
                raise KernelError(f"view {f}: expected dimension {v.shape[1]}, got {views[f].shape[1]}")
        if indices is None:
            indices = range(len(self.specs))
        return [self.cross_gram(m, views) for m in indices]

    def restrict(self, indices: Sequence[int]) -> "KernelBank":
        idx = list(indices)
        return replace(self, specs=[self.specs[i] for i in idx], grams=[self.grams[i] for i in idx],
                       scales=self.scales[idx].copy())


def build_bank(table: FeatureTable, gamma_grid_rbf=DEFAULT_RBF_GAMMAS, gamma_grid_chi2=DEFAULT_CHI2_GAMMAS,
               specs: Sequence[KernelSpec] | None = None, cache: "GramCache | None" = None) -> KernelBank:
    """Evaluate the Gram matrix of every kernel spec on ``table``.

    With default grids every non-negative view contributes 9 kernels.
    """
    warnings: list[str] = []
    if specs is None:
        specs, warnings = default_specs(table, gamma_grid_rbf, gamma_grid_chi2)
        unavailable = [f"f{f}:chi2:{float(g)!r}" for f, v in enumerate(table.views) if np.any(v < 0)
                       for g in gamma_grid_chi2]
    else:
        specs, unavailable = list(specs), []
    table_hash = cache.table_hash(table) if cache else None
    grams = []
    for spec in specs:
        gram = cache.load(spec, table_hash) if cache else None
        if gram is None:
            gram = kernel_matrix(spec, table.views[spec.view])
            if cache:
                cache.store(spec, table_hash, gram)
        grams.append(gram)
    return KernelBank(list(specs), grams, table.views, table.view_names, unavailable=unavailable,
                      warnings=warnings)


def normalize_by_hilbert_std(bank: KernelBank, mode: str = "variance") -> KernelBank:
    """Rescale each Gram so the embedded training points have unit spread.

    ``mode="variance"`` divides by the Hilbert-space variance s^2 (the
    default); ``mode="std"`` divides by s. Scale factors accumulate in
    ``bank.scales`` and are re-applied to cross Grams.
    """
    if mode not in ("variance", "std"):
        raise KernelError(f"unknown normalization mode {mode!r}")
    grams, scales = [], bank.scales.copy()
    for m, (spec, gram) in enumerate(zip(bank.specs, bank.grams)):
        var = hilbert_variance(gram)
        if var < DEGENERATE_SCALE:
            raise KernelError(f"kernel {spec} is degenerate (Hilbert-space variance {var:.3g})")
        factor = var if mode == "variance" else np.sqrt(var)
        grams.append(gram / factor)
        scales[m] *= factor
    return replace(bank, grams=grams, scales=scales, normalization=mode)


def zien_ong_normalize(gram) -> np.ndarray:
    """Scale-invariant normalization used to make reported kernel weights comparable."""
    gram = np.asarray(gram, dtype=np.float64)
    scale = hilbert_variance(gram)
    if scale < DEGENERATE_SCALE:
        raise KernelError(f"degenerate kernel (scale {scale:.3g})")
    return gram / scale


def is_symmetric(gram: np.ndarray, tol: float = 1e-9) -> bool:
    return gram.ndim == 2 and gram.shape[0] == gram.shape[1] and bool(np.all(np.abs(gram - gram.T) <= tol))


# ---------------------------------------------------------------------------
# On-disk Gram cache


class GramCache:
    """Gram matrices stored as ``gram <N> <N> <spec> <table-hash>`` + little-endian f8 rows."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def table_hash(table: FeatureTable) -> str:
        h = hashlib.sha256()
        for sid in table.sample_ids:
            h.update(sid.encode() + b"\0")
        for v in table.views:
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def _path(self, spec: KernelSpec, table_hash: str) -> Path:
        safe = str(spec).replace(":", "_")
        return self.directory / f"{table_hash}_{safe}.gram"

    def store(self, spec: KernelSpec, table_hash: str, gram: np.ndarray) -> Path:
        path = self._path(spec, table_hash)
        write_gram(path, gram, str(spec), table_hash)
        return path

    def load(self, spec: KernelSpec, table_hash: str) -> np.ndarray | None:
        path = self._path(spec, table_hash)
        if not path.exists():
            return None
        gram, spec_text, stored_hash = read_gram(path)
        if spec_text != str(spec) or stored_hash != table_hash:
            return None
        return gram


def write_gram(path, gram: np.ndarray, spec_text: str, table_hash: str) -> None:
    gram = np.asarray(gram, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(f"gram {gram.shape[0]} {gram.shape[1]} {spec_text} {table_hash}\n".encode())
        fh.write(np.ascontiguousarray(gram).tobytes())


def read_gram(path) -> tuple[np.ndarray, str, str]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if len(header) != 5 or header[0] != "gram":
            raise KernelError(f"{path}: bad gram header")
        rows, cols = int(header[1]), int(header[2])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise KernelError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(np.float64), header[3], header[4]
