"""Synthetic multi-view datasets with informative and label-independent views."""
from __future__ import annotations

import numpy as np

from .dataio import FeatureTable

# benchmark setting: 6 classes, 60 per class, 2 informative and 2 nuisance views
BENCHMARK_DATASET = {"dim": 32, "nuisance": True}


def make_multiview_dataset(n_classes: int = 6, per_class: int = 60, informative_views: int = 2,
                           noise_views: int = 2, dim: int = 16, signal: float = 1.0,
                           noise_dim: int | None = None, nuisance: bool = False, seed: int = 0) -> FeatureTable:
    """Non-negative histogram-like views; class information lives only in the
    first ``informative_views`` views.

    Each informative view has its own random class prototypes, so the views
    carry partly complementary evidence. Noise views are drawn independently
    of the label.
    """
    rng = np.random.default_rng(seed)
    n = n_classes * per_class
    labels = np.repeat(np.arange(n_classes), per_class)
    views = []
    for _ in range(informative_views):
        prototypes = rng.gamma(0.6, size=(n_classes, dim))
        base = rng.gamma(1.0, size=(n, dim))
        views.append(base + signal * prototypes[labels] * rng.gamma(2.0, 0.5, size=(n, 1)))
    for _ in range(noise_views):
        d = noise_dim or dim
        if nuisance:
            # same generative form as an informative view, but the cluster
            # memberships are drawn independently of the label
            prototypes = rng.gamma(0.6, size=(n_classes, d))
            groups = rng.integers(0, n_classes, size=n)
            base = rng.gamma(1.0, size=(n, d))
            views.append(base + signal * prototypes[groups] * rng.gamma(2.0, 0.5, size=(n, 1)))
        else:
            views.append(rng.gamma(1.0, size=(n, d)))
    names = [f"info{i}" for i in range(informative_views)] + [f"noise{i}" for i in range(noise_views)]
    ids = [f"s{i:05d}" for i in range(n)]
    return FeatureTable(tuple(ids), labels, tuple(views), tuple(names),
                        tuple(f"class{k}" for k in range(n_classes)))


def make_blobs(n_classes: int = 3, per_class: int = 20, dim: int = 2, spread: float = 0.3,
               separation: float = 5.0, seed: int = 0) -> FeatureTable:
    """Well-separated Gaussian blobs in a single view."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    centers[:, 0] = separation * np.cos(angles)
    if dim > 1:
        centers[:, 1] = separation * np.sin(angles)
    labels = np.repeat(np.arange(n_classes), per_class)
    X = centers[labels] + spread * rng.normal(size=(len(labels), dim))
    ids = [f"b{i:04d}" for i in range(len(labels))]
    return FeatureTable(tuple(ids), labels, (X,), ("blob",), tuple(f"c{k}" for k in range(n_classes)))


def make_two_kernel_problem(n: int = 60, dim: int = 2, seed: int = 0):
    """Binary problem with one informative and one pure-noise RBF kernel.

    Returns ``(grams, labels)``; both Grams are normalized to unit
    Hilbert-space variance so neither wins by scale alone.
    """
    from .kernels import KernelSpec, hilbert_variance, kernel_matrix

    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    signal = rng.normal(size=(n, dim)) * 0.7
    signal[:, 0] += 2.5 * y
    noise = rng.normal(size=(n, dim))
    grams = []
    for X in (signal, noise):
        K = kernel_matrix(KernelSpec(0, "rbf", 0.5), X)
        grams.append(K / hilbert_variance(K))
    return grams, y
