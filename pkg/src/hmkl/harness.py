"""One-vs-all training, model selection and the repeated-split benchmark."""
from __future__ import annotations

import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import FeatureTable, FoldAssignment, make_folds, stratified_split
from .features import l2_normalize
from .heuristic import CrossValidator, SelectionTrace, select_kernels
from .kernels import (DEFAULT_CHI2_GAMMAS, DEFAULT_RBF_GAMMAS, KernelBank, KernelSpec, build_bank,
                      hilbert_variance, normalize_by_hilbert_std)
from .mkl import MklModel, one_vs_all_scores, train_one_vs_all_mkl

log = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.1, 1.0, 2.0, 3.0, 4.0, 5.0)
DEFAULT_FRACTIONS = (0.05, 0.1, 0.2, 0.5, 0.8, 0.9)
METHOD_KINDS = ("single_kernel", "concat_single_kernel", "mkl_lp", "heuristic_mkl")
_ALIASES = {"single": "single_kernel", "concat": "concat_single_kernel", "mkl": "mkl_lp",
            "heuristic": "heuristic_mkl"}


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class Method:
    kind: str
    p: float = 2.0
    view: int | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise HarnessError(f"unknown method {self.kind!r}")
        if self.kind == "single_kernel" and self.view is None:
            raise HarnessError("single_kernel needs a view index")
        if self.p < 1:
            raise HarnessError(f"p must be >= 1, got {self.p}")

    @property
    def label(self) -> str:
        if self.kind == "single_kernel":
            return f"single_kernel[f{self.view}]"
        if self.kind == "mkl_lp":
            return f"mkl_lp[p={self.p:g}]"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "Method":
        """``single:<view>``, ``concat``, ``mkl:<p>``, ``heuristic`` (long names accepted too)."""
        name, _, arg = text.strip().partition(":")
        kind = _ALIASES.get(name, name)
        if kind == "single_kernel":
            return cls(kind, view=int(arg.lstrip("f")))
        if kind == "mkl_lp":
            return cls(kind, p=float(arg) if arg else 2.0)
        return cls(kind)


# ---------------------------------------------------------------------------
# Feature preparation and banks


def normalize_features(table: FeatureTable) -> FeatureTable:
    """L2-normalize every feature vector (per sample and per view)."""
    return table.map_views(l2_normalize)


def concat_views(table: FeatureTable) -> FeatureTable:
    """Single-view table holding the L2-normalized concatenation of all views."""
    joined = np.hstack(table.views)
    joined = np.array([l2_normalize(row) for row in joined])
    return FeatureTable(table.sample_ids, table.labels, (joined,), ("concat",), table.class_names)


@dataclass(frozen=True)
class BankConfig:
    gamma_grid_rbf: tuple = DEFAULT_RBF_GAMMAS
    gamma_grid_chi2: tuple = DEFAULT_CHI2_GAMMAS
    normalization: str = "variance"


def method_table(table: FeatureTable, method: Method) -> FeatureTable:
    return concat_views(table) if method.kind == "concat_single_kernel" else table


def method_bank(train_table: FeatureTable, method: Method, config: BankConfig = BankConfig()) -> KernelBank:
    """Kernel bank a method trains on, built from training samples only."""
    table = method_table(train_table, method)
    bank = build_bank(table, config.gamma_grid_rbf, config.gamma_grid_chi2)
    if method.kind == "single_kernel":
        if not 0 <= method.view < table.n_views:
            raise HarnessError(f"view {method.view} out of range")
        return bank.restrict([m for m, s in enumerate(bank.specs) if s.view == method.view])
    if method.kind in ("mkl_lp", "heuristic_mkl") and config.normalization != "none":
        bank = normalize_by_hilbert_std(bank, config.normalization)
    return bank


# ---------------------------------------------------------------------------
# Multiclass models


@dataclass
class MulticlassModel:
    method: Method
    class_names: tuple
    bank: KernelBank
    models: list
    C: float
    p: float
    trace: SelectionTrace | None = None
    # the full bank the trace indices refer to
    candidates: KernelBank | None = None

    @property
    def specs(self) -> list[KernelSpec]:
        return list(self.bank.specs)

    def decision_matrix(self, table: FeatureTable) -> np.ndarray:
        table = method_table(table, self.method)
        return one_vs_all_scores(self.models, self.bank.cross_grams(table))


def train_one_vs_all(bank: KernelBank, train_table: FeatureTable, C: float, p: float = 2.0,
                     method: Method | str = "mkl_lp", folds: FoldAssignment | None = None,
                     spec_indices: Sequence[int] | None = None, **mkl_kwargs) -> MulticlassModel:
    """Train one binary model per class on ``bank`` (label +1 for the class).

    For ``heuristic_mkl`` the kernel subset is selected once on the whole
    training set with ``folds`` and shared by all classes. For single-kernel
    methods ``spec_indices`` names the chosen kernel (defaults to the first).
    """
    method = Method.parse(method) if isinstance(method, str) else method
    present = set(train_table.labels.tolist())
    missing = [train_table.class_names[k] for k in range(train_table.n_classes) if k not in present]
    if missing:
        raise HarnessError(f"class {missing[0]!r} has no training samples")
    if train_table.n_classes < 2:
        raise HarnessError("need at least two classes")
    trace = None
    if method.kind == "heuristic_mkl" and spec_indices is None:
        if folds is None:
            raise HarnessError("heuristic_mkl needs a fold assignment")
        spec_indices, trace = select_kernels(bank, train_table, folds, C, 2.0, **mkl_kwargs)
    elif spec_indices is None:
        spec_indices = [0] if method.kind in ("single_kernel", "concat_single_kernel") else range(len(bank))
    sub = bank.restrict(list(spec_indices))
    models = train_one_vs_all_mkl(sub.grams, train_table.labels, train_table.n_classes, C, p,
                                  specs=list(sub.specs), **mkl_kwargs)
    return MulticlassModel(method, train_table.class_names, sub, models, float(C), float(p), trace,
                           bank if trace is not None else None)


def predict_multiclass(model: MulticlassModel, test_table: FeatureTable) -> np.ndarray:
    """Argmax over the one-vs-all decision values (ties to the lowest class)."""
    return np.argmax(model.decision_matrix(test_table), axis=1)


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float(np.mean(y_true == y_pred)) if y_true.size else float("nan")


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def select_hyperparameters(train_table: FeatureTable, method: Method | str, C_grid: Sequence[float],
                           folds: FoldAssignment, bank: KernelBank | None = None,
                           config: BankConfig = BankConfig(), **mkl_kwargs) -> tuple[float, int | None]:
    """Pick the C (and, for single-kernel methods, the kernel) with the best CV accuracy.

    Returns ``(C, kernel index or None)``. Ties go to the smaller C, then
    the lower kernel index. ``heuristic_mkl`` is tuned with l2 MKL on all
    kernels, the model the selection itself uses for scoring.
    """
    method = Method.parse(method) if isinstance(method, str) else method
    if not C_grid:
        raise HarnessError("C grid is empty")
    if bank is None:
        bank = method_bank(train_table, method, config)
    p = 2.0 if method.kind == "heuristic_mkl" else method.p
    single = method.kind in ("single_kernel", "concat_single_kernel")
    candidates = [[m] for m in range(len(bank))] if single else [list(range(len(bank)))]
    best = (-1.0, None, None)
    for C in sorted(C_grid):
        cv = CrossValidator(bank.grams, train_table.labels, train_table.n_classes, folds, C, p, **mkl_kwargs)
        for cand in candidates:
            score = cv(cand)
            if score > best[0]:
                best = (score, C, cand[0] if single else None)
    return float(best[1]), best[2]


# ---------------------------------------------------------------------------
# Benchmark


@dataclass
class BenchmarkConfig:
    methods: tuple = ("single:0", "concat", "mkl:1", "mkl:1.25", "mkl:2", "heuristic")
    fractions: tuple = DEFAULT_FRACTIONS
    repetitions: int = 100
    base_seed: int = 0
    C_grid: tuple = DEFAULT_C_GRID
    folds: int = 5
    bank: BankConfig = field(default_factory=BankConfig)
    emit_plots: bool = True
    mkl_options: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "methods": [Method.parse(m).label if isinstance(m, str) else m.label for m in self.methods],
            "fractions": list(self.fractions), "repetitions": self.repetitions, "base_seed": self.base_seed,
            "C_grid": list(self.C_grid), "folds": self.folds,
            "gamma_grid_rbf": list(self.bank.gamma_grid_rbf), "gamma_grid_chi2": list(self.bank.gamma_grid_chi2),
            "kernel_normalization": self.bank.normalization, "mkl_options": dict(self.mkl_options),
        }


def reported_weights(model: MulticlassModel) -> list[dict]:
    """Per-class kernel weights rescaled as if kernels had been Zien-Ong normalized.

    A kernel trained as ``K / s`` with weight ``b`` contributes the same as
    ``b * z / s`` times ``K / z``, where ``z`` is the Hilbert-space variance
    of the raw training Gram.
    """
    rows = []
    for k, mk in enumerate(model.models):
        if mk is None:
            continue
        for m, (spec, beta) in enumerate(zip(model.bank.specs, mk.betas)):
            scale = model.bank.scales[m]
            z = hilbert_variance(model.bank.grams[m] * scale)
            rows.append({"class": model.class_names[k], "spec": str(spec), "beta": float(beta * z / scale)})
    return rows


def _run_repetition(table: FeatureTable, methods: list[Method], fraction: float, repetition: int,
                    config: BenchmarkConfig, cached: dict) -> list[dict]:
    seed = config.base_seed + repetition
    manifest = stratified_split(table, fraction, seed)
    folds = make_folds(manifest, table, config.folds, seed)
    train = table.subset(manifest.train_indices)
    test = table.subset(manifest.test_indices)
    shared_bank = None
    tuned: dict = {}
    results = []
    for method in methods:
        key = (method.label, fraction, repetition)
        if key in cached:
            results.append(cached[key])
            continue
        rec = {"method": method.label, "fraction": fraction, "repetition": repetition, "seed": seed}
        try:
            if method.kind in ("mkl_lp", "heuristic_mkl"):
                if shared_bank is None:
                    shared_bank = method_bank(train, method, config.bank)
                bank = shared_bank
            else:
                bank = method_bank(train, method, config.bank)
            # l2 MKL on the shared bank is tuned once for both mkl_lp[p=2] and heuristic_mkl
            if method.kind in ("mkl_lp", "heuristic_mkl"):
                tuning_key = ("mkl", 2.0 if method.kind == "heuristic_mkl" else method.p)
            else:
                tuning_key = (method.label,)
            if tuning_key not in tuned:
                tuned[tuning_key] = select_hyperparameters(train, method, config.C_grid, folds, bank, config.bank,
                                                           **config.mkl_options)
            C, spec_index = tuned[tuning_key]
            model = train_one_vs_all(bank, train, C, method.p, method, folds,
                                     None if spec_index is None else [spec_index], **config.mkl_options)
            pred = predict_multiclass(model, test)
            rec.update(accuracy=accuracy(test.labels, pred), C=C, kernels=[str(s) for s in model.specs],
                       confusion=confusion_matrix(test.labels, pred, table.n_classes).tolist())
            if method.kind == "heuristic_mkl" and config.emit_plots:
                rec["curve"] = _iteration_curve(bank, train, test, model, config)
                rec["weights"] = reported_weights(model)
                rec["trace"] = model.trace.to_json(bank)
        except Exception as exc:  # recorded per repetition, the batch goes on
            log.warning("%s fraction=%s repetition=%d failed: %s", method.label, fraction, repetition, exc)
            rec.update(accuracy=None, error=f"{type(exc).__name__}: {exc}")
        results.append(rec)
    return results


def _iteration_curve(bank, train, test, model: MulticlassModel, config: BenchmarkConfig) -> list[float]:
    """Test accuracy of l2 MKL on the selection after step 1 and after each iteration."""
    curve = []
    for selection in model.trace.selections():
        if selection == list(model.trace.selected):
            sub = model
        else:
            sub = train_one_vs_all(bank, train, model.C, 2.0, "mkl_lp", spec_indices=selection, **config.mkl_options)
        curve.append(accuracy(test.labels, predict_multiclass(sub, test)))
    return curve


@dataclass
class BenchmarkReport:
    config: dict
    class_names: list
    results: list

    def cell(self, method: str, fraction: float) -> dict:
        accs = [r["accuracy"] for r in self.results
                if r["method"] == method and r["fraction"] == fraction and r.get("accuracy") is not None]
        mean = statistics.fmean(accs) if accs else float("nan")
        std = statistics.stdev(accs) if len(accs) > 1 else 0.0
        return {"mean": mean, "std": std, "repetitions": len(accs), "accuracies": accs}

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.results))

    @property
    def fractions(self) -> list[float]:
        return sorted({r["fraction"] for r in self.results})

    def summary(self) -> dict:
        return {m: {repr(f): {k: v for k, v in self.cell(m, f).items() if k != "accuracies"}
                    for f in self.fractions} for m in self.methods}

    def curve(self, fraction: float, method: str = "heuristic_mkl") -> list[float]:
        """Mean test accuracy per selection iteration (final value carried forward)."""
        curves = [r["curve"] for r in self.results
                  if r["method"] == method and r["fraction"] == fraction and r.get("curve")]
        if not curves:
            return []
        length = max(len(c) for c in curves)
        padded = np.array([c + [c[-1]] * (length - len(c)) for c in curves])
        return padded.mean(axis=0).tolist()

    def weights(self, fraction: float, method: str = "heuristic_mkl") -> list[dict]:
        """Mean reported weight per (class, kernel) over repetitions where it was selected."""
        acc: dict[tuple[str, str], list[float]] = {}
        for r in self.results:
            if r["method"] == method and r["fraction"] == fraction:
                for w in r.get("weights", []):
                    acc.setdefault((w["class"], w["spec"]), []).append(w["beta"])
        return [{"class": c, "spec": s, "beta": statistics.fmean(v)} for (c, s), v in sorted(acc.items())]

    def errors(self) -> list[dict]:
        return [r for r in self.results if r.get("error")]

    def to_json(self) -> dict:
        return {"config": self.config, "class_names": self.class_names, "summary": self.summary(),
                "results": self.results}

    @classmethod
    def from_json(cls, doc: dict) -> "BenchmarkReport":
        return cls(doc["config"], doc["class_names"], doc["results"])

    def table_rows(self) -> list[list[str]]:
        """Rows of method x fraction cells formatted ``mean (±std)`` in percent."""
        header = ["method"] + [f"{100 * f:g}%" for f in self.fractions]
        rows = [header]
        for m in self.methods:
            row = [m]
            for f in self.fractions:
                c = self.cell(m, f)
                row.append("n/a" if math.isnan(c["mean"]) else f"{100 * c['mean']:.2f} (±{100 * c['std']:.2f})")
            rows.append(row)
        return rows


def run_benchmark(dataset: FeatureTable, methods: Sequence[Method | str] | None = None,
                  fractions: Sequence[float] | None = None, repetitions: int | None = None,
                  base_seed: int | None = None, config: BenchmarkConfig | None = None,
                  cache_dir=None, jobs: int = 1) -> BenchmarkReport:
    """Repeated stratified-split evaluation of every method at every fraction.

    Repetition ``r`` uses seed ``base_seed + r`` for its split and folds.
    Features are L2-normalized per sample; banks, scales, hyperparameters and
    selections only ever see the training split. With ``cache_dir`` each
    finished (method, fraction, repetition) result is stored as JSON and
    reused on the next run.
    """
    config = config or BenchmarkConfig()
    overrides = {"methods": methods, "fractions": fractions, "repetitions": repetitions, "base_seed": base_seed}
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, tuple(value) if name in ("methods", "fractions") else value)
    if config.repetitions < 1:
        raise HarnessError("repetitions must be >= 1")
    if any(not 0 < f < 1 for f in config.fractions):
        raise HarnessError("fractions must lie in (0, 1)")
    parsed = [Method.parse(m) if isinstance(m, str) else m for m in config.methods]
    table = normalize_features(dataset)

    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    tasks = [(f, r) for f in config.fractions for r in range(config.repetitions)]
    cached_by_task = {t: _load_cached(cache, parsed, *t) for t in tasks} if cache else {t: {} for t in tasks}

    def finished(out):
        if cache:
            for rec in out:
                _store_cached(cache, rec)
        return out

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_repetition, table, parsed, f, r, config, cached_by_task[(f, r)])
                       for f, r in tasks]
            for fut in futures:
                fut.add_done_callback(lambda fu: finished(fu.result()))
            outputs = [fut.result() for fut in futures]
    else:
        outputs = [finished(_run_repetition(table, parsed, f, r, config, cached_by_task[(f, r)]))
                   for f, r in tasks]
    results = [rec for out in outputs for rec in out]
    doc_config = config.to_json()
    doc_config["stratified_splits"] = True
    return BenchmarkReport(doc_config, list(dataset.class_names), results)


def _cache_path(cache: Path, label: str, fraction: float, repetition: int) -> Path:
    safe = label.replace("[", "_").replace("]", "").replace("=", "").replace(":", "_")
    return cache / f"{safe}__{fraction!r}__{repetition}.json"


def _load_cached(cache: Path, methods: list[Method], fraction: float, repetition: int) -> dict:
    found = {}
    for m in methods:
        path = _cache_path(cache, m.label, fraction, repetition)
        if path.exists():
            rec = json.loads(path.read_text())
            if rec.get("accuracy") is not None:
                found[(m.label, fraction, repetition)] = rec
    return found


def _store_cached(cache: Path, rec: dict) -> None:
    path = _cache_path(cache, rec["method"], rec["fraction"], rec["repetition"])
    if not path.exists():
        path.write_text(json.dumps(rec))


# ---------------------------------------------------------------------------
# Model files


def write_multiclass_model(directory, model: MulticlassModel, provenance: dict | None = None) -> Path:
    """Store ``model.json`` plus one ``train_<view>.csv`` per view in ``directory``."""
    from .dataio import write_view

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = [" ".join(f"{k}={v}" for k, v in provenance.items())] if provenance else []
    n_train = model.bank.train_views[0].shape[0]
    ids = [f"t{i}" for i in range(n_train)]
    for f, view in enumerate(model.bank.train_views):
        write_view(directory / f"train_{f}.csv", ids, view, header)
    classes = []
    for mk in model.models:
        if mk is None:
            classes.append(None)
            continue
        classes.append({"betas": mk.betas.tolist(), "bias": mk.svm.bias, "alphas": mk.svm.alphas.tolist(),
                        "labels": mk.svm.labels.tolist(), "objective": mk.svm.objective,
                        "converged": bool(mk.converged and mk.svm.converged)})
    doc = {"provenance": provenance} if provenance else {}
    doc.update({
        "method": model.method.label, "p": model.p, "C": model.C, "class_names": list(model.class_names),
        "view_names": list(model.bank.view_names), "n_views": len(model.bank.train_views),
        "specs": [str(s) for s in model.bank.specs], "scales": model.bank.scales.tolist(),
        "normalization": model.bank.normalization, "classes": classes,
        "selection": model.trace.to_json(model.candidates) if model.trace is not None else None,
    })
    path = directory / "model.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_multiclass_model(directory) -> MulticlassModel:
    """Inverse of :func:`write_multiclass_model` (the selection trace is not restored)."""
    from .dataio import read_view
    from .svm import SvmModel

    directory = Path(directory)
    path = directory / "model.json"
    if not path.exists():
        raise HarnessError(f"no model.json in {directory}")
    doc = json.loads(path.read_text())
    views = []
    for f in range(doc["n_views"]):
        rows = read_view(directory / f"train_{f}.csv")
        views.append(np.vstack(list(rows.values())))
    specs = [KernelSpec.parse(s) for s in doc["specs"]]
    scales = np.array(doc["scales"], dtype=np.float64)
    bank = KernelBank(specs, [np.empty((0, 0))] * len(specs), tuple(views), tuple(doc["view_names"]),
                      scales, doc["normalization"])
    models = []
    for rec in doc["classes"]:
        if rec is None:
            models.append(None)
            continue
        svm = SvmModel(np.array(rec["alphas"]), float(rec["bias"]), np.array(rec["labels"]), doc["C"],
                       float(rec["objective"]), 0, rec["converged"])
        models.append(MklModel(specs, np.array(rec["betas"]), doc["p"], svm, np.zeros(len(specs))))
    label = doc["method"]
    kind = label.split("[")[0]
    if kind == "single_kernel":
        method = Method(kind, view=int(label[len("single_kernel[f"):-1]))
    elif kind == "mkl_lp":
        method = Method(kind, p=float(label[len("mkl_lp[p="):-1]))
    else:
        method = Method(kind)
    return MulticlassModel(method, tuple(doc["class_names"]), bank, models, doc["C"], doc["p"])
