"""Greedy kernel-subset selection scored by cross-validated l2-norm MKL.

Step 1 picks the best kernel of every feature view. Each following iteration
tries every unselected kernel on top of the current selection S, keeps per
view the best one that strictly improves on S as a candidate, then scores
S plus every subset of the candidates and adds the best subset. The search
stops when no candidate exists or the best subset is empty.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import FeatureTable, FoldAssignment
from .kernels import KernelBank, build_bank, normalize_by_hilbert_std
from .mkl import one_vs_all_scores, train_one_vs_all_mkl

log = logging.getLogger(__name__)

TERMINATION_REASONS = ("empty_candidates", "empty_best_subset", "all_selected")


class CrossValidator:
    """Memoized k-fold accuracy of one-vs-all MKL on subsets of a kernel bank.

    Scores are pooled accuracy (correct / total over all held-out folds).
    ``evaluate_count`` counts distinct subsets actually trained;
    ``classifier_train_count`` counts binary MKL trainings.
    """

    def __init__(self, grams: Sequence[np.ndarray], labels, n_classes: int, folds: FoldAssignment,
                 C: float, p: float = 2.0, **mkl_kwargs):
        self.grams = list(grams)
        self.labels = np.asarray(labels)
        self.n_classes = n_classes
        self.folds = folds
        self.C = C
        self.p = p
        self.mkl_kwargs = mkl_kwargs
        self.memo: dict[tuple[int, ...], float] = {}
        self.evaluate_count = 0
        self.classifier_train_count = 0
        self.warnings: list[str] = []
        self._splits = list(folds.splits())
        self._blocks: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        for fold, tr, _ in self._splits:
            present = set(self.labels[tr].tolist())
            for k in range(n_classes):
                if k not in present and k in set(self.labels.tolist()):
                    self.warnings.append(f"fold {fold}: class {k} has no training sample; its binary problem is skipped")

    def _block(self, fold_pos: int, m: int):
        key = (fold_pos, m)
        if key not in self._blocks:
            _, tr, te = self._splits[fold_pos]
            g = self.grams[m]
            self._blocks[key] = (np.ascontiguousarray(g[np.ix_(tr, tr)]), np.ascontiguousarray(g[np.ix_(te, tr)]))
        return self._blocks[key]

    def __call__(self, indices: Sequence[int]) -> float:
        key = tuple(sorted(set(int(i) for i in indices)))
        if not key:
            raise ValueError("cannot evaluate an empty kernel set")
        if key in self.memo:
            return self.memo[key]
        correct = total = 0
        for pos, (_, tr, te) in enumerate(self._splits):
            blocks = [self._block(pos, m) for m in key]
            y_tr = self.labels[tr]
            models = train_one_vs_all_mkl(np.stack([b[0] for b in blocks]), y_tr, self.n_classes, self.C, self.p,
                                          specs=list(key), check_symmetric=False, **self.mkl_kwargs)
            self.classifier_train_count += sum(m is not None for m in models)
            scores = one_vs_all_scores(models, np.stack([b[1] for b in blocks]), present_class=int(y_tr[0]))
            correct += int(np.sum(np.argmax(scores, axis=1) == self.labels[te]))
            total += len(te)
        score = correct / total
        self.memo[key] = score
        self.evaluate_count += 1
        return score


def evaluate_kernel_set(specs, train_table: FeatureTable, folds: FoldAssignment, C: float, p: float = 2.0,
                        normalize: str | None = "variance") -> float:
    """Cross-validated accuracy of one-vs-all MKL over the given kernel specs."""
    bank = build_bank(train_table, specs=list(specs))
    if normalize:
        bank = normalize_by_hilbert_std(bank, normalize)
    cv = CrossValidator(bank.grams, train_table.labels, train_table.n_classes, folds, C, p)
    return cv(range(len(bank)))


@dataclass
class SelectionTrace:
    iterations: list[dict] = field(default_factory=list)
    evaluate_count: int = 0
    classifier_train_count: int = 0
    terminated_reason: str | None = None
    selected: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def scores(self) -> list[float]:
        """Best-so-far CV accuracy after step 1 and after each iteration."""
        return [it["score"] for it in self.iterations]

    def selections(self) -> list[list[int]]:
        return [it["S"] for it in self.iterations]

    def to_json(self, bank: KernelBank | None = None) -> dict:
        def name(i):
            return str(bank.specs[i]) if bank is not None else i

        def names(idx):
            return [name(i) for i in idx]

        iterations = []
        for it in self.iterations:
            rec = {"iteration": it["iteration"], "S": names(it["S"]), "score": it["score"]}
            if it["iteration"] == 0:
                rec["singles"] = [{"kernel": name(i), "score": s} for i, s in it["singles"]]
            else:
                rec["score_before"] = it["score_before"]
                rec["pools"] = {str(f): names(pool) for f, pool in it["pools"].items()}
                rec["additions"] = [{"kernel": name(i), "score": s} for i, s in it["additions"]]
                rec["C"] = names(it["C"])
                rec["subsets"] = [{"B": names(b), "score": s} for b, s in it["subsets"]]
                rec["B_star"] = names(it["B_star"])
            rec["evaluate_count"] = it["evaluate_count"]
            iterations.append(rec)
        return {
            "iterations": iterations,
            "selected": names(self.selected),
            "evaluate_count": self.evaluate_count,
            "classifier_train_count": self.classifier_train_count,
            "terminated_reason": self.terminated_reason,
            "warnings": self.warnings,
        }


def select_kernels(bank: KernelBank, train_table: FeatureTable, folds: FoldAssignment, C: float,
                   p: float = 2.0, evaluator: CrossValidator | None = None, **mkl_kwargs):
    """Run the greedy selection on ``bank`` (built on the training split only).

    Returns ``(selected bank indices, SelectionTrace)``. Ties resolve to the
    lower view, then the lower kernel index, then the smaller subset.
    """
    if len(bank) == 0:
        raise ValueError("kernel bank is empty")
    if evaluator is None:
        evaluator = CrossValidator(bank.grams, train_table.labels, train_table.n_classes, folds, C, p, **mkl_kwargs)
    evaluate = evaluator
    views = sorted({s.view for s in bank.specs})
    by_view = {f: [m for m, s in enumerate(bank.specs) if s.view == f] for f in views}
    trace = SelectionTrace()

    # step 1: best single kernel per view
    selected: list[int] = []
    singles = []
    for f in views:
        best_m, best_score = None, -np.inf
        for m in by_view[f]:
            score = evaluate([m])
            singles.append((m, score))
            if score > best_score:
                best_m, best_score = m, score
        selected.append(best_m)
    current = evaluate(selected)
    trace.iterations.append({"iteration": 0, "S": sorted(selected), "score": current, "singles": singles,
                             "evaluate_count": evaluator.evaluate_count})

    iteration = 0
    while True:
        iteration += 1
        chosen = set(selected)
        pools = {f: [m for m in by_view[f] if m not in chosen] for f in views}
        pools = {f: pool for f, pool in pools.items() if pool}
        if not pools:
            trace.terminated_reason = "all_selected"
            break

        # steps 2 and 3: score each addition, keep the best improving kernel per view
        additions = []
        candidates = []
        for f, pool in pools.items():
            best_m, best_score = None, -np.inf
            for m in pool:
                score = evaluate(selected + [m])
                additions.append((m, score))
                if score > best_score:
                    best_m, best_score = m, score
            if best_score > current:
                candidates.append(best_m)

        record = {"iteration": iteration, "score_before": current, "pools": pools, "additions": additions,
                  "C": list(candidates), "subsets": [], "B_star": []}
        if not candidates:
            record.update(S=sorted(selected), score=current, evaluate_count=evaluator.evaluate_count)
            trace.iterations.append(record)
            trace.terminated_reason = "empty_candidates"
            break

        # step 4: best subset of the candidates (empty subset = keep S)
        best_subset: tuple[int, ...] = ()
        best_score = current
        record["subsets"].append(([], current))
        for size in range(1, len(candidates) + 1):
            for subset in itertools.combinations(sorted(candidates), size):
                score = evaluate(selected + list(subset))
                record["subsets"].append((list(subset), score))
                if score > best_score:
                    best_subset, best_score = subset, score
        record["B_star"] = list(best_subset)
        if not best_subset:
            record.update(S=sorted(selected), score=current, evaluate_count=evaluator.evaluate_count)
            trace.iterations.append(record)
            trace.terminated_reason = "empty_best_subset"
            break
        selected = selected + list(best_subset)
        current = best_score
        record.update(S=sorted(selected), score=current, evaluate_count=evaluator.evaluate_count)
        trace.iterations.append(record)

    trace.selected = sorted(selected)
    trace.evaluate_count = evaluator.evaluate_count
    trace.classifier_train_count = evaluator.classifier_train_count
    trace.warnings = list(evaluator.warnings)
    return trace.selected, trace


def write_trace(path, trace: SelectionTrace, bank: KernelBank | None = None, provenance: dict | None = None) -> None:
    doc = {"provenance": provenance} if provenance else {}
    doc.update(trace.to_json(bank))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
