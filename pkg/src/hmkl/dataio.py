"""Feature tables, CSV readers/writers, and seeded train/test splits.

All randomness goes through :class:`random.Random` (Mersenne Twister) seeded
with a single unsigned 64-bit integer, and shuffling uses its Fisher-Yates
``shuffle``. Both are part of the Python stdlib contract, so splits and folds
are identical across platforms.
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class FeatureTable:
    """Labeled samples described by one or more feature views.

    ``views[f]`` is an ``(N, d_f)`` float64 array; ``labels`` holds class
    indices into ``class_names``.
    """

    sample_ids: tuple[str, ...]
    labels: np.ndarray
    views: tuple[np.ndarray, ...]
    view_names: tuple[str, ...]
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        views = tuple(np.ascontiguousarray(v, dtype=np.float64) for v in self.views)
        n = len(self.sample_ids)
        if n < 1:
            raise DataError("feature table must contain at least one sample")
        if len(set(self.sample_ids)) != n:
            raise DataError("duplicate sample ids")
        if labels.shape != (n,):
            raise DataError(f"expected {n} labels, got {labels.shape}")
        if not views:
            raise DataError("feature table needs at least one view")
        if len(self.view_names) != len(views):
            raise DataError("view_names and views differ in length")
        for name, v in zip(self.view_names, views):
            if v.ndim != 2 or v.shape[0] != n or v.shape[1] < 1:
                raise DataError(f"view {name!r} has shape {v.shape}, expected ({n}, d>=1)")
            if not np.all(np.isfinite(v)):
                raise DataError(f"view {name!r} contains non-finite values")
        class_names = tuple(self.class_names)
        if not class_names:
            class_names = tuple(str(k) for k in range(int(labels.max()) + 1))
        if labels.min() < 0 or labels.max() >= len(class_names):
            raise DataError(f"labels must lie in [0, {len(class_names)})")
        for v in views:
            v.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "view_names", tuple(self.view_names))
        object.__setattr__(self, "class_names", class_names)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "FeatureTable":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureTable(
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            labels=self.labels[idx],
            views=tuple(v[idx] for v in self.views),
            view_names=self.view_names,
            class_names=self.class_names,
        )

    def map_views(self, fn) -> "FeatureTable":
        """Return a copy with ``fn`` applied row-wise to every view."""
        return FeatureTable(
            sample_ids=self.sample_ids,
            labels=self.labels,
            views=tuple(np.array([fn(row) for row in v]) for v in self.views),
            view_names=self.view_names,
            class_names=self.class_names,
        )


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    train_fraction: float
    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        for name in ("train_indices", "test_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class FoldAssignment:
    """Fold index for every training sample, aligned with ``train_indices``."""

    k: int
    fold_of: np.ndarray
    train_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("fold_of", "train_indices"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def splits(self):
        """Yield ``(fold, train_positions, held_out_positions)`` for non-empty folds."""
        positions = np.arange(len(self.fold_of))
        for fold in range(self.k):
            held = positions[self.fold_of == fold]
            if held.size == 0:
                continue
            yield fold, positions[self.fold_of != fold], held


# ---------------------------------------------------------------------------
# CSV input/output


def _data_rows(path: Path):
    """Yield ``(line_number, row)`` skipping ``#`` comment lines and blanks."""
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, next(csv.reader([line]))


def read_labels(label_path) -> tuple[list[str], list[str]]:
    """Return ``(sample_ids, class_name_per_sample)`` from an ``id,label`` file."""
    path = Path(label_path)
    rows = _data_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty label file") from None
    if [h.strip() for h in header] != ["id", "label"]:
        raise DataError(f"{path}: header must be 'id,label'")
    ids, names = [], []
    for lineno, row in rows:
        if len(row) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        ids.append(row[0].strip())
        names.append(row[1].strip())
    return ids, names


def read_view(view_path) -> dict[str, np.ndarray]:
    """Read an ``id,v0,...`` view file into a mapping id -> row vector."""
    path = Path(view_path)
    rows = _data_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty view file") from None
    if not header or header[0].strip() != "id" or len(header) < 2:
        raise DataError(f"{path}: header must start with 'id' followed by >=1 value column")
    dim = len(header) - 1
    out: dict[str, np.ndarray] = {}
    for row_number, (lineno, row) in enumerate(rows, start=1):
        if len(row) != dim + 1:
            raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(row) - 1}")
        sid = row[0].strip()
        try:
            values = np.array([float(x) for x in row[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(values)):
            raise DataError(f"{path}:{lineno}: non-finite value in data row {row_number} (id {sid!r})")
        if sid in out:
            raise DataError(f"{path}:{lineno}: duplicate id {sid!r}")
        out[sid] = values
    return out


def load_feature_table(paths: Sequence, label_path, view_names: Sequence[str] | None = None) -> FeatureTable:
    """Load one CSV per view plus a label file, ordered as the label file.

    Class indices are assigned by order of first appearance in the label file.
    """
    ids, names = read_labels(label_path)
    class_names: list[str] = []
    index_of: dict[str, int] = {}
    for name in names:
        if name not in index_of:
            index_of[name] = len(class_names)
            class_names.append(name)
    labels = np.array([index_of[n] for n in names], dtype=np.int64)

    views = []
    for p in paths:
        rows = read_view(p)
        missing = [sid for sid in ids if sid not in rows]
        if missing:
            raise DataError(f"{p}: missing sample id {missing[0]!r} present in labels")
        extra = [sid for sid in rows if sid not in set(ids)]
        if extra:
            raise DataError(f"{p}: unknown sample id {extra[0]!r} not in label file")
        views.append(np.vstack([rows[sid] for sid in ids]))
    if view_names is None:
        view_names = [Path(p).stem for p in paths]
    return FeatureTable(tuple(ids), labels, tuple(views), tuple(view_names), tuple(class_names))


def write_view(path, sample_ids: Sequence[str], matrix: np.ndarray, header_lines: Sequence[str] = ()) -> None:
    """Write a view CSV; floats use ``repr`` so reading back is bit-exact."""
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"v{j}" for j in range(matrix.shape[1])])
        for sid, row in zip(sample_ids, matrix):
            writer.writerow([sid] + [repr(float(x)) for x in row])


def write_labels(path, table: FeatureTable, header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        for sid, lab in zip(table.sample_ids, table.labels):
            writer.writerow([sid, table.class_names[lab]])


def write_feature_table(directory, table: FeatureTable, header_lines: Sequence[str] = ()) -> list[Path]:
    """Write ``labels.csv`` and one ``<view>.csv`` per view; return the view paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_labels(directory / "labels.csv", table, header_lines)
    paths = []
    for name, v in zip(table.view_names, table.views):
        p = directory / f"{name}.csv"
        write_view(p, table.sample_ids, v, header_lines)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Splits and folds


def _as_fraction(fraction: float) -> Fraction:
    return Fraction(fraction).limit_denominator(10**6)


def train_count(class_size: int, fraction: float) -> int:
    """Round-half-up of ``fraction * class_size`` clamped to ``[1, class_size - 1]``."""
    exact = _as_fraction(fraction) * class_size
    n = math.floor(exact + Fraction(1, 2))
    return min(max(n, 1), class_size - 1)


def _class_members(labels: np.ndarray) -> dict[int, list[int]]:
    members: dict[int, list[int]] = {}
    for i, lab in enumerate(labels.tolist()):
        members.setdefault(lab, []).append(i)
    return dict(sorted(members.items()))


def stratified_split(table: FeatureTable, fraction: float, seed: int) -> SplitManifest:
    if not 0.0 < fraction < 1.0:
        raise DataError(f"train fraction must lie in (0, 1), got {fraction}")
    rng = random.Random(int(seed))
    train, test = [], []
    for cls, members in _class_members(table.labels).items():
        if len(members) < 2:
            raise DataError(f"class {table.class_names[cls]!r} has {len(members)} sample; cannot stratify")
        members = list(members)
        rng.shuffle(members)
        n_train = train_count(len(members), fraction)
        train.extend(members[:n_train])
        test.extend(members[n_train:])
    return SplitManifest(int(seed), float(fraction), np.sort(train), np.sort(test))


def stratified_folds(labels: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Assign each position of ``labels`` to one of ``k`` class-stratified folds.

    Within a class the members are shuffled and dealt round-robin, so classes
    smaller than ``k`` occupy folds ``0 .. size-1``.
    """
    if k < 2:
        raise DataError(f"fold count must be >= 2, got {k}")
    rng = random.Random(int(seed))
    fold_of = np.empty(len(labels), dtype=np.int64)
    for members in _class_members(np.asarray(labels)).values():
        members = list(members)
        rng.shuffle(members)
        for pos, i in enumerate(members):
            fold_of[i] = pos % k
    return fold_of


def make_folds(manifest: SplitManifest, table: FeatureTable, k: int, seed: int) -> FoldAssignment:
    labels = table.labels[manifest.train_indices]
    return FoldAssignment(k, stratified_folds(labels, k, seed), manifest.train_indices)


def write_manifest(path, manifest: SplitManifest, table: FeatureTable, header_lines: Sequence[str] = ()) -> None:
    roles = {int(i): "train" for i in manifest.train_indices}
    roles.update({int(i): "test" for i in manifest.test_indices})
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# seed={manifest.seed} fraction={manifest.train_fraction!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "role"])
        for i, sid in enumerate(table.sample_ids):
            writer.writerow([sid, roles[i]])


def read_manifest(path, table: FeatureTable) -> SplitManifest:
    path = Path(path)
    seed, fraction = None, None
    with open(path) as fh:
        comments = [line for line in fh if line.startswith("#")]
    for line in comments:
        tokens = dict(t.partition("=")[::2] for t in line[1:].split())
        if "seed" in tokens and "fraction" in tokens:
            seed, fraction = int(tokens["seed"]), float(tokens["fraction"])
    if seed is None or fraction is None:
        raise DataError(f"{path}: missing '# seed=<u64> fraction=<p>' comment line")
    position = {sid: i for i, sid in enumerate(table.sample_ids)}
    train, test = [], []
    rows = _data_rows(path)
    next(rows)
    for lineno, (sid, role) in rows:
        if sid not in position:
            raise DataError(f"{path}:{lineno}: unknown sample id {sid!r}")
        if role not in ("train", "test"):
            raise DataError(f"{path}:{lineno}: role must be train or test, got {role!r}")
        (train if role == "train" else test).append(position[sid])
    return SplitManifest(seed, fraction, np.sort(train), np.sort(test))
