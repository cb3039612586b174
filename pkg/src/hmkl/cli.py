"""Batch command-line frontend: ``hmkl <subcommand> --config run.cfg``.

Exit codes: 0 on success, 2 for configuration or input validation errors,
1 for any other failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (DataError, FeatureTable, SplitManifest, load_feature_table, make_folds, stratified_split,
                     write_manifest, write_view)
from .features import (FeatureError, bag_of_dense_lbp, build_codebook, lbp_of_dense_moments, load_image,
                       patch_descriptors, read_codebook, scan_image_folder, write_codebook)
from .harness import (DEFAULT_C_GRID, DEFAULT_FRACTIONS, BankConfig, BenchmarkConfig, BenchmarkReport, HarnessError,
                      Method, accuracy, method_bank, normalize_features, predict_multiclass, read_multiclass_model,
                      run_benchmark, select_hyperparameters, train_one_vs_all, write_multiclass_model)
from .heuristic import write_trace
from .kernels import DEFAULT_CHI2_GAMMAS, DEFAULT_RBF_GAMMAS, GramCache, KernelError
from .synthetic import BENCHMARK_DATASET, make_multiview_dataset

log = logging.getLogger("hmkl")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
DESCRIPTORS = ("moments", "bag")


class ConfigError(ValueError):
    pass


def _floats(text: str, name: str) -> tuple[float, ...]:
    try:
        values = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{name}: expected a list of numbers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{name}: list must not be empty")
    return values


def _words(text: str) -> list[str]:
    return [x for x in text.replace(",", " ").split() if x]


@dataclass
class RunConfig:
    """Effective settings after merging the config file with command-line flags."""

    source: str = ""
    base_dir: Path = Path(".")
    labels: Path | None = None
    views: list[Path] = field(default_factory=list)
    view_names: list[str] | None = None
    images: Path | None = None
    synthetic: str | None = None
    w: int = 16
    step: int = 16
    descriptors: tuple = DESCRIPTORS
    codebook_size: int = 1024
    codebook_seed: int = 0
    codebook_max_iter: int = 100
    codebook: Path | None = None
    rbf_gammas: tuple = DEFAULT_RBF_GAMMAS
    chi2_gammas: tuple = DEFAULT_CHI2_GAMMAS
    normalization: str = "variance"
    C_grid: tuple = DEFAULT_C_GRID
    C: float | None = None
    p: float = 2.0
    folds: int = 5
    method: str = "heuristic"
    fraction: float | None = None
    methods: tuple = ("single:0", "concat", "mkl:1", "mkl:1.25", "mkl:2", "heuristic")
    fractions: tuple = DEFAULT_FRACTIONS
    repetitions: int = 100
    seed: int = 0
    model: Path | None = None
    report: Path | None = None
    out: Path = Path("out")
    emit_plots: bool = False
    jobs: int = 1

    def echo(self) -> dict:
        """Settings as plain JSON values (paths as given), in a fixed order."""
        out = {}
        for key, value in self.__dict__.items():
            if key in ("source", "base_dir", "jobs"):
                continue
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, (list, tuple)):
                value = [str(v) if isinstance(v, Path) else v for v in value]
            out[key] = value
        return out

    def digest(self, exclude=()) -> str:
        echo = {k: v for k, v in self.echo().items() if k not in exclude}
        return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"tool": "hmkl", "version": __version__, "config_hash": self.digest(), "seed": self.seed}

    def header_lines(self) -> list[str]:
        return [" ".join(f"{k}={v}" for k, v in self.provenance().items())]

    def bank_config(self) -> BankConfig:
        return BankConfig(tuple(self.rbf_gammas), tuple(self.chi2_gammas), self.normalization)


def load_config(path: str | None, args: argparse.Namespace | None = None) -> RunConfig:
    """Parse a ``key = value`` config with ``[section]`` headers and apply flag overrides."""
    cfg = RunConfig()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg.source = p.read_text()
        try:
            parser.read_string(cfg.source, source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
        cfg.base_dir = p.resolve().parent

    def get(section, key):
        return parser.get(section, key, fallback=None)

    def path_of(text):
        q = Path(text.strip())
        return q if q.is_absolute() else cfg.base_dir / q

    def number(section, key, kind):
        text = get(section, key)
        if text is None:
            return None
        try:
            return kind(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {text!r}") from None

    known = {
        "data": {"labels", "views", "view_names", "images", "synthetic"},
        "features": {"w", "step", "descriptors", "codebook_size", "codebook_seed", "codebook_max_iter", "codebook"},
        "kernels": {"rbf_gammas", "chi2_gammas", "normalization"},
        "train": {"c_grid", "c", "p", "folds", "method", "fraction"},
        "benchmark": {"methods", "fractions", "repetitions", "seed", "emit_plots"},
        "predict": {"model"},
        "report": {"input"},
        "output": {"dir"},
    }
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - known[section]
        if unknown:
            raise ConfigError(f"[{section}]: unknown key {sorted(unknown)[0]!r}")

    if get("data", "labels"):
        cfg.labels = path_of(get("data", "labels"))
    if get("data", "views"):
        cfg.views = [path_of(v) for v in _words(get("data", "views"))]
    if get("data", "view_names"):
        cfg.view_names = _words(get("data", "view_names"))
    if get("data", "images"):
        cfg.images = path_of(get("data", "images"))
    cfg.synthetic = get("data", "synthetic")
    for key in ("w", "step", "codebook_size", "codebook_seed", "codebook_max_iter"):
        value = number("features", key, int)
        if value is not None:
            setattr(cfg, key, value)
    if get("features", "descriptors"):
        cfg.descriptors = tuple(_words(get("features", "descriptors")))
    if get("features", "codebook"):
        cfg.codebook = path_of(get("features", "codebook"))
    if get("kernels", "rbf_gammas"):
        cfg.rbf_gammas = _floats(get("kernels", "rbf_gammas"), "rbf_gammas")
    if get("kernels", "chi2_gammas"):
        cfg.chi2_gammas = _floats(get("kernels", "chi2_gammas"), "chi2_gammas")
    if get("kernels", "normalization"):
        cfg.normalization = get("kernels", "normalization").strip()
    if get("train", "c_grid"):
        cfg.C_grid = _floats(get("train", "c_grid"), "C_grid")
    cfg.C = number("train", "c", float)
    for key, kind in (("p", float), ("folds", int), ("fraction", float)):
        value = number("train", key, kind)
        if value is not None:
            setattr(cfg, key, value)
    if get("train", "method"):
        cfg.method = get("train", "method").strip()
    if get("benchmark", "methods"):
        cfg.methods = tuple(_words(get("benchmark", "methods")))
    if get("benchmark", "fractions"):
        cfg.fractions = _floats(get("benchmark", "fractions"), "fractions")
    for key in ("repetitions", "seed"):
        value = number("benchmark", key, int)
        if value is not None:
            setattr(cfg, key, value)
    if get("benchmark", "emit_plots"):
        cfg.emit_plots = parser.getboolean("benchmark", "emit_plots")
    if get("predict", "model"):
        cfg.model = path_of(get("predict", "model"))
    if get("report", "input"):
        cfg.report = path_of(get("report", "input"))
    if get("output", "dir"):
        cfg.out = path_of(get("output", "dir"))
    elif path:
        cfg.out = cfg.base_dir / "out"

    if args is not None:
        if args.seed is not None:
            cfg.seed = args.seed
        if args.p is not None:
            cfg.p = args.p
        if args.fraction is not None:
            cfg.fraction = args.fraction
            cfg.fractions = (args.fraction,)
        if args.out is not None:
            cfg.out = Path(args.out)
        if args.emit_plots:
            cfg.emit_plots = True
        if args.no_heuristic:
            cfg.method = f"mkl:{cfg.p!r}"
            cfg.methods = tuple(m for m in cfg.methods if not m.startswith("heuristic"))
        cfg.jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.p < 1:
        raise ConfigError(f"p must be >= 1, got {cfg.p}")
    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg.seed}")
    if cfg.folds < 2:
        raise ConfigError(f"folds must be >= 2, got {cfg.folds}")
    if cfg.repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {cfg.repetitions}")
    if cfg.w < 1 or cfg.step < 1 or cfg.codebook_size < 1:
        raise ConfigError("w, step and codebook_size must be positive")
    if cfg.normalization not in ("variance", "std", "none"):
        raise ConfigError(f"normalization must be variance, std or none, got {cfg.normalization!r}")
    if any(c <= 0 for c in cfg.C_grid) or (cfg.C is not None and cfg.C <= 0):
        raise ConfigError("C values must be > 0")
    if any(g <= 0 for g in cfg.rbf_gammas + cfg.chi2_gammas):
        raise ConfigError("kernel widths must be > 0")
    fractions = cfg.fractions + ((cfg.fraction,) if cfg.fraction is not None else ())
    if any(not 0 < f < 1 for f in fractions):
        raise ConfigError("fractions must lie in (0, 1)")
    bad = [d for d in cfg.descriptors if d not in DESCRIPTORS]
    if bad:
        raise ConfigError(f"unknown descriptor {bad[0]!r} (choose from {', '.join(DESCRIPTORS)})")
    if cfg.synthetic not in (None, "multiview"):
        raise ConfigError(f"unknown synthetic dataset {cfg.synthetic!r}")
    try:
        Method.parse(cfg.method)
        for m in cfg.methods:
            Method.parse(m)
    except (HarnessError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for path in [cfg.labels, cfg.images, cfg.codebook, *cfg.views]:
        if path is not None and not path.exists():
            raise ConfigError(f"path not found: {path}")


# ---------------------------------------------------------------------------
# Helpers


def load_dataset(cfg: RunConfig) -> FeatureTable:
    if cfg.synthetic == "multiview":
        return make_multiview_dataset(seed=cfg.seed, **BENCHMARK_DATASET)
    if cfg.labels is None or not cfg.views:
        raise ConfigError("[data] needs 'labels' and 'views' (or 'synthetic = multiview')")
    return load_feature_table(cfg.views, cfg.labels, cfg.view_names)


def training_split(cfg: RunConfig, table: FeatureTable) -> SplitManifest:
    """Split by ``fraction`` when given; otherwise every sample is a training sample."""
    if cfg.fraction is None:
        return SplitManifest(cfg.seed, 1.0, np.arange(table.n_samples), np.zeros(0, dtype=np.int64))
    return stratified_split(table, cfg.fraction, cfg.seed)


def write_json(path: Path, cfg: RunConfig, doc: dict) -> None:
    out = {"provenance": cfg.provenance()}
    out.update(doc)
    path.write_text(json.dumps(out, indent=2) + "\n")


def write_csv(path: Path, cfg: RunConfig, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in cfg.header_lines():
            fh.write(f"# {line}\n")
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _image_items(cfg: RunConfig):
    if cfg.images is None:
        raise ConfigError("[data] images is required")
    return scan_image_folder(cfg.images)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_extract(cfg: RunConfig) -> int:
    items = _image_items(cfg)
    codebook = None
    if "bag" in cfg.descriptors:
        if cfg.codebook is None:
            raise ConfigError("descriptor 'bag' needs [features] codebook (build one with 'hmkl codebook')")
        codebook = read_codebook(cfg.codebook)
    cfg.out.mkdir(parents=True, exist_ok=True)
    ids = [sid for sid, _, _ in items]
    moments, bags = [], []
    for sid, _, path in items:
        image = load_image(path)
        if "moments" in cfg.descriptors:
            moments.append(lbp_of_dense_moments(image, cfg.w))
        if codebook is not None:
            bags.append(bag_of_dense_lbp(image, codebook, cfg.w, cfg.step))
    header = cfg.header_lines()
    with open(cfg.out / "labels.csv", "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"])
        writer.writerows([sid, cls] for sid, cls, _ in items)
    if moments:
        write_view(cfg.out / "lbp_moments.csv", ids, np.array(moments), header)
    if bags:
        write_view(cfg.out / "bag_lbp.csv", ids, np.array(bags), header)
    print(f"extracted {len(items)} images into {cfg.out}")
    return EXIT_OK


def cmd_codebook(cfg: RunConfig) -> int:
    items = _image_items(cfg)
    if cfg.fraction is not None:
        # only images of the training split feed the codebook
        classes = sorted({cls for _, cls, _ in items})
        labels = np.array([classes.index(cls) for _, cls, _ in items])
        table = FeatureTable(tuple(sid for sid, _, _ in items), labels, (np.zeros((len(items), 1)),), ("none",),
                             tuple(classes))
        manifest = stratified_split(table, cfg.fraction, cfg.seed)
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_manifest(cfg.out / "codebook_split.csv", manifest, table, cfg.header_lines())
        items = [items[i] for i in manifest.train_indices]
    descriptors = np.vstack([patch_descriptors(load_image(path), cfg.w, cfg.step) for _, _, path in items])
    if descriptors.shape[0] < cfg.codebook_size:
        raise ConfigError(f"codebook_size {cfg.codebook_size} exceeds the {descriptors.shape[0]} available patches")
    codebook = build_codebook(descriptors, cfg.codebook_size, cfg.codebook_seed, cfg.codebook_max_iter)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "codebook.csv"
    write_codebook(path, codebook, cfg.header_lines())
    print(f"codebook with {codebook.size} centers from {descriptors.shape[0]} patches written to {path}")
    return EXIT_OK


def _fit(cfg: RunConfig, method: Method):
    table = load_dataset(cfg)
    manifest = training_split(cfg, table)
    train = normalize_features(table).subset(manifest.train_indices)
    folds = make_folds(manifest, table, cfg.folds, cfg.seed)
    bank = method_bank(train, method, cfg.bank_config())
    if cfg.C is not None:
        C, spec_index = cfg.C, None
        if method.kind in ("single_kernel", "concat_single_kernel"):
            _, spec_index = select_hyperparameters(train, method, (cfg.C,), folds, bank, cfg.bank_config())
    else:
        C, spec_index = select_hyperparameters(train, method, cfg.C_grid, folds, bank, cfg.bank_config())
    model = train_one_vs_all(bank, train, C, method.p, method, folds,
                             None if spec_index is None else [spec_index])
    return table, manifest, bank, model


def _write_fit(cfg: RunConfig, table, manifest, bank, model) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.fraction is not None:
        write_manifest(cfg.out / "split.csv", manifest, table, cfg.header_lines())
    if model.trace is not None:
        write_trace(cfg.out / "trace.json", model.trace, bank, cfg.provenance())
    with open(cfg.out / "selected.txt", "w") as fh:
        for line in cfg.header_lines():
            fh.write(f"# {line}\n")
        fh.write(f"# method={model.method.label} C={model.C!r} p={model.p!r}\n")
        for spec in model.specs:
            fh.write(f"{spec}\n")
    write_multiclass_model(cfg.out / "model", model, cfg.provenance())


def cmd_select(cfg: RunConfig) -> int:
    method = Method.parse(cfg.method)
    if method.kind not in ("heuristic_mkl", "mkl_lp"):
        method = Method("heuristic_mkl")
    if method.kind == "mkl_lp":
        method = Method("mkl_lp", p=cfg.p)
    table, manifest, bank, model = _fit(cfg, method)
    _write_fit(cfg, table, manifest, bank, model)
    print(f"{model.method.label}: C={model.C:g}, {len(model.specs)} kernels selected: "
          + " ".join(str(s) for s in model.specs))
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    method = Method.parse(cfg.method)
    if method.kind == "mkl_lp":
        method = Method("mkl_lp", p=cfg.p)
    table, manifest, bank, model = _fit(cfg, method)
    _write_fit(cfg, table, manifest, bank, model)
    print(f"trained {model.method.label} (C={model.C:g}, {len(model.specs)} kernels) into {cfg.out / 'model'}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    model_dir = cfg.model or cfg.out / "model"
    model = read_multiclass_model(model_dir)
    table = load_dataset(cfg)
    if cfg.fraction is not None:
        rows = stratified_split(table, cfg.fraction, cfg.seed).test_indices
    else:
        rows = np.arange(table.n_samples)
    subset = normalize_features(table).subset(rows)
    pred = predict_multiclass(model, subset)
    names = list(model.class_names)
    cfg.out.mkdir(parents=True, exist_ok=True)
    out_rows = [["id", "predicted", "label"]]
    for sid, k, y in zip(subset.sample_ids, pred, subset.labels):
        out_rows.append([sid, names[k], subset.class_names[y]])
    write_csv(cfg.out / "predictions.csv", cfg, out_rows)
    truth = np.array([names.index(subset.class_names[y]) if subset.class_names[y] in names else -1
                      for y in subset.labels])
    print(f"predicted {len(pred)} samples; accuracy {100 * accuracy(truth, pred):.2f}%")
    return EXIT_OK


def _write_report_files(cfg: RunConfig, report: BenchmarkReport) -> list[Path]:
    written = [cfg.out / "report.csv"]
    write_csv(written[0], cfg, report.table_rows())
    if cfg.emit_plots:
        for f in report.fractions:
            curve = report.curve(f)
            if curve:
                path = cfg.out / f"fig3_{f!r}.csv"
                write_csv(path, cfg, [["iteration", "accuracy"]] + [[i, repr(a)] for i, a in enumerate(curve)])
                written.append(path)
            weights = report.weights(f)
            if weights:
                path = cfg.out / f"fig2_{f!r}.csv"
                write_csv(path, cfg, [["class", "spec", "beta"]]
                          + [[w["class"], w["spec"], repr(w["beta"])] for w in weights])
                written.append(path)
    return written


def cmd_benchmark(cfg: RunConfig) -> int:
    table = load_dataset(cfg)
    bench = BenchmarkConfig(methods=tuple(cfg.methods), fractions=tuple(cfg.fractions),
                            repetitions=cfg.repetitions, base_seed=cfg.seed, C_grid=tuple(cfg.C_grid),
                            folds=cfg.folds, bank=cfg.bank_config(), emit_plots=cfg.emit_plots)
    # cached results stay valid while everything but the repetition count is unchanged
    key = cfg.digest(exclude=("repetitions", "out", "model", "report")) + "-" + GramCache.table_hash(table)
    cache = cfg.out / "cache" / key
    report = run_benchmark(table, config=bench, cache_dir=cache, jobs=cfg.jobs)
    cfg.out.mkdir(parents=True, exist_ok=True)
    doc = report.to_json()
    doc["config"]["run"] = cfg.echo()
    write_json(cfg.out / "report.json", cfg, doc)
    written = _write_report_files(cfg, report)
    for row in report.table_rows():
        print("  ".join(row))
    for err in report.errors():
        print(f"error: {err['method']} fraction={err['fraction']} repetition={err['repetition']}: {err['error']}",
              file=sys.stderr)
    print("wrote " + ", ".join(str(p) for p in [cfg.out / "report.json"] + written))
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    path = cfg.report or cfg.out / "report.json"
    if not path.exists():
        raise ConfigError(f"report not found: {path}")
    report = BenchmarkReport.from_json(json.loads(path.read_text()))
    cfg.out.mkdir(parents=True, exist_ok=True)
    written = _write_report_files(cfg, report)
    for row in report.table_rows():
        print("  ".join(row))
    print("wrote " + ", ".join(str(p) for p in written))
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "codebook": cmd_codebook, "select": cmd_select, "train": cmd_train,
            "predict": cmd_predict, "benchmark": cmd_benchmark, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmkl", description="Heuristic multiple kernel learning pipeline.")
    parser.add_argument("--version", action="version", version=f"hmkl {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (key = value with [section] headers)")
    common.add_argument("--seed", type=int, help="base seed for splits, folds and repetitions")
    common.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    common.add_argument("--emit-plots", action="store_true", help="write weight and iteration-curve CSVs")
    common.add_argument("--no-heuristic", action="store_true", help="use plain l_p MKL on all kernels")
    common.add_argument("--p", type=float, help="norm of the kernel-weight constraint (>= 1)")
    common.add_argument("--fraction", type=float, help="training fraction of a stratified split")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__.replace("cmd_", ""))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, DataError, FeatureError, KernelError, HarnessError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
