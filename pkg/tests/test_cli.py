import json

import numpy as np
import pytest
from PIL import Image

from hmkl.cli import main
from hmkl.dataio import write_feature_table
from hmkl.synthetic import make_multiview_dataset


def _images(root, n_per_class=2, size=96):
    rng = np.random.default_rng(0)
    for cls, scale in (("fields", 40), ("forest", 200)):
        (root / cls).mkdir(parents=True)
        for i in range(n_per_class):
            pixels = (rng.random((size, size)) * scale).astype(np.uint8)
            Image.fromarray(pixels).save(root / cls / f"img{i}.png")


def _config(path, body):
    path.write_text(body)
    return str(path)


def _features(tmp_path, per_class=6):
    table = make_multiview_dataset(n_classes=3, per_class=per_class, informative_views=1, noise_views=1, seed=0)
    paths = write_feature_table(tmp_path / "feat", table)
    views = " ".join(str(p) for p in paths)
    labels = tmp_path / "feat" / "labels.csv"
    return f"[data]\nlabels = {labels}\nviews = {views}\n[kernels]\nrbf_gammas = 1.0\nchi2_gammas = 1.0\n"


def test_extract_and_codebook(tmp_path, capsys):
    _images(tmp_path / "img")
    cfg = _config(tmp_path / "run.ini", "[data]\nimages = img\n[features]\ncodebook_size = 4\n"
                  "codebook = out/codebook.csv\ndescriptors = moments bag\n")
    # the codebook file must exist before extraction can use it
    assert main(["extract", "--config", cfg]) == 2
    cb = _config(tmp_path / "cb.ini", "[data]\nimages = img\n[features]\ncodebook_size = 4\n")
    assert main(["codebook", "--config", cb]) == 0
    assert main(["extract", "--config", cfg]) == 0
    out = tmp_path / "out"
    moments = [l for l in (out / "lbp_moments.csv").read_text().splitlines() if not l.startswith("#")]
    bag = [l for l in (out / "bag_lbp.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(moments) == 1 + 4 and len(moments[1].split(",")) == 1 + 108
    assert len(bag) == 1 + 4 and len(bag[1].split(",")) == 1 + 4
    assert moments[1].startswith("fields/img0,")
    assert "config_hash" in (out / "lbp_moments.csv").read_text().splitlines()[0]
    first = {p.name: p.read_bytes() for p in out.glob("*.csv")}
    assert main(["extract", "--config", cfg]) == 0
    assert {p.name: p.read_bytes() for p in out.glob("*.csv")} == first


def test_extract_missing_folder(tmp_path, capsys):
    cfg = _config(tmp_path / "run.ini", "[data]\nimages = nowhere\n")
    assert main(["extract", "--config", cfg]) == 2
    assert "nowhere" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = _config(tmp_path / "run.ini", "[data]\nsynthetic = multiview\n")
    assert main(["select", "--config", cfg, "--p", "0.5"]) == 2
    assert "p must be >= 1" in capsys.readouterr().err
    assert main(["select", "--config", _config(tmp_path / "bad.ini", "[oops]\nx = 1\n")]) == 2
    assert main(["select", "--config", _config(tmp_path / "bad2.ini", "[train]\nfolds = one\n")]) == 2
    assert main(["nonsense"]) == 2


def test_select_writes_trace(tmp_path):
    cfg = _config(tmp_path / "run.ini", _features(tmp_path) + "[train]\nc = 1.0\nfraction = 0.7\n")
    assert main(["select", "--config", cfg]) == 0
    out = tmp_path / "out"
    trace = json.loads((out / "trace.json").read_text())
    assert list(trace)[0] == "provenance" and len(trace["iterations"]) >= 1
    selected = [l for l in (out / "selected.txt").read_text().splitlines() if not l.startswith("#")]
    assert selected == trace["selected"]
    assert (out / "split.csv").exists() and (out / "model" / "model.json").exists()

    assert main(["predict", "--config", cfg]) == 0
    rows = [l for l in (out / "predictions.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "id,predicted,label" and len(rows) == 1 + 6


def test_plain_mkl_without_heuristic(tmp_path, capsys):
    cfg = _config(tmp_path / "run.ini", _features(tmp_path) + "[train]\nc = 1.0\n")
    assert main(["train", "--config", cfg, "--p", "2", "--no-heuristic"]) == 0
    assert "mkl_lp[p=2.0]" in capsys.readouterr().out or "mkl_lp[p=2]" in (tmp_path / "out" / "selected.txt").read_text()
    assert not (tmp_path / "out" / "trace.json").exists()
    doc = json.loads((tmp_path / "out" / "model" / "model.json").read_text())
    assert len(doc["specs"]) == 6


def test_benchmark_rows_resume_and_plots(tmp_path, capsys):
    body = _features(tmp_path, per_class=8) + ("[train]\nc_grid = 1.0\n[benchmark]\nmethods = mkl:2 heuristic\n"
                                             "fractions = 0.5\nrepetitions = 2\n")
    cfg = _config(tmp_path / "run.ini", body)
    assert main(["benchmark", "--config", cfg, "--emit-plots"]) == 0
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())
    assert list(report)[0] == "provenance"
    rows = [l for l in (out / "report.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 1 + 2
    assert (out / "fig3_0.5.csv").exists() and (out / "fig2_0.5.csv").exists()
    cached = sorted(p.name for p in out.rglob("cache/*/*"))
    assert len(cached) == 4
    first = (out / "report.csv").read_bytes()
    assert main(["benchmark", "--config", cfg, "--emit-plots"]) == 0
    assert (out / "report.csv").read_bytes() == first

    assert main(["report", "--config", cfg, "--emit-plots", "--out", str(tmp_path / "again")]) == 2
    body += f"[report]\ninput = {out / 'report.json'}\n"
    cfg = _config(tmp_path / "run2.ini", body)
    assert main(["report", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    again = [l for l in (tmp_path / "again" / "report.csv").read_text().splitlines() if not l.startswith("#")]
    assert again == rows


def test_no_heuristic_drops_method(tmp_path):
    body = _features(tmp_path) + "[train]\nc_grid = 1.0\n[benchmark]\nmethods = mkl:2 heuristic\nfractions = 0.5\n" \
                                 "repetitions = 1\n"
    cfg = _config(tmp_path / "run.ini", body)
    assert main(["benchmark", "--config", cfg, "--no-heuristic"]) == 0
    rows = [l for l in (tmp_path / "out" / "report.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 2 and rows[1].startswith("mkl_lp")


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "hmkl" in capsys.readouterr().out
