import io
import json

import numpy as np
import pytest

from sgwgan.cli import main
from sgwgan.core import EmbeddingSet, SeededRng, save_embeddings
from sgwgan.gw_sliced import sample_basis, sgw_fast
from sgwgan.metrics import ImageBuffer, write_pnm


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def results(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if line and not line.startswith("#"))


@pytest.fixture
def files(tmp_path, rng):
    x = EmbeddingSet(rng.normal(size=(30, 3)), [f"c{i % 2}" for i in range(30)])
    y = EmbeddingSet(rng.normal(size=(24, 3)) * 2, [f"c{i % 2}" for i in range(24)])
    save_embeddings(x, tmp_path / "x.csv")
    save_embeddings(y, tmp_path / "y.csv")
    save_embeddings(y, tmp_path / "y.raw", format="raw-f64")
    return tmp_path, x, y


def test_sgw_text_and_json(files):
    d, x, y = files
    code, out, _ = run("sgw", d / "x.csv", d / "y.csv", "-L", 16, "--seed", 3)
    assert code == 0
    assert out.splitlines()[0] == "# command = sgw"
    r = results(out)
    assert r["n"] == "24"
    code, js, _ = run("sgw", d / "x.csv", d / "y.raw", "-L", 16, "--seed", 3, "--json")
    data = json.loads(js)
    assert data["results"]["sgw2"] == float(r["sgw2"])
    assert data["results"]["basis_seed"] == sample_basis(SeededRng(3), 16, 3).seed


def test_sgw_matches_library_on_equal_sizes(files):
    d, x, y = files
    save_embeddings(x.subset(range(24)), d / "x24.csv")
    _, out, _ = run("sgw", d / "x24.csv", d / "y.csv", "-L", 8, "--seed", 1)
    ref = sgw_fast(x.subset(range(24)), y, sample_basis(SeededRng(1), 8, 3)).value
    assert float(results(out)["sgw2"]) == ref


def test_sgw_same_file_is_zero(files):
    d, _, _ = files
    _, out, _ = run("sgw", d / "x.csv", d / "x.csv")
    assert abs(float(results(out)["sgw2"])) <= 1e-12


def test_sgw_is_byte_deterministic(files):
    d, _, _ = files
    a = run("sgw", d / "x.csv", d / "y.csv", "-L", 64, "--seed", 11)
    b = run("sgw", d / "x.csv", d / "y.csv", "-L", 64, "--seed", 11)
    assert a == b


def test_gw_bruteforce_and_entropic(tmp_path):
    save_embeddings(EmbeddingSet(np.array([[0.0], [1.0], [3.0]])), tmp_path / "a.csv")
    save_embeddings(EmbeddingSet(np.array([[0.0], [2.0], [6.0]])), tmp_path / "b.csv")
    code, out, _ = run("gw", tmp_path / "a.csv", tmp_path / "b.csv", "--brute-force")
    assert code == 0 and float(results(out)["gw2"]) == pytest.approx(28 / 9, abs=1e-12)
    code, out, _ = run("gw", tmp_path / "a.csv", tmp_path / "a.csv")
    r = results(out)
    assert code == 0 and "# epsilon_source = default" in out
    assert float(r["gw2"]) <= float(r["bias_bound"])


def test_gw_bruteforce_too_large(tmp_path, rng):
    save_embeddings(EmbeddingSet(rng.normal(size=(10, 2))), tmp_path / "a.csv")
    code, _, err = run("gw", tmp_path / "a.csv", tmp_path / "a.csv", "--brute-force")
    assert code == 2 and "cap" in err


def test_input_errors(tmp_path, files):
    d, _, _ = files
    assert run("sgw", d / "nope.csv", d / "x.csv")[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0\n3.0,oops\n")
    code, _, err = run("sgw", bad, bad)
    assert code == 2 and "bad.csv:2" in err
    assert run("sgw", d / "x.csv")[0] == 2
    assert run()[0] == 2
    assert run("gw", d / "x.csv", d / "y.csv", "--epsilon", "-1")[0] == 2
    save_embeddings(EmbeddingSet(np.zeros((4, 2))), tmp_path / "d2.csv")
    code, _, err = run("sgw", d / "x.csv", tmp_path / "d2.csv")
    assert code == 2 and "dimension" in err


def test_gw_tiny_epsilon_is_computation_failure(files):
    d, _, _ = files
    code, _, err = run("gw", d / "x.csv", d / "y.csv", "--epsilon", "1e-300")
    assert code == 1 and "epsilon" in err


def test_eval_relational_identical(files):
    d, _, _ = files
    code, out, _ = run("eval-relational", d / "x.csv", d / "x.csv", "--cap", 10)
    assert code == 0
    body = [l.split("\t") for l in out.splitlines() if not l.startswith("#")]
    assert body[0] == ["label", "n_x", "n_y", "gw2", "epsilon", "status"]
    assert [r[0] for r in body[1:]] == ["c0", "c1", "__overall__"]
    for r in body[1:3]:
        assert r[5] == "ok" and float(r[3]) < float(r[4]) * np.log(10)


def test_eval_relational_missing_label(tmp_path, rng):
    save_embeddings(EmbeddingSet(rng.normal(size=(6, 2)), list("aabbcc")), tmp_path / "x.csv")
    save_embeddings(EmbeddingSet(rng.normal(size=(4, 2)), list("aabb")), tmp_path / "y.csv")
    code, out, err = run("eval-relational", tmp_path / "x.csv", tmp_path / "y.csv")
    assert code == 0 and "'c'" in err
    rows = {l.split("\t")[0]: l.split("\t") for l in out.splitlines() if not l.startswith("#")}
    assert rows["c"][5] == "missing_in_y"
    code, js, _ = run("eval-relational", tmp_path / "x.csv", tmp_path / "y.csv", "--json")
    assert json.loads(js)["results"]["per_label"]["c"] is None


def test_eval_relational_needs_labels(tmp_path, rng):
    save_embeddings(EmbeddingSet(rng.normal(size=(6, 2))), tmp_path / "x.csv")
    assert run("eval-relational", tmp_path / "x.csv", tmp_path / "x.csv")[0] == 2


def test_metrics(tmp_path):
    write_pnm(ImageBuffer(np.full((16, 16, 1), 100.0)), tmp_path / "a.pgm")
    write_pnm(ImageBuffer(np.full((16, 16, 1), 116.0)), tmp_path / "b.pgm")
    code, out, _ = run("metrics", tmp_path / "a.pgm", tmp_path / "b.pgm")
    r = results(out)
    assert code == 0 and float(r["psnr_db"]) == pytest.approx(24.05, abs=0.01)
    code, out, _ = run("metrics", tmp_path / "a.pgm", tmp_path / "a.pgm", "--json")
    data = json.loads(out)["results"]
    assert data["psnr_db"] == "inf" and data["ssim"] == 1.0
    write_pnm(ImageBuffer(np.zeros((4, 4, 1))), tmp_path / "s.pgm")
    code, out, _ = run("metrics", tmp_path / "s.pgm", tmp_path / "s.pgm")
    assert code == 0 and "unavailable" in out
    assert run("metrics", tmp_path / "s.pgm", tmp_path / "s.pgm", "--require-ssim")[0] == 2
    assert run("metrics", tmp_path / "a.pgm", tmp_path / "s.pgm")[0] == 2


TINY_CONFIG = """
epochs = 2
steps_per_epoch = 3
critic_steps = 2
hidden = 6
checkpoint_interval = 1
eval_cap = 8
eval_projections = 8
projections = 8
data_dim = 3
data_per_class = 20
"""


def test_train_outputs_and_determinism(tmp_path):
    cfg = tmp_path / "tiny.txt"
    cfg.write_text(TINY_CONFIG)
    outs = []
    for name in ("a", "b"):
        code, out, err = run("train", "--config", cfg, "--seed", 4, "--out", tmp_path / name)
        assert code == 0, err
        outs.append(out.replace(str(tmp_path / name), "OUT"))
    assert outs[0] == outs[1]
    for f in ("report.jsonl", "checkpoint.sgwn", "config.txt", "losses.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert "seed = 4" in (tmp_path / "a" / "config.txt").read_text()
    assert "steps = 6" in outs[0]


def test_train_bad_config(tmp_path):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("epochz = 2\n")
    code, _, err = run("train", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "epochz" in err
    assert run("train", "--config", tmp_path / "missing.txt")[0] == 2


def test_export_plotdata(tmp_path, files):
    d, _, _ = files
    cfg = tmp_path / "tiny.txt"
    cfg.write_text(TINY_CONFIG)
    run("train", "--config", cfg, "--out", tmp_path / "run", "--no-figures")
    code, out, err = run(
        "export-plotdata", "--report", tmp_path / "run" / "report.jsonl",
        "--sgw-x", d / "x.csv", "--sgw-y", d / "y.csv", "--levels", "2,8", "--bases", 4,
        "--out", tmp_path / "plots",
    )
    assert code == 0, err
    lines = (tmp_path / "plots" / "losses.csv").read_text().splitlines()
    assert lines[0] == "step,rmse,sgw,adv,total" and len(lines) == 7
    conv = (tmp_path / "plots" / "sgw_convergence.csv").read_text().splitlines()
    assert conv[0] == "L,bases,mean,sd" and [c.split(",")[0] for c in conv[1:]] == ["2", "8"]
    assert (tmp_path / "plots" / "losses.png").stat().st_size > 0
    assert (tmp_path / "plots" / "sgw_convergence.png").stat().st_size > 0
    assert run("export-plotdata", "--out", tmp_path / "p2")[0] == 2
    assert run("export-plotdata", "--sgw-x", d / "x.csv")[0] == 2
