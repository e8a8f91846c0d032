import numpy as np
import pytest

from extramerge.checkpoint_store import CheckpointManifest, read_checkpoint, write_run
from extramerge.cli import main
from extramerge.csvio import read_csv
from extramerge.merge_engine import ema_weights
from extramerge.river_valley_sim import default_spec, simulate, write_trajectory_checkpoints

TOY = ["--steps", "400", "--save-every", "20", "--n-train", "256", "--n-val", "128"]


def body(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(["train-toy", "--out-dir", str(out / "run"), "--out", str(out / "c.csv")] + TOY) == 0
    return out / "run"


@pytest.fixture(scope="module")
def valley_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("valley")
    spec = default_spec()
    traj = simulate(spec, 500, seed=0, every=25)
    write_trajectory_checkpoints(spec, traj, out)
    spec.save(out / "spec.txt")
    return out


def test_train_toy_outputs(toy_run):
    m = CheckpointManifest.load(toy_run / "manifest.tsv")
    assert m.steps == list(range(0, 401, 20))
    assert (toy_run / "curves.csv").exists() and (toy_run / "config.txt").exists()


def test_merge_ema(toy_run, tmp_path):
    out = tmp_path / "w.csv"
    args = ["merge", str(toy_run / "manifest.tsv"), "--tau", "20", "--n", "8", "--weights", "ema",
            "--gamma", "0.1", "--out", str(out), "--merged-out", str(tmp_path / "m.xmg")]
    assert main(args) == 0
    meta, rows = read_csv(out)
    np.testing.assert_array_equal([float(r["weight"]) for r in rows], ema_weights(8, 0.1))
    assert meta["gamma"] == "0.1" and meta["anchor_step"] == "400"
    (rec,) = CheckpointManifest.load(tmp_path / "m.xmg.manifest.tsv")
    assert read_checkpoint(rec).size == rec.d


def test_merge_insufficient(toy_run, capsys):
    assert main(["merge", str(toy_run / "manifest.tsv"), "--tau", "20", "--n", "100"]) == 3
    err = capsys.readouterr().err
    assert "insufficient checkpoints" in err and err.count("\n") == 1


def test_merge_ema_needs_gamma(toy_run):
    assert main(["merge", str(toy_run / "manifest.tsv"), "--tau", "20", "--weights", "ema"]) == 2


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["merge"]) == 2
    assert main(["nonsense"]) == 2


def test_missing_manifest(tmp_path):
    assert main(["merge", str(tmp_path / "none.tsv"), "--tau", "1"]) == 3


def test_pca_and_alias(toy_run, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = [str(toy_run / "manifest.tsv"), "--tau", "20", "--n", "8", "--K", "4"]
    assert main(["pca"] + base + ["--out", str(a)]) == 0
    assert main(["analyze"] + base + ["--out", str(b)]) == 0
    _, rows = read_csv(a)
    assert len(rows) == 4
    assert sum(float(r["evr"]) for r in rows) == pytest.approx(1.0)
    assert body(a) == body(b)


def test_extramerge_valley(valley_run, tmp_path):
    out = tmp_path / "e.csv"
    args = ["extramerge", str(valley_run / "manifest.tsv"), "--tau", "25", "--oracle",
            f"valley:{valley_run / 'spec.txt'}", "--out", str(out), "--best-out", str(tmp_path / "best.xmg")]
    assert main(args) == 0
    meta, rows = read_csv(out)
    assert rows[0]["k"] == "0"
    assert float(meta["best_loss"]) <= float(meta["anchor_loss"])
    assert meta["alpha"] == "0.1" and meta["K"] == "4"


def test_extramerge_toy_deterministic(toy_run, tmp_path):
    args = ["extrapolate", str(toy_run / "manifest.tsv"), "--tau", "20", "--oracle", f"toy:{toy_run}"]
    assert main(args + ["--out", str(tmp_path / "1.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "2.csv")]) == 0
    assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()


def test_extramerge_max_steps_zero(toy_run, capsys):
    args = ["extramerge", str(toy_run / "manifest.tsv"), "--tau", "20", "--oracle", f"toy:{toy_run}",
            "--max-steps", "0"]
    assert main(args) == 2
    assert "max_steps" in capsys.readouterr().err


def test_extramerge_bad_oracle(toy_run):
    args = ["extramerge", str(toy_run / "manifest.tsv"), "--tau", "20", "--oracle", "magic"]
    assert main(args) == 2


def test_extramerge_degenerate(tmp_path, capsys):
    write_run([np.ones(3)] * 12, range(12), tmp_path)
    spec = tmp_path / "spec.txt"
    spec.write_text("d=3\neta=0.1\nsigma=1\nlambdas=1,1\n")
    args = ["extramerge", str(tmp_path / "manifest.tsv"), "--tau", "1", "--oracle", f"valley:{spec}"]
    assert main(args) == 4
    assert "degenerate spectrum" in capsys.readouterr().err


def test_scan(valley_run, tmp_path):
    out = tmp_path / "s.csv"
    m = str(valley_run / "manifest.tsv")
    args = ["scan", f"{m}:450", str(valley_run / "ckpt_000000500.xmg"), "--grid", "11",
            "--oracle", f"valley:{valley_run / 'spec.txt'}", "--out", str(out)]
    assert main(args) == 0
    meta, rows = read_csv(out)
    assert len(rows) == 11 and meta["classification"] in ("convex-basin", "monotone-decreasing", "other")


def test_config_file_and_override(toy_run, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("tau=20\nn=4\nweights=ema\ngamma=0.5\n")
    out = tmp_path / "o.csv"
    assert main(["merge", str(toy_run / "manifest.tsv"), "--config", str(cfg), "--n", "3",
                 "--out", str(out)]) == 0
    meta, rows = read_csv(out)
    assert meta["n"] == "3" and meta["gamma"] == "0.5" and meta["config_file"] == str(cfg)
    np.testing.assert_allclose([float(r["weight"]) for r in rows], [4 / 7, 2 / 7, 1 / 7])
    cfg.write_text("bogus=1\n")
    assert main(["merge", str(toy_run / "manifest.tsv"), "--config", str(cfg)]) == 2


@pytest.mark.parametrize("experiment, extra", [
    ("thm1", ["--N", "1,4", "--T", "5"]),
    ("thm2", ["--N", "8", "--T", "25", "--rho", "2,8"]),
    ("snr", ["--N", "2,8", "--T", "25", "--K", "4"]),
    ("rectification", ["--N", "8", "--T", "25", "--K", "5"]),
])
def test_simulate_experiments(tmp_path, experiment, extra):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--experiment", experiment, "--seeds", "100"] + extra
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    meta, rows = read_csv(a)
    assert rows and meta["experiment"] == experiment


def test_simulate_checkpoints_dir(tmp_path):
    d = tmp_path / "sim"
    assert main(["simulate", "--checkpoints-dir", str(d), "--steps", "100", "--T", "10"]) == 0
    assert CheckpointManifest.load(d / "manifest.tsv").steps == list(range(0, 101, 10))
    assert main(["simulate"]) == 2


def test_simulate_unstable_spec(tmp_path):
    spec = tmp_path / "bad.txt"
    spec.write_text("d=2\neta=1.0\nsigma=1\nlambdas=3\n")
    assert main(["simulate", "--spec", str(spec), "--experiment", "thm1", "--seeds", "100"]) == 4
