import json
import subprocess
import sys

import pytest

from conftest import tiny_text
from prosodykit.harness.cli import EXIT, main
from prosodykit.harness.io import read_rows, sha256


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    p.write_text(tiny_text(figures=True))
    return p


@pytest.fixture(scope="module")
def workdir(cfg_file, tmp_path_factory):
    """One full pipeline: corpus, pitch checkpoint and samples under a single --out."""
    out = tmp_path_factory.mktemp("run")
    base = ["--config", str(cfg_file), "--seed", "11", "--out", str(out)]
    assert main(["gen-corpus"] + base) == 0
    assert main(["train-pitch"] + base) == 0
    return out, base


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_gen_corpus(workdir):
    out, _ = workdir
    assert (out / "corpus" / "utterances.csv").exists()
    rows = read_rows(out / "corpus_summary.csv")
    assert len(rows) == 6


def test_train_pitch_outputs(workdir):
    out, _ = workdir
    curve = read_rows(out / "loss_curve.csv")
    assert [r["step"] for r in curve] == ["10", "20", "30", "40"]
    assert (out / "pitch.ckpt").exists()
    assert (out / "figures" / "loss_curve.png").read_bytes()[:4] == b"\x89PNG"
    m = manifest(out)
    assert m["command"] == "train-pitch" and m["seed"] == 11
    for e in m["files"]:
        assert sha256(out / e["path"]) == e["sha256"]


def test_sample(workdir, tmp_path):
    out, base = workdir
    dst = tmp_path / "s"
    argv = ["sample", "--config", base[1], "--seed", "5", "--out", str(dst),
            "--checkpoint", str(out / "pitch.ckpt"), "--corpus", str(out / "corpus")]
    assert main(argv) == 0
    summary = {r["metric"]: r["value"] for r in read_rows(dst / "sample_summary.csv")}
    assert float(summary["inter_seed_diversity_hz"]) > 0
    assert (dst / "figures" / "contours.png").exists()
    assert any((dst / "contours").iterdir())


def test_sample_byte_identical(workdir, tmp_path):
    out, base = workdir
    csvs = []
    for name in ("a", "b"):
        dst = tmp_path / name
        assert main(["sample", "--config", base[1], "--seed", "5", "--out", str(dst),
                     "--checkpoint", str(out / "pitch.ckpt"),
                     "--corpus", str(out / "corpus")]) == 0
        csvs.append({p.relative_to(dst): p.read_bytes() for p in dst.rglob("*.csv")})
    assert csvs[0] == csvs[1] and len(csvs[0]) > 2


def test_train_pitch_byte_identical(cfg_file, tmp_path):
    runs = []
    for name in ("a", "b"):
        dst = tmp_path / name
        assert main(["train-pitch", "--config", str(cfg_file), "--seed", "2",
                     "--out", str(dst)]) == 0
        runs.append(dst)
    for f in ("loss_curve.csv", "train_summary.csv", "pitch.ckpt", "figures/loss_curve.png"):
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f
    assert [e["sha256"] for e in manifest(runs[0])["files"]] == \
        [e["sha256"] for e in manifest(runs[1])["files"]]


def test_train_adaptor(cfg_file, tmp_path):
    (tmp_path / "c.cfg").write_text(tiny_text(figures=True, adaptor_ablation=True))
    assert main(["train-adaptor", "--config", str(tmp_path / "c.cfg"), "--seed", "1",
                 "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "metrics.csv")
    assert [r["adaptor"] for r in rows].count("flat") == 3
    assert (tmp_path / "adaptor_hierarchical.ckpt").exists()
    assert (tmp_path / "durations.csv").exists()
    assert (tmp_path / "figures" / "probe_metrics.png").exists()


def test_ablate(cfg_file, tmp_path):
    assert main(["ablate", "--config", str(cfg_file), "--seed", "1", "--out", str(tmp_path)]) == 0
    assert len(read_rows(tmp_path / "ablation.csv")) == 3
    assert (tmp_path / "figures" / "ablation.png").exists()
    names = {e["path"] for e in manifest(tmp_path)["files"]}
    assert "ablation_pairs.csv" in names and any(n.startswith("arms/") for n in names)


def test_export_schedule(tmp_path):
    assert main(["export-schedule", "--seed", "0", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "schedule.csv")
    assert len(rows) == 100 and float(rows[0]["beta"]) == pytest.approx(1e-3)
    assert (tmp_path / "figures" / "schedule.png").exists()


def test_bad_config_exit(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("T = -3\n")
    assert main(["export-schedule", "--config", str(bad), "--out", str(tmp_path)]) == EXIT["config"]
    assert "error[config]" in capsys.readouterr().err
    assert main(["export-schedule", "--config", str(tmp_path / "none.cfg"),
                 "--out", str(tmp_path)]) == EXIT["config"]


def test_missing_checkpoint_exit(cfg_file, tmp_path, capsys):
    code = main(["sample", "--config", str(cfg_file), "--out", str(tmp_path)])
    assert code == EXIT["input"]
    assert "checkpoint not found" in capsys.readouterr().err


def test_missing_corpus_exit(cfg_file, tmp_path):
    assert main(["train-pitch", "--config", str(cfg_file), "--out", str(tmp_path),
                 "--corpus", str(tmp_path / "nowhere")]) == EXIT["input"]


def test_corrupt_checkpoint_exit(cfg_file, tmp_path):
    (tmp_path / "pitch.ckpt").write_bytes(b"garbage")
    assert main(["sample", "--config", str(cfg_file), "--out", str(tmp_path)]) == EXIT["input"]


def test_training_failure_exit(cfg_file, tmp_path):
    (tmp_path / "c.cfg").write_text(tiny_text(lr=1e30))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert main(["train-pitch", "--config", str(tmp_path / "c.cfg"),
                     "--out", str(tmp_path)]) == EXIT["training"]


@pytest.mark.parametrize("seed", ["-1", "18446744073709551616", "abc"])
def test_bad_seed(seed, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["export-schedule", "--seed", seed, "--out", str(tmp_path)])
    assert exc.value.code != 0


def test_max_seed_accepted(tmp_path):
    assert main(["export-schedule", "--seed", "18446744073709551615", "--out", str(tmp_path)]) == 0
    assert manifest(tmp_path)["seed"] == 2 ** 64 - 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "prosodykit", "export-schedule", "--out",
                        str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "prosodykit", "nope"], capture_output=True)
    assert r.returncode != 0
