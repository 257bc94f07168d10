import csv
import json

import numpy as np
import pytest
from PIL import Image

from freqrand.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from freqrand.data import save_png
from freqrand.masks import SpectrumMask

TOY = dict(image_size=16, n_train=32, n_val=16, n_target=16, pool_size=4, shape_amplitude=0.3)
MODEL = dict(hidden1=4, hidden2=4)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip()
    return code, (json.loads(out.splitlines()[-1]) if out else None)


def write_config(path, **kw):
    doc = {"mode": "baseline", "epochs": 2, "batch_size": 16, "seed": 1, "toy": TOY, "model": MODEL, **kw}
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def images(tmp_path, rng):
    src, ref = tmp_path / "src.png", tmp_path / "ref.png"
    save_png(rng.uniform(size=(64, 64, 3)), src)
    save_png(np.clip(rng.normal(0.6, 0.3, size=(64, 64, 3)), 0, 1), ref)
    return src, ref


def test_decompose_constant_image(tmp_path, capsys):
    save_png(np.full((16, 16, 3), 0.5), tmp_path / "c.png")
    code, doc = run(capsys, "decompose", "--input", tmp_path / "c.png", "--out-dir", tmp_path / "d")
    assert code == EXIT_OK and doc["command"] == "decompose" and "config_hash" in doc and "seed" in doc
    pngs = sorted((tmp_path / "d").glob("c*_b*.png"))
    assert len(pngs) == 192
    for p in pngs:
        lit = np.asarray(Image.open(p)).any()
        assert lit == p.name.endswith("_b00.png"), p.name


def test_decompose_energy_csv_matches_image_energy(tmp_path, capsys, rng):
    img = rng.uniform(size=(24, 32, 3))
    save_png(img, tmp_path / "a.png")
    run(capsys, "decompose", "--input", tmp_path / "a.png", "--out-dir", tmp_path / "d")
    with open(tmp_path / "d" / "energy.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 192 and rows[1]["u"] == "0" and rows[1]["v"] == "1"
    quantized = np.asarray(Image.open(tmp_path / "a.png"), dtype=np.float64) / 255.0
    total = sum(float(r["energy"]) for r in rows)
    assert total == pytest.approx((quantized**2).sum(), rel=1e-6)


def test_decompose_is_byte_identical_and_spatial(tmp_path, capsys, images):
    src, _ = images
    run(capsys, "decompose", "--input", src, "--out-dir", tmp_path / "a")
    run(capsys, "decompose", "--input", src, "--out-dir", tmp_path / "b")
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    code, _ = run(capsys, "decompose", "--input", src, "--out-dir", tmp_path / "s", "--spatial")
    spatial = list((tmp_path / "s").glob("s*.png"))
    assert code == EXIT_OK and len(spatial) == 192
    assert Image.open(spatial[0]).size == (64, 64)


def test_randomize_all_ones_is_identity(tmp_path, capsys, images):
    src, ref = images
    SpectrumMask(np.ones(64)).save(tmp_path / "m.json")
    code, doc = run(capsys, "randomize", "--source", src, "--reference", ref, "--mask", tmp_path / "m.json",
                    "--out", tmp_path / "o.png")
    assert code == EXIT_OK and doc["ks_deltas"] == []
    assert np.array_equal(np.asarray(Image.open(tmp_path / "o.png")), np.asarray(Image.open(src)))


def test_randomize_reduces_ks_on_every_band(tmp_path, capsys, images):
    src, ref = images
    SpectrumMask.from_ranges([(0, 2), (40, 64)]).save(tmp_path / "m.json")
    argv = ("randomize", "--source", src, "--reference", ref, "--mask", tmp_path / "m.json")
    code, doc = run(capsys, *argv, "--out", tmp_path / "o1.png", "--emit-full-spectrum")
    assert code == EXIT_OK and len(doc["ks_deltas"]) == 3 * 26
    assert all(d["delta"] <= 0 for d in doc["ks_deltas"])
    assert 0.0 <= doc["clamp_rate"] <= 1.0
    assert len(list((tmp_path / "o1.png.bands").glob("*.png"))) == 192
    _, again = run(capsys, *argv, "--out", tmp_path / "o2.png")
    assert (tmp_path / "o1.png").read_bytes() == (tmp_path / "o2.png").read_bytes()
    assert again["ks_deltas"] == doc["ks_deltas"]


def test_randomize_errors(tmp_path, capsys, images, rng):
    src, ref = images
    SpectrumMask(np.ones(64)).save(tmp_path / "m.json")
    save_png(rng.uniform(size=(32, 32, 3)), tmp_path / "small.png")
    code, _ = run(capsys, "randomize", "--source", src, "--reference", tmp_path / "small.png",
                  "--mask", tmp_path / "m.json", "--out", tmp_path / "o.png")
    assert code == EXIT_CONFIG
    code, _ = run(capsys, "randomize", "--source", tmp_path / "missing.png", "--reference", ref,
                  "--mask", tmp_path / "m.json", "--out", tmp_path / "o.png")
    assert code == EXIT_IO
    (tmp_path / "bad.json").write_text(json.dumps({"bits": [1] * 10}))
    code, _ = run(capsys, "randomize", "--source", src, "--reference", ref, "--mask", tmp_path / "bad.json",
                  "--out", tmp_path / "o.png")
    assert code == EXIT_CONFIG


def test_config_errors_name_every_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", p=3.0, epochs=0)
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "p:" in err and "epochs:" in err
    (tmp_path / "broken.json").write_text("{")
    assert main(["train", "--config", str(tmp_path / "broken.json")]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == EXIT_IO


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", optimizer={"lr": 1e300, "step_size": 1000})
    assert main(["train", "--config", str(cfg)]) == EXIT_NUMERIC


def test_train_then_eval_reproduces_the_logged_accuracy(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json")
    code, doc = run(capsys, "train", "--config", cfg)
    assert code == EXIT_OK and doc["metrics_csv"] == f"runs/{doc['config_hash']}/metrics.csv"
    with open(doc["metrics_csv"]) as fh:
        last = list(csv.DictReader(fh))[-1]
    code, ev = run(capsys, "eval", "--checkpoint", doc["checkpoint"], "--dataset", cfg)
    assert code == EXIT_OK and ev["config_hash"] == doc["config_hash"]
    assert ev["results"]["target_val"]["accuracy"] == float(last["target_acc"])
    assert ev["results"]["source_val"]["accuracy"] == float(last["source_acc"])


def test_seed_environment_override(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json", epochs=1)
    _, plain = run(capsys, "train", "--config", cfg)
    monkeypatch.setenv("FREQRAND_SEED", "9")
    _, seeded = run(capsys, "train", "--config", cfg)
    assert plain["seed"] == 1 and seeded["seed"] == 9
    assert seeded["config_hash"] != plain["config_hash"]
    monkeypatch.setenv("FREQRAND_SEED", "x")
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG


def test_generate_and_eval_on_directory(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json", epochs=1)
    code, gen = run(capsys, "generate", "--config", cfg, "--out-dir", tmp_path / "toy")
    assert code == EXIT_OK and gen["counts"]["references"] == 4
    dir_cfg = write_config(tmp_path / "d.json", epochs=1, toy=None, data_dir=str(tmp_path / "toy"))
    code, doc = run(capsys, "train", "--config", dir_cfg)
    assert code == EXIT_OK
    code, ev = run(capsys, "eval", "--checkpoint", doc["checkpoint"], "--dataset", tmp_path / "toy")
    assert set(ev["results"]) == {"source_train", "source_val", "target_val"}


def test_sweep_p_writes_one_row_per_value(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json", epochs=2, mode="sl")
    code, doc = run(capsys, "sweep-p", "--config", cfg, "--p-list", "0,1/2,1")
    assert code == EXIT_OK and [r["p"] for r in doc["rows"]] == [0.0, 0.5, 1.0]
    assert len(open(doc["csv"]).read().splitlines()) == 4
    assert main(["sweep-p", "--config", str(cfg), "--p-list", "2"]) == EXIT_CONFIG


def test_analyze_writes_a_mask(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = write_config(tmp_path / "c.json", epochs=1, candidate_bands=[[0, 2], [2, 40], [40, 64]])
    code, doc = run(capsys, "analyze", "--config", cfg, "--out", tmp_path / "m.json")
    assert code == EXIT_OK and len(doc["rows"]) == 4
    mask = SpectrumMask.load(tmp_path / "m.json")
    assert mask.width == 64 and mask.created_from == doc["config_hash"]
