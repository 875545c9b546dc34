import hashlib
import json

import numpy as np
import pytest

from sarcd import cli, imaging

SCENE = """[scene]
rows = 64
cols = 64
background = 100
looks = 4
spike_fraction = 0
seed = 3

[region field]
shape = rect
top = 4
left = 4
height = 20
width = 30
amplitude = 60

[change block]
shape = rect
top = 36
left = 30
height = 16
width = 16
delta = 120
"""


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def scene_file(tmp_path):
    p = tmp_path / "scene.ini"
    p.write_text(SCENE)
    return p


@pytest.fixture
def pair(tmp_path, scene_file):
    out = tmp_path / "pair"
    assert cli.main(["synth", str(scene_file), str(out)]) == cli.EXIT_OK
    return out


def test_synth_outputs(pair):
    for name in ("I1.pgm", "I2.pgm", "truth.pgm"):
        assert imaging.load_image(pair / name).shape == (64, 64)
    truth = imaging.load_label_map(pair / "truth.pgm")
    assert truth.sum() == 16 * 16
    manifest = json.loads((pair / "manifest.json").read_text())
    assert manifest["seed"] == 3 and "numpy" in manifest["versions"]


def test_synth_deterministic(tmp_path, scene_file, pair):
    again = tmp_path / "again"
    cli.main(["synth", str(scene_file), str(again)])
    for name in ("I1.pgm", "I2.pgm", "truth.pgm"):
        assert digest(pair / name) == digest(again / name)


def test_synth_out_of_bounds(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(SCENE.replace("top = 36", "top = 60"))
    assert cli.main(["synth", str(p), str(tmp_path / "x")]) == cli.EXIT_IO
    assert "block" in capsys.readouterr().err


def test_run_identical_inputs(tmp_path, pair):
    out = tmp_path / "run"
    code = cli.main(["run", str(pair / "I1.pgm"), str(pair / "I1.pgm"), "--out", str(out)])
    assert code == cli.EXIT_OK
    assert not imaging.load_label_map(out / "change.pgm").any()


def test_run_outputs_and_fallbacks(tmp_path, pair):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[phase1]\nk = 7\n")
    out = tmp_path / "run"
    debug = tmp_path / "debug"
    code = cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--config", str(cfg),
                     "--out", str(out), "--debug-dir", str(debug)])
    assert code == cli.EXIT_OK
    for name in ("change.pgm", "change.png", "report.txt", "manifest.json"):
        assert (out / name).exists()
    report = (out / "report.txt").read_text()
    line = next(l for l in report.splitlines() if l.startswith("fallbacks = "))
    fallbacks = line.split(" = ", 1)[1].split(", ")
    assert "phase1.k" not in fallbacks
    assert "phase1.sp" in fallbacks and "phase2.k" in fallbacks
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"]["change.pgm"] == digest(out / "change.pgm")
    assert manifest["inputs"]["i1"]["sha256"] == digest(pair / "I1.pgm")
    assert (debug / "phase1_cc.png").exists() and (debug / "pcanet1.bin").exists()


def test_run_reproducible_from_manifest(tmp_path, pair):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--out", str(out)])
        outs.append(out)
    assert digest(outs[0] / "change.pgm") == digest(outs[1] / "change.pgm")
    cfg = tmp_path / "from_manifest.ini"
    cfg.write_text(json.loads((outs[0] / "manifest.json").read_text())["config"])
    out = tmp_path / "c"
    cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--config", str(cfg),
              "--out", str(out)])
    assert digest(out / "change.pgm") == digest(outs[0] / "change.pgm")


def test_seed_override(tmp_path, pair):
    out = tmp_path / "s"
    cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--out", str(out),
              "--seed", "11", "--phase1-only"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["phase1_only"]
    cm = imaging.load_label_map(out / "change.pgm")
    assert cm.shape == (64, 64) and set(np.unique(cm)) <= {0, 1}


def test_config_from_environment(tmp_path, pair, monkeypatch):
    cfg = tmp_path / "env.ini"
    cfg.write_text("[run]\nseed = 5\n")
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    out = tmp_path / "env"
    cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--out", str(out),
              "--phase1-only"])
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5
    assert str(cfg) in (out / "report.txt").read_text()


def test_exit_dimension_mismatch(tmp_path, pair):
    small = tmp_path / "small.pgm"
    imaging.save_image(small, np.ones((10, 10)), "pgm8")
    assert cli.main(["run", str(pair / "I1.pgm"), str(small), "--out",
                     str(tmp_path / "o")]) == cli.EXIT_SHAPE


def test_exit_degenerate(tmp_path, pair, capsys):
    cfg = tmp_path / "all_mid.ini"
    cfg.write_text("[vote]\nhigh = 1.5\nlow = 0\n")  # every superpixel intermediate
    code = cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--config", str(cfg),
                     "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_DEGENERATE
    assert "degenerate" in capsys.readouterr().err


def test_exit_io(tmp_path, pair):
    assert cli.main(["run", str(tmp_path / "missing.pgm"), str(pair / "I2.pgm"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_IO
    bad = tmp_path / "bad.ini"
    bad.write_text("[phase1]\nbogus = 1\n")
    assert cli.main(["run", str(pair / "I1.pgm"), str(pair / "I2.pgm"), "--config", str(bad),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_IO


def test_eval_perfect(tmp_path, pair, capsys):
    assert cli.main(["eval", str(pair / "truth.pgm"), str(pair / "truth.pgm"),
                     "--out", str(tmp_path / "e.txt")]) == cli.EXIT_OK
    assert "100.00" in capsys.readouterr().out
    assert "PCC = 100.00" in (tmp_path / "e.txt").read_text()


def test_eval_derived_example(tmp_path):
    truth = np.zeros(10_000, dtype=np.int64)
    truth[:1000] = 1
    pred = truth.copy()
    pred[:100] = 0          # 100 missed
    pred[1000:1090] = 1     # 90 false alarms
    imaging.write_pgm(tmp_path / "pred.pgm", pred.reshape(100, 100) * 255, maxval=255)
    imaging.write_pgm(tmp_path / "truth.pgm", truth.reshape(100, 100) * 255, maxval=255)
    assert cli.main(["eval", str(tmp_path / "pred.pgm"), str(tmp_path / "truth.pgm")]) == 0
    kv = dict(l.split(" = ") for l in (tmp_path / "eval.txt").read_text().splitlines())
    assert (kv["Nu"], kv["Nc"], kv["Fn"], kv["Mn"]) == ("9000", "1000", "90", "100")
    assert (kv["Pf"], kv["Pm"], kv["PCC"], kv["KC"]) == ("1.00", "10.00", "98.10", "89.40")


def test_eval_non_binary(tmp_path, capsys):
    pred = np.zeros((5, 5))
    pred[3, 1] = 7
    imaging.save_image(tmp_path / "p.pgm", pred, "pgm8")
    imaging.save_image(tmp_path / "t.pgm", np.zeros((5, 5)), "pgm8")
    assert cli.main(["eval", str(tmp_path / "p.pgm"), str(tmp_path / "t.pgm")]) == cli.EXIT_SHAPE
    assert "row=3, col=1" in capsys.readouterr().err
