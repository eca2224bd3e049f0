import subprocess
import sys

import numpy as np
import pytest

from covos.cli import main
from covos.metrics import evaluate_sequence
from covos.pnm import read_masks
from covos.synthetic import demo_noise_path, demo_scene_path
from helpers import bad_decode_order_bytes


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "demo"
    assert main(["gen", str(demo_scene_path()), str(out), "--seed", "0"]) == 0
    return out


def test_gen_tree(gen_dir):
    assert len(list((gen_dir / "frames").glob("frame_*.ppm"))) == 20
    assert len(list((gen_dir / "masks").glob("mask_*.pgm"))) == 20
    assert (gen_dir / "stream.cvsc").is_file()
    manifest = (gen_dir / "manifest.txt").read_text()
    assert "frame_types = IBBPBBPBBPBBPBBPBBPP" in manifest and "keyframe_ratio = 0.400000" in manifest


def test_gen_deterministic(gen_dir, tmp_path):
    assert main(["gen", str(demo_scene_path()), str(tmp_path / "again"), "--seed", "0"]) == 0
    for p in sorted(gen_dir.rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "again" / p.relative_to(gen_dir)).read_bytes()


def test_gen_bad_template(tmp_path, capsys):
    spec = tmp_path / "bad.scene"
    spec.write_text(demo_scene_path().read_text().replace("IBBP", "BIP"))
    assert main(["gen", str(spec), str(tmp_path / "x")]) == 2
    assert "gop_template must start with I" in capsys.readouterr().err


def test_validate(gen_dir, tmp_path, capsys):
    assert main(["validate", str(gen_dir / "stream.cvsc")]) == 0
    data = (gen_dir / "stream.cvsc").read_bytes()
    (tmp_path / "t.cvsc").write_bytes(data[:-7])
    assert main(["validate", str(tmp_path / "t.cvsc")]) == 2
    assert "Truncated at offset " in capsys.readouterr().err
    (tmp_path / "o.cvsc").write_bytes(bad_decode_order_bytes())
    assert main(["validate", str(tmp_path / "o.cvsc")]) == 1
    assert "DecodeOrderViolation" in capsys.readouterr().out


def test_propagate_exact(gen_dir, tmp_path, capsys):
    out = tmp_path / "pred"
    rc = main(["propagate", "--sidecar", str(gen_dir / "stream.cvsc"), "--frames", str(gen_dir / "frames"),
               "--keyframe-masks", str(gen_dir / "masks"), "--out", str(out), "--full-res", "--threads", "2"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "R = 0.40" in text and "propagation" in text
    pred, gt = read_masks(out), read_masks(gen_dir / "masks")
    assert all(np.array_equal(pred[i], gt[i]) for i in gt)


def test_propagate_bilinear_labels(gen_dir, tmp_path):
    out = tmp_path / "pred"
    assert main(["propagate", "--sidecar", str(gen_dir / "stream.cvsc"), "--frames", str(gen_dir / "frames"),
                 "--keyframe-masks", str(gen_dir / "masks"), "--out", str(out), "--kernel", "bilinear"]) == 0
    for m in read_masks(out).values():
        assert set(np.unique(m).tolist()) <= {0, 1, 2}


def test_propagate_correction_flag(tmp_path):
    d = tmp_path / "noisy"
    assert main(["gen", str(demo_scene_path()), str(d), "--noise", str(demo_noise_path())]) == 0
    j = {}
    for flag in ([], ["--no-correction"]):
        out = tmp_path / ("off" if flag else "on")
        assert main(["propagate", "--sidecar", str(d / "stream.cvsc"), "--frames", str(d / "frames"),
                     "--keyframe-masks", str(d / "masks"), "--out", str(out), *flag]) == 0
        gt = read_masks(d / "masks")
        j[out.name] = evaluate_sequence({3: read_masks(out)[3]}, {3: gt[3]}).J_mean
    assert j["off"] < j["on"]


def test_propagate_missing_keyframe_mask(gen_dir, tmp_path, capsys):
    masks = tmp_path / "masks"
    masks.mkdir()
    for p in (gen_dir / "masks").glob("*.pgm"):
        if p.name != "mask_00004.pgm":
            (masks / p.name).write_bytes(p.read_bytes())
    rc = main(["propagate", "--sidecar", str(gen_dir / "stream.cvsc"), "--frames", str(gen_dir / "frames"),
               "--keyframe-masks", str(masks), "--out", str(tmp_path / "o")])
    assert rc == 1 and "frame 4" in capsys.readouterr().err


def test_eval(gen_dir, tmp_path, capsys):
    assert main(["eval", "--pred", str(gen_dir / "masks"), "--gt", str(gen_dir / "masks"),
                 "--by-size", "--out", str(tmp_path / "rep")]) == 0
    text = capsys.readouterr().out
    assert "JF_mean=1.000000" in text
    assert all(row in text for row in ("small", "medium", "large"))
    kv = (tmp_path / "rep" / "report.txt").read_text()
    assert kv.splitlines()[0] == "J_mean=1.000000"
    other = tmp_path / "few"
    other.mkdir()
    (other / "mask_00001.pgm").write_bytes((gen_dir / "masks" / "mask_00001.pgm").read_bytes())
    assert main(["eval", "--pred", str(other), "--gt", str(gen_dir / "masks")]) == 1


def test_eval_matches_independent_script(gen_dir, tmp_path):
    from oracles import boundary_f_oracle, jaccard_oracle
    out = tmp_path / "pred"
    assert main(["propagate", "--sidecar", str(gen_dir / "stream.cvsc"), "--frames", str(gen_dir / "frames"),
                 "--keyframe-masks", str(gen_dir / "masks"), "--out", str(out)]) == 0
    pred, gt = read_masks(out), read_masks(gen_dir / "masks")
    rep = evaluate_sequence(pred, gt)
    for o in (1, 2):
        js = [jaccard_oracle(pred[i] == o, gt[i] == o) for i in sorted(gt)]
        fs = [boundary_f_oracle(pred[i] == o, gt[i] == o, 1) for i in sorted(gt)]
        assert np.mean(list(rep.J[o].values())) == pytest.approx(np.mean(js), abs=1e-12)
        assert np.mean(list(rep.F[o].values())) == pytest.approx(np.mean(fs), abs=1e-9)


def test_bench_model(gen_dir, capsys):
    assert main(["bench", "--sidecar", str(gen_dir / "stream.cvsc"), "--t-base", "89.3"]) == 0
    assert "42.92 ms/frame" in capsys.readouterr().out
    assert main(["bench", "--sidecar", str(gen_dir / "stream.cvsc"), "--t-base", "0"]) == 0
    out = capsys.readouterr().out
    assert "(t_prop + t_corr) * (1 - R) = 7.20 ms/frame" in out


def test_bench_measure(gen_dir, capsys):
    assert main(["bench", "--sidecar", str(gen_dir / "stream.cvsc"), "--t-base", "20", "--measure"]) == 0
    assert "measured:" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["propagate", "--sidecar", "x"]) == 2
    assert main(["validate", "/nonexistent/stream.cvsc"]) == 2


def test_threads_env(monkeypatch):
    from covos.cli import _default_threads
    monkeypatch.setenv("COVOS_THREADS", "3")
    assert _default_threads() == 3


def test_module_entry_point(gen_dir):
    r = subprocess.run([sys.executable, "-m", "covos", "validate", str(gen_dir / "stream.cvsc")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("ok:")
