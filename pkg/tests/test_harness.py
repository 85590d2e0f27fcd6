import json

import numpy as np
import pytest

from gradfuse import cli, gradnet, harness, metrics, raster, synthetic
from gradfuse import operators as ops
from gradfuse import solver as sv


@pytest.fixture(scope="module")
def spec():
    return ops.DegradationSpec.mtf(4, 0.3)


def tiny_weights(bands, seed=0):
    return gradnet.init_weights(2 + 2 * bands, depth=2, width=4, seed=seed)


def write_scenes(root, n=2, size=16, bands=3):
    entries = []
    for i in range(n):
        sc = synthetic.make_scene((size, size), bands, 4, seed=i)
        raster.save(raster.MultiBandImage(sc.pan.astype(np.float32)), root / f"s{i}_pan")
        raster.save(raster.MultiBandImage(sc.ms.astype(np.float32)), root / f"s{i}_ms")
        entries.append({"name": f"s{i}", "pan": f"s{i}_pan", "ms": f"s{i}_ms"})
    return entries


def test_wald_degrade_dims(spec):
    pl, ml = harness.wald_degrade(np.zeros((1, 1000, 1000)), np.zeros((4, 248, 248)), spec)
    assert pl.shape == (1, 250, 250) and ml.shape == (4, 62, 62)
    with pytest.raises(ValueError):
        harness.wald_degrade(np.zeros((1, 1000, 1000)), np.zeros((4, 250, 250)), spec)


def test_center_crop():
    pan = np.arange(1000 * 1000, dtype=float).reshape(1, 1000, 1000)
    ms = np.zeros((2, 250, 250))
    p, m, crop = harness.center_crop_to_ratio(pan, ms, 4)
    assert m.shape == (2, 248, 248) and p.shape == (1, 992, 992)
    assert crop == {"ms_from": [250, 250], "ms_to": [248, 248], "top": 1, "left": 1}
    assert p[0, 0, 0] == pan[0, 4, 4]
    p2, m2, crop2 = harness.center_crop_to_ratio(p, m, 4)
    assert crop2 is None and m2.shape == m.shape


def test_center_crop_errors():
    with pytest.raises(ValueError, match="ratio"):
        harness.center_crop_to_ratio(np.zeros((1, 10, 12)), np.zeros((1, 3, 3)), 4)
    with pytest.raises(ValueError, match="smaller"):
        harness.center_crop_to_ratio(np.zeros((1, 12, 12)), np.zeros((1, 3, 3)), 4)


def test_wald_constant_inputs(spec):
    pl, ml = harness.wald_degrade(np.full((1, 32, 32), 0.25), np.full((2, 8, 8), 0.5), spec)
    np.testing.assert_allclose(pl, 0.25, atol=1e-12)
    np.testing.assert_allclose(ml, 0.5, atol=1e-12)


def test_fuse_proposed_is_the_composition(spec):
    sc = synthetic.make_scene((16, 16), 2, 4, seed=9)
    w = tiny_weights(2, seed=4)
    params = sv.FusionParams(spec, outer_iters=5)
    got = harness.fuse_proposed(sc.pan, sc.ms, w, params)
    ms_up = ops.upsample_interp(sc.ms, 4)
    G1, G2 = gradnet.predict_prior(sc.pan, ms_up, w)
    X, _ = sv.admm_fuse(sc.ms, G1, G2, params, (64, 64), x0=ms_up)
    np.testing.assert_array_equal(got, np.clip(X, 0, 1))


def test_fuse_proposed_constant_scene(spec):
    w = gradnet.zero_weights(4, depth=2, width=4)
    X = harness.fuse_proposed(np.full((1, 32, 32), 0.5), np.full((1, 8, 8), 0.5), w, sv.FusionParams(spec))
    np.testing.assert_allclose(X, 0.5, atol=1e-8)


def test_fuse_proposed_shape_errors(spec):
    w = tiny_weights(1)
    with pytest.raises(ValueError):
        harness.fuse_proposed(np.zeros((2, 32, 32)), np.zeros((1, 8, 8)), w, sv.FusionParams(spec))
    with pytest.raises(ValueError):
        harness.fuse_proposed(np.zeros((1, 30, 32)), np.zeros((1, 8, 8)), w, sv.FusionParams(spec))
    with pytest.raises(ValueError, match="unknown method"):
        harness.fuse("ihs", np.zeros((1, 32, 32)), np.zeros((1, 8, 8)), sv.FusionParams(spec))


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="weights"):
        harness.ExperimentConfig(scenes=[], methods=["proposed"])
    with pytest.raises(ValueError, match="unknown"):
        harness.ExperimentConfig(scenes=[], methods=["bogus"])
    (tmp_path / "exp.json").write_text(json.dumps({"scenes": [{"name": "x", "pan": "nope", "ms": "nope"}], "methods": ["naive"]}))
    with pytest.raises(FileNotFoundError):
        harness.ExperimentConfig.from_json(tmp_path / "exp.json")


def test_run_experiment_report(tmp_path):
    entries = write_scenes(tmp_path, n=3)
    gradnet.save_weights(tiny_weights(3), tmp_path / "net")
    cfg = harness.ExperimentConfig(
        scenes=[{k: (str(tmp_path / v) if k != "name" else v) for k, v in e.items()} for e in entries],
        weights=str(tmp_path / "net"),
        output=str(tmp_path / "out"),
    )
    rep = harness.run_experiment(cfg)
    assert rep.columns == ("ERGAS", "SAM", "Q", "PSNR")
    assert rep.table().splitlines()[1].split("\t")[1:] == ["ERGAS(↓)", "SAM(↓)", "Q(↑)", "PSNR(↑)"]
    for m in harness.METHODS:
        for f in metrics.FIELDS:
            vals = [s["results"][m][f] for s in rep.scenes]
            assert rep.mean[m][f] == pytest.approx(sum(vals) / len(vals), rel=1e-12)
    assert (tmp_path / "out" / "fused" / "s0_proposed.bsq").exists()
    assert json.loads((tmp_path / "out" / "report.json").read_text())["weights_sha256"] == rep.weights_sha256


def test_run_experiment_records_failures(tmp_path):
    entries = write_scenes(tmp_path, n=1)
    raster.save(raster.MultiBandImage(np.zeros((1, 30, 30), np.float32)), tmp_path / "bad_pan")
    raster.save(raster.MultiBandImage(np.zeros((3, 8, 8), np.float32)), tmp_path / "bad_ms")
    scenes = [{"name": "bad", "pan": str(tmp_path / "bad_pan"), "ms": str(tmp_path / "bad_ms")}]
    scenes += [{"name": e["name"], "pan": str(tmp_path / e["pan"]), "ms": str(tmp_path / e["ms"])} for e in entries]
    rep = harness.run_experiment(harness.ExperimentConfig(scenes=scenes, methods=["naive"], output=str(tmp_path / "o")))
    assert "scene" in rep.scenes[0]["errors"]
    assert rep.scenes[1]["results"]["naive"]["psnr_db"] > 0


# -- command line -----------------------------------------------------------------


def test_cli_metrics_identical(tmp_path, capsys):
    img = raster.MultiBandImage(np.random.default_rng(0).random((3, 40, 40)).astype(np.float32))
    raster.save(img, tmp_path / "a")
    assert cli.main(["metrics", "--ref", str(tmp_path / "a"), "--test", str(tmp_path / "a")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["ergas"], out["sam_degrees"], out["psnr_db"]) == (0.0, 0.0, 300.0)
    assert out["q"] == pytest.approx(1.0, abs=1e-12)


def test_cli_proposed_needs_weights(tmp_path):
    write_scenes(tmp_path, n=1)
    with pytest.raises(SystemExit) as exc:
        cli.main(["fuse", "--pan", str(tmp_path / "s0_pan"), "--ms", str(tmp_path / "s0_ms"), "--out", str(tmp_path / "f")])
    assert "--weights" in str(exc.value)


def test_cli_fuse_methods(tmp_path):
    write_scenes(tmp_path, n=1)
    gradnet.save_weights(tiny_weights(3), tmp_path / "net")
    base = ["fuse", "--pan", str(tmp_path / "s0_pan"), "--ms", str(tmp_path / "s0_ms")]
    assert cli.main(base + ["--method", "glp", "--out", str(tmp_path / "g")]) == 0
    rc = cli.main(base + ["--weights", str(tmp_path / "net"), "--out", str(tmp_path / "p"), "--report", str(tmp_path / "r.json")])
    assert rc == 0
    assert raster.load(tmp_path / "p").shape == (3, 64, 64)
    assert "primal_residuals" in json.loads((tmp_path / "r.json").read_text())


def test_cli_missing_input_is_error(tmp_path, capsys):
    assert cli.main(["metrics", "--ref", str(tmp_path / "x"), "--test", str(tmp_path / "x")]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_kernel(capsys):
    assert cli.main(["kernel", "--ratio", "4", "--gnyq", "0.3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["size"] == 13 and sum(out["taps1d"]) == pytest.approx(1.0, abs=1e-12)


def test_cli_degrade(tmp_path):
    raster.save(raster.MultiBandImage(np.ones((1, 40, 40), np.float32)), tmp_path / "pan")
    raster.save(raster.MultiBandImage(np.ones((2, 10, 10), np.float32)), tmp_path / "ms")
    rc = cli.main(["degrade", "--pan", str(tmp_path / "pan"), "--ms", str(tmp_path / "ms"), "--out", str(tmp_path / "d"), "--report", str(tmp_path / "d.json")])
    assert rc == 0
    assert raster.load(tmp_path / "d" / "ms_low").shape == (2, 2, 2)
    assert raster.load(tmp_path / "d" / "ms_ref").shape == (2, 8, 8)
    assert json.loads((tmp_path / "d.json").read_text())["crop"]["ms_to"] == [8, 8]


def test_cli_train(tmp_path):
    write_scenes(tmp_path, n=1)
    rc = cli.main([
        "train", "--pan", str(tmp_path / "s0_pan"), "--ms", str(tmp_path / "s0_ms"), "--out", str(tmp_path / "net"),
        "--depth", "2", "--width", "4", "--patch-size", "8", "--batch-size", "4", "--patches", "8", "--epochs", "2",
        "--report", str(tmp_path / "t.json"),
    ])
    assert rc == 0
    w = gradnet.load_weights(tmp_path / "net")
    assert (w.depth, w.width, w.input_channels) == (2, 4, 8)
    assert len(json.loads((tmp_path / "t.json").read_text())["train_loss"]) == 2


def test_cli_synth_and_experiment(tmp_path, capsys):
    assert cli.main(["synth", "--out", str(tmp_path), "--scenes", "2", "--size", "12", "--bands", "2"]) == 0
    assert cli.main(["experiment", "--config", str(tmp_path / "exp.json")]) == 0
    assert "glp" in capsys.readouterr().out
    assert (tmp_path / "results" / "table.txt").exists()


def test_cli_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main(["sharpen"])
    assert exc.value.code != 0
