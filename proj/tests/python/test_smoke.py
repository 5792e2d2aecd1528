import json
import math
import os
import subprocess

import numpy as np
import pytest

import decorfuse as df


def small_config(epochs=2):
    c = df.Config()
    c.epochs = epochs
    c.fade_epochs = min(c.fade_epochs, epochs)
    return c


def test_config_json_round_trip():
    c = df.Config()
    c.seed = 42
    c.apply_ablation("decoration=off")
    back = df.Config.from_json(c.to_json())
    assert back.seed == 42
    assert back.ablation["decoration"] is False
    assert back.hash() == c.hash()
    with pytest.raises(df.DecorfuseError):
        df.Config.from_json(json.dumps({"not_a_key": 1}))


def test_scenes_are_deterministic_and_shaped():
    c = df.Config()
    a, b = df.generate_scenes(c, 2), df.generate_scenes(c, 2)
    assert a[0] == b[0]
    s = a[0]
    assert s.points.shape[1] == 4
    assert s.image.shape == (64, 96, 3)
    assert len(s.gt) >= 2
    for i, x in enumerate(s.gt):
        for y in s.gt[i + 1:]:
            assert df.rotated_iou_3d(x.box, y.box) == 0.0


def test_project_and_decorate():
    s = df.generate_scenes(df.Config(), 1)[0]
    uvd = df.project(s.points, s.calib)
    assert uvd.shape == (len(s.points), 3)
    fmap = np.random.default_rng(0).uniform(size=(16, 24, 5))
    feats = df.decorate(s.points, fmap, s.calib, 64, 96)
    assert feats.shape == (len(s.points), 5)
    behind = np.isnan(uvd[:, 0])
    assert np.all(feats[behind] == 0.0)


def test_iou_and_ap():
    unit = lambda x: df.Box3D(x, 0, 0, 1, 1, 1, 0)
    assert math.isclose(df.rotated_iou_3d(unit(0), unit(0.5)), 1 / 3)
    gts = [df.LabeledBox(unit(5), 0), df.LabeledBox(unit(10), 0)]
    dets = [df.Detection(0, 0.9, unit(5)), df.Detection(0, 0.8, unit(20)), df.Detection(0, 0.7, unit(10))]
    assert abs(df.ap_40(dets, gts, 0.7, 0) - 0.8333333333333334) < 1e-9


def test_train_infer_checkpoint(tmp_path):
    c = small_config()
    scenes = df.generate_scenes(c, 2)
    r = df.train(c, scenes)
    assert len(r.epochs) == 2
    assert r.log.count("\n") == 2
    assert all(math.isfinite(x) for x in r.step_losses)
    blob = r.checkpoint.save()
    again = df.Checkpoint.load(blob)
    assert again.save() == blob
    dets = df.infer(again, scenes[0])
    assert len(dets) <= c.queries_per_class * c.num_classes
    assert df.heatmap(again, scenes[0]).shape == (16, 16, 2)
    report = df.evaluate(df.infer_all(again, scenes), [s.gt for s in scenes], 2, 0.5, bev=True)
    assert len(report["ap40"]) == 2


def test_scene_dir_round_trip(tmp_path):
    s = df.generate_scenes(df.Config(), 1)[0]
    df.write_scene_dir(tmp_path / "scene_0000", s)
    back = df.read_scene_dir(tmp_path / "scene_0000")
    assert [g.class_id for g in back.gt] == [g.class_id for g in s.gt]
    assert back.points.shape == s.points.shape


def test_gradcheck_passes():
    results = df.gradcheck(instances=3)
    assert results and all(r["passed"] for r in results)


@pytest.mark.skipif("DECORFUSE_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_pipeline(tmp_path):
    cli = os.environ["DECORFUSE_CLI"]
    run = lambda *a: subprocess.run([cli, *a], check=True, capture_output=True, text=True)
    cfg = small_config(1)
    (tmp_path / "cfg.json").write_text(cfg.to_json())
    run("synth", "--count", "2", "--out", str(tmp_path / "scenes"))
    run("train", "--config", str(tmp_path / "cfg.json"), "--scenes", str(tmp_path / "scenes"),
        "--out", str(tmp_path / "run"))
    run("infer", "--checkpoint", str(tmp_path / "run" / "checkpoint.bin"), "--scenes", str(tmp_path / "scenes"),
        "--out", str(tmp_path / "dets"))
    out = run("eval", "--detections", str(tmp_path / "dets"), "--scenes", str(tmp_path / "scenes"),
              "--preset", "pedestrian", "--bev").stdout
    assert "iou_threshold=0.5" in out and "map40=" in out
    bad = subprocess.run([cli, "train", "--ablate", "bogus=on"], capture_output=True, text=True)
    assert bad.returncode == 2
