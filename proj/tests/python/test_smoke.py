"""Smoke tests for the python surface: imports, numpy marshalling, and a micro
pipeline. The heavy end-to-end paths are exercised by the C++ suites."""

import json
import math
import os

import numpy as np
import pytest

import vsdsr


def test_schedule_shape_and_monotonicity():
    sched = vsdsr.make_schedule("cosine", 100)
    assert sched.T == 100
    assert sched.kind == "cosine"
    assert sched.alpha_bar(0) == 1.0
    prev = 1.0
    for t in range(1, 101):
        ab = sched.alpha_bar(t)
        assert 0.0 < ab < prev
        prev = ab


def test_add_noise_matches_closed_form():
    sched = vsdsr.make_schedule("linear", 200)
    rng = np.random.default_rng(11)
    x0 = rng.uniform(-1, 1, size=(4, 6, 6))
    eps = rng.standard_normal((4, 6, 6))
    for t in (0, 37, 200):
        ab = sched.alpha_bar(t)
        want = math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
        got = vsdsr.add_noise(x0, t, eps, sched)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


def test_scene_generation_shapes_and_split():
    gt, ds = vsdsr.generate_synthetic_scene(seed=21, grid_res=16, n_views=7, hr_size=16)
    assert ds.n_views == 7
    assert ds.has_hr
    assert ds.near < ds.far
    assert sorted(ds.train_indices + ds.eval_indices) == list(range(7))
    hr = ds.hr_image(0)
    lr = ds.lr_image(0)
    assert hr.shape == (16, 16, 3)
    assert lr.shape == (4, 4, 3)
    assert hr.min() >= 0.0 and hr.max() <= 1.0
    # the LR layer is the 4x4 box average of HR
    box = hr.reshape(4, 4, 4, 4, 3).mean(axis=(1, 3))
    np.testing.assert_allclose(lr, box, atol=1e-12)


def test_psnr_closed_form():
    a = np.full((8, 8, 3), 0.5)
    b = a + 1.0 / 255.0
    assert abs(vsdsr.psnr(a, b) - 20.0 * math.log10(255.0)) < 1e-9
    assert math.isinf(vsdsr.psnr(a, a))


def test_codec_roundtrip_shapes():
    codec = vsdsr.CodecParams.random_init(31)
    rng = np.random.default_rng(32)
    img = rng.uniform(0, 1, size=(16, 16, 3))
    z = vsdsr.encode(img, codec)
    assert z.shape == (4, 4, 4)
    np.testing.assert_array_equal(z, vsdsr.encode(img, codec))
    rec = vsdsr.decode(z, codec)
    assert rec.shape == (16, 16, 3)
    assert rec.min() >= 0.0 and rec.max() <= 1.0
    up = vsdsr.upsample_x4(img)
    assert up.shape == (64, 64, 3)


def test_config_errors():
    with pytest.raises(vsdsr.ConfigError):
        vsdsr.RunConfig.from_json(json.dumps({"bogus_key": 1}))
    cfg = vsdsr.RunConfig.from_json(json.dumps({"method": "no_such_method"}))
    with pytest.raises(vsdsr.ConfigError):
        cfg.validate()
    good = vsdsr.RunConfig.from_json("{}")
    assert good.to_json()["method"] == "vsd_lora_spaced"
    assert good.canonical().endswith("\n")


def _micro_config(tmp_path):
    return vsdsr.RunConfig.from_json(
        json.dumps(
            {
                "seed": 9,
                "method": "identity",
                "out_dir": str(tmp_path / "run"),
                "data_dir": str(tmp_path / "scene"),
                "ckpt_dir": str(tmp_path / "ckpt"),
                "schedule": {"kind": "cosine", "T": 200},
                "scene": {"synthetic_seed": 51, "grid_res": 16, "n_views": 5, "hr_size": 16},
                "pretrain": {
                    "scene_seeds": [61, 62],
                    "codec_epochs": 2,
                    "denoiser_steps": 25,
                    "batch_size": 2,
                },
                "fit_lr": {"steps": 80, "grid_res": 12, "n_samples": 8, "ray_batch": 256},
            }
        )
    )


def test_micro_pipeline(tmp_path):
    cfg = _micro_config(tmp_path)
    cfg.validate()
    n_files = vsdsr.run_generate(cfg, force=False)
    assert n_files > 0
    assert (tmp_path / "scene" / "manifest.json").exists()
    vsdsr.run_pretrain(cfg, verbose=False)
    vsdsr.run_fit_lr(cfg, verbose=False)

    codec = vsdsr.CodecParams.load(str(tmp_path / "ckpt" / "codec.bin"))
    bundle = vsdsr.DenoiserBundle.load(str(tmp_path / "ckpt" / "denoiser.bin"))
    assert bundle.schedule.T == 200
    assert bundle.final_val_mse >= 0.0

    ds = vsdsr.load_dataset_dir(str(tmp_path / "scene"))
    field = vsdsr.RadianceField.load(str(tmp_path / "ckpt" / "field_lr.bin"))
    assert field.res == 12
    view = ds.train_indices[0]
    lr_gt = ds.lr_image(view)
    render = vsdsr.RadianceField.render(
        field, ds.pose(view).scaled(0.25), 4, 4, n_samples=8, near=ds.near, far=ds.far
    )
    assert render.shape == (4, 4, 3)
    assert vsdsr.psnr(np.clip(render, 0, 1), lr_gt) > 10.0

    # one refinement pass through the bound upscalers
    x0 = vsdsr.encode(vsdsr.upsample_x4(lr_gt), codec)
    out, trace = vsdsr.sds_upscale(x0, lr_gt, 0, 0, bundle, codec, seed=3, M=2, eta1=0.05)
    assert out.shape == x0.shape
    assert len(trace) == 2 and all(math.isfinite(row[2]) for row in trace)
    out2, trace2 = vsdsr.vsd_upscale(
        x0, lr_gt, 0, 0, bundle, codec, seed=3, M=3, lora_interval=1, adapter_rank=2
    )
    assert out2.shape == x0.shape
    assert len(trace2) == 3 and all(math.isfinite(row[3]) for row in trace2)

    # identity refusal path: superres without adapters still needs checkpoints
    with pytest.raises(vsdsr.ConfigError):
        vsdsr.run_generate(cfg, force=False)  # non-empty target


def test_niqe_orders_noise():
    model_path = os.path.join(vsdsr_data_root(), "niqe_pristine.bin")
    if not os.path.exists(model_path):
        pytest.skip("pristine model not on the default data path")
    model = vsdsr.NiqeModel.load(model_path)
    _, ds = vsdsr.generate_synthetic_scene(seed=33, grid_res=16, n_views=2, hr_size=128)
    clean = ds.hr_image(0)
    rng = np.random.default_rng(34)
    noisy = np.clip(clean + rng.normal(0.0, 50.0 / 255.0, size=clean.shape), 0.0, 1.0)
    assert vsdsr.niqe(clean, model) < vsdsr.niqe(noisy, model)


def vsdsr_data_root():
    return os.environ.get("VSDSR_DATA", "data")
