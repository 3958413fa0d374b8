import os
import subprocess

import numpy as np
import pytest

import meaformer


def test_phantom_fields():
    p = meaformer.generate_phantom(3)
    assert p["image"].shape == (64, 64)
    assert p["mask"].dtype == np.uint8
    assert p["mask"].sum() > 0
    assert p["recist"]["long_px"] >= p["recist"]["short_px"] > 0
    x0, y0, x1, y1 = p["box"]
    assert x0 < x1 and y0 < y1


def test_recist_of_disk():
    yy, xx = np.mgrid[:41, :41]
    disk = ((xx - 20) ** 2 + (yy - 20) ** 2 <= 100).astype(np.uint8)
    m = meaformer.recist_from_mask(disk, spacing_mm_per_px=0.5)
    assert m["long_px"] == pytest.approx(20.0)
    assert abs(m["short_px"] - 20.0) <= 1.0 + 1e-6
    assert m["long_mm"] == pytest.approx(10.0)


def test_empty_mask_raises():
    with pytest.raises(meaformer.GeometryError):
        meaformer.recist_from_mask(np.zeros((8, 8), np.uint8))


def test_response_classes():
    assert meaformer.classify_response(20, 13) == "PR"
    assert meaformer.classify_response(20, 25) == "PD"
    assert meaformer.classify_response(20, 20) == "SD"
    assert meaformer.classify_response(20, 0) == "CR"
    with pytest.raises(ValueError):
        meaformer.classify_response(0, 5)


def test_loi_is_twice_the_box():
    x0, y0, x1, y1 = meaformer.loi_from_box((20, 20, 30, 26), 64, 64)
    assert x1 - x0 == pytest.approx(20.0)
    assert y1 - y0 == pytest.approx(20.0)


def test_dataset_round_trip(tmp_path):
    a, b = tmp_path / "a.mead", tmp_path / "b.mead"
    meaformer.generate_dataset(a, 4, seed=7)
    meaformer.generate_dataset(b, 4, seed=7)
    assert a.read_bytes() == b.read_bytes()
    cases = meaformer.read_dataset(a)
    assert len(cases) == 4
    np.testing.assert_array_equal(cases[2]["mask"], meaformer.generate_phantom(cases[2]["seed"])["mask"])


def test_train_and_measure(tmp_path):
    data = tmp_path / "d.mead"
    meaformer.generate_dataset(data, 4, seed=1)
    s1, s2 = tmp_path / "s1.meaf", tmp_path / "s2.meaf"
    log = meaformer.train(data, s1, variant="step1", steps=2, batch=2, size=16, channels=8)
    assert log[0]["step"] == 2 and "total" in log[0]
    meaformer.train(data, s2, variant="step2", steps=2, batch=2, size=16, channels=8)
    m = meaformer.Measurer(s1, s2)
    p = meaformer.read_dataset(data)[0]
    ys, xs = np.nonzero(p["mask"])
    click = (float(xs.mean().round()), float(ys.mean().round()))
    try:
        r = m.measure(p["image"], click, 0.8)
    except meaformer.MeasurementError:
        return  # untrained step 1 may collapse the box
    assert set(r["measurements"]) == {"segmentation", "heatmap", "regression", "fused"}
    assert r["seg_mask"].shape == (64, 64)
    with pytest.raises(meaformer.MeasurementError):
        m.measure(p["image"], (-1.0, 5.0), 0.8)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(meaformer.CheckpointError):
        meaformer.Measurer(tmp_path / "none1.meaf", tmp_path / "none2.meaf")


@pytest.mark.skipif("MEAFORMER_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_generate_is_deterministic(tmp_path):
    cli = os.environ["MEAFORMER_CLI"]
    for name in ("x.mead", "y.mead"):
        subprocess.run([cli, "generate", "--count", "3", "--seed", "7", "--out", str(tmp_path / name)], check=True,
                       capture_output=True)
    assert (tmp_path / "x.mead").read_bytes() == (tmp_path / "y.mead").read_bytes()
    r = subprocess.run([cli, "assess", "--baseline", "20", "--followup", "13"], capture_output=True, text=True)
    assert r.returncode == 0 and '"PR"' in r.stdout
    assert subprocess.run([cli, "train"], capture_output=True).returncode == 2
