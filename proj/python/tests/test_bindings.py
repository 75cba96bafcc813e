import math

import numpy as np
import pytest

nq = pytest.importorskip("nightiq")


def test_worked_rank_examples():
    pred = [1, 2, 3, 5, 4]
    mos = [1, 2, 3, 4, 5]
    assert nq.srcc(pred, mos) == pytest.approx(0.9, abs=1e-15)
    assert nq.krcc(pred, mos) == pytest.approx(0.8, abs=1e-15)


def test_logistic_fit_on_affine_predictions():
    mos = np.linspace(0.0, 1.0, 9)
    fit = nq.plcc_rmse(list(2.0 * mos + 3.0), list(mos))
    assert fit["plcc"] == pytest.approx(1.0, abs=1e-6)
    assert fit["rmse"] < 1e-6


def test_metric_errors_raise_value_error():
    with pytest.raises(ValueError):
        nq.srcc([1, 2], [1, 2])


def test_camera_response_identity_and_eai_range():
    for v in (0.0, 0.25, 0.5, 1.0):
        assert nq.camera_response(v, 1.0) == v
    night = np.random.default_rng(0).uniform(0.0, 0.2, size=(8, 8, 3))
    eai = nq.make_eai(night)
    assert eai.shape == (8, 8, 3)
    assert eai.min() >= 0.0 and eai.max() <= 1.0
    assert eai.mean() > night.mean()


def test_penalty_curve_peaks_at_c():
    grid = np.arange(1, 4000) * 1e-4
    values = [nq.penalty_curve(m, 0.1) for m in grid]
    assert grid[int(np.argmax(values))] == pytest.approx(0.1, abs=1e-4)
    assert nq.penalty_curve(0.0, 0.1) == 0.0


def test_ttest_is_antisymmetric():
    a = [0.90, 0.91, 0.92, 0.93, 0.94]
    b = [0.80, 0.82, 0.81, 0.83, 0.79]
    ab = nq.significance_ttest(a, b)
    ba = nq.significance_ttest(b, a)
    assert ab["statistic"] == pytest.approx(-ba["statistic"])
    assert ab["decision"] != ba["decision"]
    same = nq.significance_ttest(a, a)
    assert same["p_value"] == pytest.approx(1.0)


def test_rank_n_reaches_one_at_group_size():
    groups = [([0.1, 0.5, 0.3], [0.2, 0.1, 0.9]), ([0.4, 0.2, 0.6], [0.7, 0.3, 0.1])]
    acc = [nq.rank_n_accuracy(groups, n) for n in (1, 2, 3)]
    assert acc == sorted(acc)
    assert acc[-1] == 1.0


def test_tiny_training_round_trip(tmp_path):
    manifest = nq.write_synthetic_corpus(tmp_path / "corpus", count=4, size=16, seed=3)
    log = nq.train(
        manifest,
        tmp_path / "model.ckpt",
        {"input_size": "16x16", "batch_size": 2, "epochs": 1, "seed": 5},
    )
    assert len(log) == 1
    entry = log[0]
    assert math.isfinite(entry["total"])
    assert entry["total"] == pytest.approx(
        0.1 * entry["idm"] + 0.2 * entry["feat"] + 0.7 * entry["quality"], abs=1e-6
    )

    model = nq.Predictor(tmp_path / "model.ckpt")
    image = nq.load_image(tmp_path / "corpus" / "img_000.png")
    score = model.predict(tmp_path / "corpus" / "img_000.png")
    assert math.isfinite(score)
    assert model.predict_array(image) == score
    reflectance, illumination = model.decompose(image)
    assert reflectance.shape == (16, 16, 3)
    assert illumination.shape == (16, 16, 1)


def test_unknown_gradcheck_component():
    with pytest.raises(Exception):
        nq.gradcheck("nonsense")
