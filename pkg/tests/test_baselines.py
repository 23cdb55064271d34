import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mtof.baselines import (
    LinearSvmModel,
    NaiveCnn,
    augment_batch,
    cnn_detector_from_blob,
    freq_detector_train,
    frequency_features,
    naive_cnn_train,
    pca_fit,
    pca_project,
    pca_reconstruct,
    pca_svm_train,
    save_cnn_detector,
    save_svm_detector,
    svm_detector_from_blob,
    svm_objective,
    svm_train,
)
from mtof.checkpoint import load_checkpoint
from mtof.representation import PairTensors, TrainConfig

# --- PCA --------------------------------------------------------------------


def test_pca_line_direction():
    t = np.linspace(-3, 3, 21)
    direction = np.array([3.0, 4.0]) / 5
    x = t[:, None] * direction
    model = pca_fit(x, k=1)
    assert abs(abs(model.axes[0] @ direction) - 1) < 1e-12


def test_pca_isotropic_ratio_matches_brute_force():
    x = np.random.default_rng(0).normal(size=(4000, 2))
    model = pca_fit(x, k=2)
    cov = np.cov(x.T)
    evals = np.sort(np.linalg.eigvalsh(cov))[::-1]
    np.testing.assert_allclose(model.explained_variance, evals, rtol=1e-10)
    assert model.explained_variance[0] / model.explained_variance[1] == pytest.approx(1.0, abs=0.15)


def test_pca_subspace_lossless():
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.normal(size=(6, 2)))[0].T
    x = rng.normal(size=(30, 2)) @ basis + rng.normal(size=6)
    model = pca_fit(x, k=2)
    np.testing.assert_allclose(pca_reconstruct(pca_project(x, model), model), x, atol=1e-8)


def test_pca_projection_examples():
    x = np.random.default_rng(2).normal(size=(50, 4))
    m = pca_fit(x, k=2)
    np.testing.assert_allclose(pca_project(m.mean, m), [0, 0], atol=1e-12)
    np.testing.assert_allclose(pca_project(m.mean + m.axes[0], m), [1, 0], atol=1e-12)
    v = np.array([0.3, -1.0, 2.0, 0.5])
    assert pca_project(v, m)[1] == pytest.approx(float(np.dot(v - m.mean, m.axes[1])))


@given(st.integers(3, 40), st.integers(2, 6), st.integers(0, 10_000))
def test_pca_axes_orthonormal_and_ordered(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d)) * np.arange(1, d + 1)
    m = pca_fit(x, k=2)
    np.testing.assert_allclose(m.axes @ m.axes.T, np.eye(2), atol=1e-9)
    proj = pca_project(x, m)
    assert proj[:, 0].var() >= proj[:, 1].var() - 1e-9


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_fit(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        pca_fit(np.zeros((5, 1)), k=2)


# --- SVM --------------------------------------------------------------------


def test_svm_separable_1d():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    m = svm_train(x, y)
    assert np.all(np.sign(m.decision(x)) == y)


def test_zero_model_decision():
    m = LinearSvmModel(np.zeros(3), 0.0)
    assert np.all(m.decision(np.random.default_rng(0).normal(size=(5, 3))) == 0)


@given(st.integers(0, 10_000))
def test_svm_label_flip_flips_decisions(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(20, 3))
    y = np.where(rng.random(20) < 0.5, -1.0, 1.0)
    y[:2] = [-1, 1]
    a = svm_train(x, y, epochs=30)
    b = svm_train(x, -y, epochs=30)
    np.testing.assert_allclose(a.decision(x), -b.decision(x), atol=1e-12)


@given(st.integers(0, 10_000))
def test_svm_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 4))
    y = np.where(x[:, 0] + 0.5 * rng.normal(size=30) > 0, 1.0, -1.0)
    y[:2] = [-1, 1]
    m = svm_train(x, y, epochs=60)
    log = np.array(m.objective_log)
    assert len(log) == 61
    assert np.all(np.diff(log) <= 0)
    assert svm_objective(m.weight, m.bias, x, y, 1e-3) == log[-1]


def test_svm_duplicate_features_cannot_separate():
    x = np.ones((40, 2))
    y = np.array([-1.0, 1.0] * 20)
    m = svm_train(x, y)
    assert np.mean(np.sign(m.decision(x) + 1e-15) == y) == pytest.approx(0.5)


def test_svm_needs_two_classes():
    with pytest.raises(ValueError):
        svm_train(np.zeros((3, 1)), np.ones(3))


# --- spectrum SVM / PCA SVM -------------------------------------------------


def _train(tiny_samples):
    return PairTensors.from_samples([s for s in tiny_samples if s.split == "train"])


def test_frequency_feature_length(tiny_samples):
    data = _train(tiny_samples)
    assert frequency_features(data).shape == (len(data), 8)
    assert frequency_features(data, "image").shape == (len(data), 8)
    with pytest.raises(ValueError):
        frequency_features(data, "audio")


def test_freq_svm_separates_synthetic_tof(tiny_samples):
    data = _train(tiny_samples)
    det = freq_detector_train(data)
    p = det.p_display(data)
    acc = np.mean((p >= 0.5) == (data.labels.numpy() == 1))
    assert acc > 0.9
    assert np.all((p >= 0) & (p <= 1))


def test_svm_detectors_round_trip(tiny_samples, tmp_path):
    data = _train(tiny_samples)
    for det in (freq_detector_train(data), pca_svm_train(data)):
        save_svm_detector(tmp_path / "d.pt", det)
        back = svm_detector_from_blob(load_checkpoint(tmp_path / "d.pt", det.kind))
        assert np.array_equal(back.p_display(data), det.p_display(data))


# --- naive CNN --------------------------------------------------------------


def test_cnn_probabilities_and_shapes():
    net = NaiveCnn(4, (4, 8, 8)).eval()
    logits = net(torch.rand(3, 4, 16, 16))
    assert logits.shape == (3, 2)
    assert torch.allclose(torch.softmax(logits, -1).sum(-1), torch.ones(3))


def test_augment_keeps_shape_and_content():
    x = torch.arange(2 * 1 * 4 * 4, dtype=torch.float32).reshape(2, 1, 4, 4)
    y = augment_batch(x, np.random.default_rng(0))
    assert y.shape == x.shape
    for a, b in zip(x, y):
        assert torch.equal(a.flatten().sort().values, b.flatten().sort().values)


def test_cnn_deterministic_and_round_trip(tiny_samples, tmp_path):
    data = _train(tiny_samples)
    cfg = TrainConfig(widths=(4, 8, 8), epochs=2, seed=4, augment=True)
    a = naive_cnn_train(data, cfg)
    b = naive_cnn_train(data, cfg)
    assert a.log == b.log
    assert np.array_equal(a.p_display(data), b.p_display(data))
    save_cnn_detector(tmp_path / "c.pt", a)
    back = cnn_detector_from_blob(load_checkpoint(tmp_path / "c.pt", "naive_cnn"))
    assert np.array_equal(back.p_display(data), a.p_display(data))


def test_image_cnn_uses_three_channels(tiny_samples):
    data = _train(tiny_samples)
    det = naive_cnn_train(data, TrainConfig(widths=(4, 8, 8), epochs=1), in_channels=3)
    assert det.model.features[0].in_channels == 3
    assert det.p_display(data).shape == (len(data),)


def test_cnn_needs_both_classes(tiny_samples):
    reals = PairTensors.from_samples([s for s in tiny_samples if not s.is_display])
    with pytest.raises(ValueError):
        naive_cnn_train(reals, TrainConfig(widths=(4, 8, 8), epochs=1))
