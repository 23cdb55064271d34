import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mtof.representation import (
    DISPLAY,
    REAL,
    PairTensors,
    RepNet,
    TrainConfig,
    batch_losses,
    concat_modalities,
    evaluate_losses,
    load_repnet,
    loss_log_csv,
    mse,
    per_sample_rep_loss,
    rec_loss_multimodal,
    rep_loss,
    save_repnet,
    train_representation,
)

from oracles import gradient_check_errors, small_net


# --- losses -----------------------------------------------------------------


def test_mse_examples():
    x = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    assert mse(x, x) == 0
    assert mse(x, x + 0.3).item() == pytest.approx(0.09)


@given(st.integers(0, 10_000))
def test_losses_non_negative_and_symmetric(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(3, 4, 2, 2, generator=g), torch.randn(3, 4, 2, 2, generator=g)
    assert mse(a, b) >= 0 and rep_loss(a, b) >= 0
    assert rep_loss(a, b) == rep_loss(b, a)


def test_rep_loss_examples():
    z = torch.tensor([[1.0, 2.0]])
    assert rep_loss(z, z) == 0
    assert rep_loss(z, torch.zeros(1, 2)).item() == 1.5
    with pytest.raises(ValueError):
        rep_loss(torch.zeros(1, 2), torch.zeros(1, 3))


def test_multimodal_loss_rejects_display_pairs():
    net = small_net()
    with pytest.raises(ValueError):
        rec_loss_multimodal(net, torch.zeros(2, 3, 8, 8, dtype=torch.float64), torch.zeros(2, 1, 8, 8, dtype=torch.float64), torch.tensor([REAL, DISPLAY]))


# --- shapes -----------------------------------------------------------------


def test_concat_modalities_channel_order():
    rgb = torch.stack([torch.full((2, 2), float(c)) for c in range(3)])[None]
    tof = torch.full((1, 1, 2, 2), 9.0)
    x = concat_modalities(rgb, tof)
    assert x.shape == (1, 4, 2, 2)
    assert [x[0, c, 0, 0].item() for c in range(4)] == [0.0, 1.0, 2.0, 9.0]
    with pytest.raises(ValueError):
        concat_modalities(rgb, torch.zeros(1, 1, 3, 2))


def test_paper_scale_shapes():
    net = RepNet((4, 4, 8)).eval()
    z = net.encode_tof(torch.zeros(1, 1, 160, 160))
    assert z.shape == (1, 8, 20, 20)
    out = net.generate_t(z)
    assert out.shape == (1, 1, 160, 160)
    with pytest.raises(ValueError):
        net.encode_tof(torch.zeros(1, 1, 161, 160))
    with pytest.raises(ValueError):
        net.generate_m(torch.zeros(1, 7, 20, 20))
    with pytest.raises(ValueError):
        net.encode_multimodal(torch.zeros(1, 3, 16, 16))


@given(st.integers(1, 6), st.integers(1, 6))
def test_encode_generate_preserves_size(a, b):
    net = small_net(dtype=torch.float32).eval()
    x = torch.rand(1, 1, 8 * a, 8 * b)
    assert net.generate_t(net.encode_tof(x)).shape == x.shape
    x4 = torch.rand(1, 4, 8 * a, 8 * b)
    assert net.generate_m(net.encode_multimodal(x4)).shape == x.shape


def test_eval_mode_deterministic():
    net = small_net().eval()
    x = torch.rand(2, 1, 16, 16, dtype=torch.float64)
    assert torch.equal(net.generate_t(net.encode_tof(x)), net.generate_t(net.encode_tof(x)))


# --- gradient check ---------------------------------------------------------


def test_gradients_match_finite_differences():
    errors = gradient_check_errors(n_dirs=20)
    assert max(errors.values()) < 1e-4, errors


# --- training ---------------------------------------------------------------


def _tensors(samples):
    return PairTensors.from_samples([s for s in samples if s.split == "train"])


def _cfg(**kw):
    return TrainConfig(**{"widths": (4, 8, 8), "epochs": 3, "batch_size": 16, "seed": 5, **kw})


def test_training_never_reads_display_rgb(tiny_samples):
    data = _tensors(tiny_samples)
    assert (data.labels == DISPLAY).sum() > 0
    train_representation(data, _cfg())
    assert data.rgb_reads_display == 0
    staged = _tensors(tiny_samples)
    train_representation(staged, _cfg(staged=True, epochs=2))
    assert staged.rgb_reads_display == 0


def test_counter_detects_display_reads(tiny_samples):
    data = _tensors(tiny_samples)
    data.rgb(torch.arange(len(data)))
    assert data.rgb_reads_display == int((data.labels == DISPLAY).sum())


def test_batch_losses_with_display_only_batch(tiny_samples):
    data = _tensors(tiny_samples)
    net = RepNet((4, 8, 8))
    idx = torch.nonzero(data.labels == DISPLAY).flatten()[:4]
    out = batch_losses(net, data, idx, _cfg())
    assert out["rec_m"] == 0 and out["rep"] == 0 and out["rec_t"] > 0


def test_training_deterministic_and_decreasing(tiny_samples):
    a = train_representation(_tensors(tiny_samples), _cfg(epochs=6))
    b = train_representation(_tensors(tiny_samples), _cfg(epochs=6))
    assert a.log == b.log
    assert a.log[-1]["total"] < a.log[0]["total"]
    for x, y in zip(a.net.state_dict().values(), b.net.state_dict().values()):
        assert torch.equal(x, y)


def test_training_requires_real_samples(tiny_samples):
    disp = [s for s in tiny_samples if s.is_display]
    with pytest.raises(ValueError):
        train_representation(PairTensors.from_samples(disp), _cfg())


def test_checkpoint_round_trip(tiny_samples, tmp_path):
    data = _tensors(tiny_samples)
    res = train_representation(data, _cfg(epochs=2))
    save_repnet(tmp_path / "r.pt", res)
    back = load_repnet(tmp_path / "r.pt")
    assert back.config == res.config and back.log == res.log
    test = PairTensors.from_samples([s for s in tiny_samples if s.split != "train"])
    assert evaluate_losses(res.net, test, res.config) == evaluate_losses(back.net, test, back.config)


def test_loss_log_csv_rows(tiny_samples):
    res = train_representation(_tensors(tiny_samples), _cfg(epochs=3))
    lines = loss_log_csv(res.log).strip().splitlines()
    assert lines[0] == "epoch,L_recM,L_recT,L_rep,total"
    assert len(lines) == 1 + 3


def test_config_round_trip_and_validation():
    cfg = _cfg(staged=True)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(widths=(1, 2))


@pytest.mark.slow
def test_display_pairs_disagree_more_in_latent_space():
    from mtof.synth_gen import SynthConfig, gen_samples

    samples = gen_samples(SynthConfig(n_objects=4, samples_per_object=20, image_size=(32, 32), seed=2))
    train = PairTensors.from_samples([s for s in samples if s.split == "train"])
    res = train_representation(train, TrainConfig(widths=(8, 16, 32), epochs=8, seed=2))
    held = [s for s in samples if s.split != "train"]
    data = PairTensors.from_samples(held)
    per = per_sample_rep_loss(res.net, data.rgb(torch.arange(len(data))), data.tof).numpy()
    labels = data.labels.numpy()
    assert per[labels == REAL].mean() < per[labels == DISPLAY].mean()
    assert np.isfinite(per).all()
