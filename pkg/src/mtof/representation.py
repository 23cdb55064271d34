"""ToF representation network: multi-modal and ToF-modal embedding models.

E_M sees the 4-channel [R, G, B, ToF] stack of real pairs only; E_T sees
the ToF map of every pair. Both generators reconstruct the ToF map, and
an L1 term pulls z_M and z_T together on real pairs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import torch
from torch import nn

from mtof.data_model import PairSample
from mtof.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

REAL, DISPLAY = 0, 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    lambda_rec_m: float = 1.0
    lambda_rec_t: float = 1.0
    lambda_rep: float = 1.0
    widths: tuple[int, int, int] = (32, 64, 128)
    crop: int | None = None
    seed: int = 0
    staged: bool = False
    finetune: bool = False
    augment: bool = False
    hidden: int = 128

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if min(self.lambda_rec_m, self.lambda_rec_t, self.lambda_rep) < 0:
            raise ValueError("loss weights must be non-negative")
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ValueError(f"widths must be three positive ints, got {self.widths}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)


class PairTensors:
    """Stacked samples as tensors with instrumented RGB access.

    ``rgb_reads_display`` counts display-sample RGB rows handed out, so
    training code can prove it never looked at them.
    """

    def __init__(self, rgb: torch.Tensor, tof: torch.Tensor, labels: torch.Tensor, ids: Sequence[str] = ()):
        self._rgb = rgb
        self.tof = tof
        self.labels = labels
        self.ids = list(ids) if ids else [str(i) for i in range(len(labels))]
        self.rgb_reads_display = 0

    @classmethod
    def from_samples(cls, samples: Sequence[PairSample], dtype=torch.float32) -> "PairTensors":
        if not samples:
            raise ValueError("no samples")
        rgb = np.stack([s.rgb.values for s in samples]).transpose(0, 3, 1, 2)
        tof = np.stack([s.tof.values for s in samples])[:, None]
        labels = np.array([DISPLAY if s.is_display else REAL for s in samples])
        return cls(
            torch.as_tensor(rgb, dtype=dtype),
            torch.as_tensor(tof, dtype=dtype),
            torch.as_tensor(labels, dtype=torch.long),
            [s.sample_id for s in samples],
        )

    def __len__(self) -> int:
        return len(self.labels)

    def rgb(self, idx: torch.Tensor) -> torch.Tensor:
        self.rgb_reads_display += int((self.labels[idx] == DISPLAY).sum())
        return self._rgb[idx]

    def subset(self, idx) -> "PairTensors":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return PairTensors(self._rgb[idx], self.tof[idx], self.labels[idx], [self.ids[i] for i in idx.tolist()])


def encoder(in_channels: int, widths: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_channels
    for w in widths:
        layers += [nn.Conv2d(prev, w, kernel_size=3, stride=2, padding=1), nn.ReLU(), nn.BatchNorm2d(w, eps=1e-5, momentum=0.1)]
        prev = w
    return nn.Sequential(*layers)


def generator(widths: Sequence[int]) -> nn.Sequential:
    # no skip connections: everything must pass through the latent code
    c1, c2, c3 = widths
    return nn.Sequential(
        nn.ConvTranspose2d(c3, c2, kernel_size=2, stride=2),
        nn.ReLU(),
        nn.BatchNorm2d(c2),
        nn.ConvTranspose2d(c2, c1, kernel_size=2, stride=2),
        nn.ReLU(),
        nn.BatchNorm2d(c1),
        nn.ConvTranspose2d(c1, 1, kernel_size=2, stride=2),
    )


def _check_divisible(x: torch.Tensor) -> None:
    h, w = x.shape[-2:]
    if h % 8 or w % 8:
        raise ValueError(f"spatial size {h}x{w} must be divisible by 8")


class RepNet(nn.Module):
    def __init__(self, widths: Sequence[int] = (32, 64, 128)):
        super().__init__()
        self.widths = tuple(widths)
        self.enc_m = encoder(4, widths)
        self.gen_m = generator(widths)
        self.enc_t = encoder(1, widths)
        self.gen_t = generator(widths)

    def encode_multimodal(self, x4: torch.Tensor) -> torch.Tensor:
        if x4.shape[1] != 4:
            raise ValueError(f"multi-modal encoder expects 4 channels, got {x4.shape[1]}")
        _check_divisible(x4)
        return self.enc_m(x4)

    def encode_tof(self, tof: torch.Tensor) -> torch.Tensor:
        if tof.shape[1] != 1:
            raise ValueError(f"ToF encoder expects 1 channel, got {tof.shape[1]}")
        _check_divisible(tof)
        return self.enc_t(tof)

    def generate_m(self, z: torch.Tensor) -> torch.Tensor:
        return self.gen_m(self._check_latent(z))

    def generate_t(self, z: torch.Tensor) -> torch.Tensor:
        return self.gen_t(self._check_latent(z))

    def _check_latent(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.widths[2]:
            raise ValueError(f"latent must be (n, {self.widths[2]}, h, w), got {tuple(z.shape)}")
        return z

    def encoders(self) -> list[nn.Module]:
        return [self.enc_m, self.enc_t]


def concat_modalities(rgb: torch.Tensor, tof: torch.Tensor) -> torch.Tensor:
    """Stack (n,3,h,w) RGB and (n,1,h,w) ToF into (n,4,h,w), ToF last."""
    if rgb.shape[-2:] != tof.shape[-2:] or rgb.shape[0] != tof.shape[0]:
        raise ValueError(f"rgb {tuple(rgb.shape)} and tof {tuple(tof.shape)} do not align")
    return torch.cat([rgb, tof], dim=1)


GEN_OUT_SCALE = 0.05
GEN_OUT_BIAS = 0.5


def init_weights(net: nn.Module, seed: int) -> None:
    """Fan-in scaled uniform init; generator heads start near mid-range output.

    Reconstructions live in [0, 1]. A unit-variance head would spend most
    of a short run shrinking its own output, so the last transposed
    convolution of each generator is scaled down and biased to 0.5.
    """
    gen = torch.Generator().manual_seed(seed)
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = m.weight.shape[0] * m.weight[0, 0].numel()
            else:
                fan_in = m.weight[0].numel()
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-np.sqrt(3.0) * bound, np.sqrt(3.0) * bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)
    if isinstance(net, RepNet):
        with torch.no_grad():
            for g in (net.gen_m, net.gen_t):
                g[-1].weight.mul_(GEN_OUT_SCALE)
                g[-1].bias.fill_(GEN_OUT_BIAS)


# ---------------------------------------------------------------------------
# Losses


def mse(target: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    return ((target - recon) ** 2).mean()


def rep_loss(z_m: torch.Tensor, z_t: torch.Tensor) -> torch.Tensor:
    if z_m.shape != z_t.shape:
        raise ValueError(f"latent shapes differ: {tuple(z_m.shape)} vs {tuple(z_t.shape)}")
    return (z_m - z_t).abs().mean()


def rec_loss_multimodal(net: RepNet, rgb: torch.Tensor, tof: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if (labels == DISPLAY).any():
        raise ValueError("multi-modal reconstruction loss is defined on real pairs only")
    return mse(tof, net.generate_m(net.encode_multimodal(concat_modalities(rgb, tof))))


def rec_loss_tof(net: RepNet, tof: torch.Tensor) -> torch.Tensor:
    return mse(tof, net.generate_t(net.encode_tof(tof)))


def batch_losses(
    net: RepNet, data: PairTensors, idx: torch.Tensor, config: TrainConfig
) -> dict[str, torch.Tensor]:
    """The three loss terms on one batch.

    RGB is fetched only for the real rows; display rows contribute to the
    ToF-modal reconstruction alone.
    """
    tof = data.tof[idx]
    labels = data.labels[idx]
    real_idx = idx[labels == REAL]

    z_t = net.encode_tof(tof)
    rec_t = mse(tof, net.generate_t(z_t))
    zero = tof.new_zeros(())
    if len(real_idx) == 0:
        rec_m, rep = zero, zero
    else:
        tof_real = data.tof[real_idx]
        z_m = net.encode_multimodal(concat_modalities(data.rgb(real_idx), tof_real))
        rec_m = mse(tof_real, net.generate_m(z_m))
        rep = rep_loss(z_m, z_t[labels == REAL])
    total = config.lambda_rec_m * rec_m + config.lambda_rec_t * rec_t + config.lambda_rep * rep
    return {"rec_m": rec_m, "rec_t": rec_t, "rep": rep, "total": total}


def per_sample_rep_loss(net: RepNet, rgb: torch.Tensor, tof: torch.Tensor) -> torch.Tensor:
    """Latent disagreement of each pair, evaluation mode."""
    net.eval()
    with torch.no_grad():
        z_m = net.encode_multimodal(concat_modalities(rgb, tof))
        z_t = net.encode_tof(tof)
    return (z_m - z_t).abs().flatten(1).mean(dim=1)


# ---------------------------------------------------------------------------
# Training


class CroppedView(PairTensors):
    """A batch-local crop of a PairTensors that forwards RGB accounting."""

    def __init__(self, parent: PairTensors, idx: torch.Tensor, size: int | None, rng):
        top_left = None
        h, w = parent.tof.shape[-2:]
        if size is not None:
            if rng is None:
                top_left = ((h - size) // 2, (w - size) // 2)
            else:
                top_left = (int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)))
        self._parent = parent
        self._idx = idx
        self._window = (
            (slice(None), slice(None))
            if top_left is None
            else (slice(top_left[0], top_left[0] + size), slice(top_left[1], top_left[1] + size))
        )
        self.tof = parent.tof[idx][..., self._window[0], self._window[1]]
        self.labels = parent.labels[idx]
        self.ids = [parent.ids[i] for i in idx.tolist()]

    def rgb(self, local_idx: torch.Tensor) -> torch.Tensor:
        out = self._parent.rgb(self._idx[local_idx])
        return out[..., self._window[0], self._window[1]]


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[torch.Tensor]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [torch.as_tensor(perm[i : i + batch_size]) for i in range(0, n, batch_size)]


@dataclass
class RepNetResult:
    net: RepNet
    config: TrainConfig
    log: list[dict] = field(default_factory=list)
    epoch: int = 0


def _run_epochs(
    net: RepNet,
    data: PairTensors,
    config: TrainConfig,
    params,
    weights: TrainConfig,
    epoch_offset: int,
    history: list[dict],
    detach_m: bool = False,
) -> None:
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    for epoch in range(config.epochs):
        net.train()
        if detach_m:
            net.enc_m.eval()
        sums = {"rec_m": 0.0, "rec_t": 0.0, "rep": 0.0, "total": 0.0}
        crop_rng = np.random.default_rng([config.seed, epoch_offset + epoch, 0xC0])
        for idx in batch_order(len(data), config.batch_size, config.seed, epoch_offset + epoch):
            view = CroppedView(data, idx, config.crop, crop_rng)
            local = torch.arange(len(idx))
            if detach_m:
                losses = _staged_t_losses(net, view, local, weights)
            else:
                losses = batch_losses(net, view, local, weights)
            opt.zero_grad()
            losses["total"].backward()
            opt.step()
            for k in sums:
                sums[k] += losses[k].item() * len(idx)
        row = {"epoch": epoch_offset + epoch + 1, **{k: v / len(data) for k, v in sums.items()}}
        history.append(row)
        log.info("repnet epoch %d total=%.5f rec_m=%.5f rec_t=%.5f rep=%.5f", row["epoch"], row["total"], row["rec_m"], row["rec_t"], row["rep"])


def _staged_t_losses(net: RepNet, data: PairTensors, idx: torch.Tensor, weights: TrainConfig) -> dict:
    # second stage of the sequential reading: E_M is frozen, E_T chases it
    tof = data.tof[idx]
    labels = data.labels[idx]
    real_idx = idx[labels == REAL]
    z_t = net.encode_tof(tof)
    rec_t = mse(tof, net.generate_t(z_t))
    rep = tof.new_zeros(())
    if len(real_idx):
        with torch.no_grad():
            z_m = net.encode_multimodal(concat_modalities(data.rgb(real_idx), data.tof[real_idx]))
        rep = rep_loss(z_m, z_t[labels == REAL])
    total = weights.lambda_rec_t * rec_t + weights.lambda_rep * rep
    return {"rec_m": tof.new_zeros(()), "rec_t": rec_t, "rep": rep, "total": total}


def train_representation(data: PairTensors, config: TrainConfig) -> RepNetResult:
    """Jointly minimize the two reconstruction losses and the representation loss.

    With ``config.staged`` the multi-modal model is trained first on real
    pairs, then frozen while the ToF-modal model learns both its
    reconstruction and the latent match.
    """
    if not (data.labels == REAL).any():
        raise ValueError("training split has no real samples")
    torch.manual_seed(config.seed)
    net = RepNet(config.widths)
    init_weights(net, config.seed)
    history: list[dict] = []

    if not config.staged:
        _run_epochs(net, data, config, net.parameters(), config, 0, history)
        return RepNetResult(net=net, config=config, log=history, epoch=config.epochs)

    real = data.subset(torch.nonzero(data.labels == REAL).flatten())
    stage_m = TrainConfig(**{**config.to_dict(), "lambda_rec_t": 0.0, "lambda_rep": 0.0, "staged": False})
    _run_epochs(net, real, config, list(net.enc_m.parameters()) + list(net.gen_m.parameters()), stage_m, 0, history)
    data.rgb_reads_display += real.rgb_reads_display
    t_params = list(net.enc_t.parameters()) + list(net.gen_t.parameters())
    _run_epochs(net, data, config, t_params, config, config.epochs, history, detach_m=True)
    return RepNetResult(net=net, config=config, log=history, epoch=2 * config.epochs)


def evaluate_losses(net: RepNet, data: PairTensors, config: TrainConfig) -> dict[str, float]:
    """Dataset-mean loss terms in evaluation mode (frozen BN statistics)."""
    net.eval()
    sums = {"rec_m": 0.0, "rec_t": 0.0, "rep": 0.0, "total": 0.0}
    with torch.no_grad():
        for start in range(0, len(data), config.batch_size):
            idx = torch.arange(start, min(start + config.batch_size, len(data)))
            view = CroppedView(data, idx, config.crop, None)
            losses = batch_losses(net, view, torch.arange(len(idx)), config)
            for k in sums:
                sums[k] += losses[k].item() * len(idx)
    return {k: v / len(data) for k, v in sums.items()}


def save_repnet(path, result: RepNetResult) -> None:
    save_checkpoint(
        path,
        "repnet",
        result.config.to_dict(),
        {"net": result.net.state_dict()},
        epoch=result.epoch,
        log=result.log,
        rng_state=torch.get_rng_state(),
    )


def repnet_from_blob(blob: dict) -> RepNetResult:
    config = TrainConfig.from_dict(blob["config"])
    net = RepNet(config.widths)
    net.load_state_dict(blob["state"]["net"])
    net.eval()
    return RepNetResult(net=net, config=config, log=blob.get("log", []), epoch=blob.get("epoch", 0))


def load_repnet(path) -> RepNetResult:
    return repnet_from_blob(load_checkpoint(path, "repnet"))


def loss_log_csv(history: list[dict]) -> str:
    lines = ["epoch,L_recM,L_recT,L_rep,total"]
    for row in history:
        lines.append(f"{row['epoch']},{row['rec_m']:.8g},{row['rec_t']:.8g},{row['rep']:.8g},{row['total']:.8g}")
    return "\n".join(lines) + "\n"
