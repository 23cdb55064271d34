"""Real/display classifier on pooled latent codes of the two encoders."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from mtof.checkpoint import load_checkpoint, save_checkpoint
from mtof.representation import (
    DISPLAY,
    REAL,
    CroppedView,
    PairTensors,
    RepNet,
    RepNetResult,
    TrainConfig,
    batch_order,
    concat_modalities,
    init_weights,
    repnet_from_blob,
    train_representation,
)

log = logging.getLogger(__name__)


def pool_and_concat(z_m: torch.Tensor, z_t: torch.Tensor) -> torch.Tensor:
    """Spatial mean of each latent, multi-modal first: (n, c, h, w) x2 -> (n, 2c)."""
    if z_m.shape != z_t.shape:
        raise ValueError(f"latent shapes differ: {tuple(z_m.shape)} vs {tuple(z_t.shape)}")
    return torch.cat([z_m.mean(dim=(2, 3)), z_t.mean(dim=(2, 3))], dim=1)


class SpoofClassifier(nn.Module):
    def __init__(self, latent_channels: int, hidden: int = 128):
        super().__init__()
        self.in_features = 2 * latent_channels
        # pooled codes share large per-channel offsets; standardize before the MLP
        self.norm = nn.BatchNorm1d(self.in_features, affine=False)
        self.net = nn.Sequential(nn.Linear(self.in_features, hidden), nn.ReLU(), nn.Linear(hidden, 2))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[-1] != self.in_features:
            raise ValueError(f"expected {self.in_features} features, got {f.shape[-1]}")
        return self.net(self.norm(f))


def classify(f: torch.Tensor, clf: SpoofClassifier) -> torch.Tensor:
    """Softmax probabilities (p_real, p_display) per row."""
    return F.softmax(clf(f), dim=-1)


def features(net: RepNet, rgb: torch.Tensor, tof: torch.Tensor) -> torch.Tensor:
    return pool_and_concat(net.encode_multimodal(concat_modalities(rgb, tof)), net.encode_tof(tof))


@dataclass
class MToFModel:
    """Trained detector: encoders of the representation network plus classifier."""

    repnet: RepNetResult
    classifier: SpoofClassifier
    config: TrainConfig
    log: list[dict] = field(default_factory=list)

    def p_display(self, data: PairTensors, batch_size: int = 64) -> np.ndarray:
        net, clf = self.repnet.net, self.classifier
        net.eval()
        clf.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(data), batch_size):
                idx = torch.arange(start, min(start + batch_size, len(data)))
                view = CroppedView(data, idx, self.config.crop, None)
                f = features(net, view.rgb(torch.arange(len(idx))), view.tof)
                out.append(classify(f, clf)[:, DISPLAY])
        return torch.cat(out).double().numpy()


def train_classifier(repnet: RepNetResult, data: PairTensors, config: TrainConfig) -> tuple[SpoofClassifier, list[dict]]:
    """Softmax cross-entropy on pooled features; encoders stay frozen unless ``config.finetune``."""
    labels = data.labels
    if (labels == REAL).all() or (labels == DISPLAY).all():
        raise ValueError("classifier training needs both real and display samples")
    net = repnet.net
    torch.manual_seed(config.seed + 1)
    clf = SpoofClassifier(net.widths[2], config.hidden)
    init_weights(clf, config.seed + 1)

    params = list(clf.parameters())
    if config.finetune:
        params += [p for enc in net.encoders() for p in enc.parameters()]
    else:
        for enc in net.encoders():
            enc.requires_grad_(False)
    opt = torch.optim.Adam(params, lr=config.learning_rate)

    history = []
    try:
        for epoch in range(config.epochs):
            if config.finetune:
                net.train()
            else:
                net.eval()
            clf.train()
            crop_rng = np.random.default_rng([config.seed, epoch, 0xC1])
            loss_sum, correct = 0.0, 0
            for idx in batch_order(len(data), config.batch_size, config.seed + 1, epoch):
                view = CroppedView(data, idx, config.crop, crop_rng)
                f = features(net, view.rgb(torch.arange(len(idx))), view.tof)
                logits = clf(f)
                loss = F.cross_entropy(logits, view.labels)
                opt.zero_grad()
                loss.backward()
                opt.step()
                loss_sum += loss.item() * len(idx)
                correct += int((predict_from_probs(F.softmax(logits.detach(), -1)) == view.labels).sum())
            row = {"epoch": epoch + 1, "loss": loss_sum / len(data), "train_acc": correct / len(data)}
            history.append(row)
            log.info("classifier epoch %d loss=%.5f acc=%.4f", row["epoch"], row["loss"], row["train_acc"])
    finally:
        for enc in net.encoders():
            enc.requires_grad_(True)
    net.eval()
    clf.eval()
    return clf, history


def predict_from_probs(probs: torch.Tensor) -> torch.Tensor:
    # ties go to display
    return (probs[..., DISPLAY] >= 0.5).long()


def predict_pair(rgb: torch.Tensor, tof: torch.Tensor, model: MToFModel) -> tuple[str, float]:
    """Label and p_display for one preprocessed pair; generators are never called.

    ``rgb`` is (3, h, w) and ``tof`` is (1, h, w) or (h, w).
    """
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"rgb must be (3, h, w), got {tuple(rgb.shape)}")
    if tof.ndim == 2:
        tof = tof[None]
    if tof.shape[-2:] != rgb.shape[-2:]:
        raise ValueError("rgb and tof sizes differ")
    data = PairTensors(rgb[None].float(), tof[None].float(), torch.tensor([REAL]))
    p = float(model.p_display(data)[0])
    return ("display" if p >= 0.5 else "real"), p


def train_mtofnet(data: PairTensors, config: TrainConfig) -> MToFModel:
    rep = train_representation(data, config)
    clf, history = train_classifier(rep, data, config)
    return MToFModel(repnet=rep, classifier=clf, config=config, log=history)


def save_mtofnet(path, model: MToFModel) -> None:
    save_checkpoint(
        path,
        "mtofnet",
        model.config.to_dict(),
        {"net": model.repnet.net.state_dict(), "classifier": model.classifier.state_dict()},
        epoch=model.repnet.epoch,
        log=model.repnet.log,
        classifier_log=model.log,
        rng_state=torch.get_rng_state(),
    )


def mtofnet_from_blob(blob: dict) -> MToFModel:
    rep = repnet_from_blob(blob)
    clf = SpoofClassifier(rep.net.widths[2], rep.config.hidden)
    clf.load_state_dict(blob["state"]["classifier"])
    clf.eval()
    return MToFModel(repnet=rep, classifier=clf, config=rep.config, log=blob.get("classifier_log", []))


def load_mtofnet(path) -> MToFModel:
    return mtofnet_from_blob(load_checkpoint(path, "mtofnet"))
