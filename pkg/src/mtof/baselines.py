"""Comparison detectors: PCA + linear SVM, spectrum + linear SVM, naive CNN."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from scipy.special import expit
from torch.nn import functional as F

from mtof.checkpoint import save_checkpoint
from mtof.data_model import resize_array
from mtof.representation import (
    DISPLAY,
    REAL,
    CroppedView,
    PairTensors,
    TrainConfig,
    batch_order,
    init_weights,
)
from mtof.spectrum import power_spectrum_1d

log = logging.getLogger(__name__)

PCA_SIZE = (60, 45)  # (width, height) for flattened ToF maps


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    mean: np.ndarray
    axes: np.ndarray  # (k, d), orthonormal rows, descending variance
    explained_variance: np.ndarray


def pca_fit(x: np.ndarray, k: int = 2) -> PcaModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least 2 samples as an (n, d) array")
    if k > x.shape[1]:
        raise ValueError(f"cannot keep {k} components of {x.shape[1]}-dimensional data")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    axes = evecs[:, order].T
    # sign convention: largest-magnitude entry positive
    pivots = np.argmax(np.abs(axes), axis=1)
    axes = axes * np.sign(axes[np.arange(k), pivots])[:, None]
    return PcaModel(mean=mean, axes=axes, explained_variance=np.maximum(evals[order], 0.0))


def pca_project(x: np.ndarray, model: PcaModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"expected {model.mean.shape[0]} features, got {x.shape[-1]}")
    return (x - model.mean) @ model.axes.T


def pca_reconstruct(coords: np.ndarray, model: PcaModel) -> np.ndarray:
    return coords @ model.axes + model.mean


# ---------------------------------------------------------------------------
# Linear SVM


@dataclass
class LinearSvmModel:
    weight: np.ndarray
    bias: float
    objective_log: list[float] = field(default_factory=list)

    def decision(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weight + self.bias


def svm_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, reg: float) -> float:
    margins = y * (x @ w + b)
    return float(np.maximum(0.0, 1.0 - margins).mean() + reg * w @ w)


def svm_train(
    x: np.ndarray,
    y: np.ndarray,
    epochs: int = 200,
    lr: float = 1e-2,
    reg: float = 1e-3,
) -> LinearSvmModel:
    """Full-batch subgradient descent on mean hinge loss + reg * ||w||^2.

    Step size is ``lr / sqrt(t)``. Subgradient steps can overshoot, so the
    best iterate seen so far is kept; the logged objective is therefore
    non-increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("SVM training needs labels from both classes {-1, +1}")
    n, d = x.shape
    w, b = np.zeros(d), 0.0
    best_w, best_b = w.copy(), b
    best = svm_objective(w, b, x, y, reg)
    history = [best]
    for t in range(1, epochs + 1):
        active = y * (x @ w + b) < 1.0
        gw = 2 * reg * w - (y[active, None] * x[active]).sum(axis=0) / n
        gb = -y[active].sum() / n
        step = lr / np.sqrt(t)
        w, b = w - step * gw, b - step * gb
        obj = svm_objective(w, b, x, y, reg)
        if obj < best:
            best, best_w, best_b = obj, w.copy(), b
        history.append(best)
    return LinearSvmModel(weight=best_w, bias=float(best_b), objective_log=history)


def _to_pm1(labels: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(labels) == DISPLAY, 1.0, -1.0)


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        scale = x.std(axis=0)
        return cls(mean=x.mean(axis=0), scale=np.where(scale > 1e-12, scale, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


@dataclass
class SvmDetector:
    """Feature extractor + standardizer + linear SVM; scores are logistic decision values."""

    kind: str
    svm: LinearSvmModel
    scaler: Standardizer
    pca: PcaModel | None = None
    modality: str = "tof"

    def featurize(self, data: PairTensors) -> np.ndarray:
        if self.kind == "pca_svm":
            return pca_project(pca_inputs(data), self.pca)
        return frequency_features(data, self.modality)

    def decision(self, data: PairTensors) -> np.ndarray:
        return self.svm.decision(self.scaler(self.featurize(data)))

    def p_display(self, data: PairTensors) -> np.ndarray:
        return expit(self.decision(data))


def pca_inputs(data: PairTensors) -> np.ndarray:
    w, h = PCA_SIZE
    maps = data.tof[:, 0].double().numpy()
    return np.stack([resize_array(m, w, h).ravel() for m in maps])


def frequency_features(data: PairTensors, modality: str = "tof") -> np.ndarray:
    if modality == "tof":
        maps = data.tof[:, 0].double().numpy()
    elif modality == "image":
        maps = data.rgb(torch.arange(len(data))).double().numpy().transpose(0, 2, 3, 1)
    else:
        raise ValueError(f"unknown modality {modality!r}")
    return np.stack([power_spectrum_1d(m) for m in maps])


def pca_svm_train(data: PairTensors, epochs: int = 200, lr: float = 1e-2, reg: float = 1e-3) -> SvmDetector:
    pca = pca_fit(pca_inputs(data), k=2)
    feats = pca_project(pca_inputs(data), pca)
    scaler = Standardizer.fit(feats)
    svm = svm_train(scaler(feats), _to_pm1(data.labels.numpy()), epochs, lr, reg)
    return SvmDetector(kind="pca_svm", svm=svm, scaler=scaler, pca=pca)


def freq_detector_train(
    data: PairTensors, modality: str = "tof", epochs: int = 200, lr: float = 1e-2, reg: float = 1e-3
) -> SvmDetector:
    feats = frequency_features(data, modality)
    scaler = Standardizer.fit(feats)
    svm = svm_train(scaler(feats), _to_pm1(data.labels.numpy()), epochs, lr, reg)
    return SvmDetector(kind="freq_svm", svm=svm, scaler=scaler, modality=modality)


# ---------------------------------------------------------------------------
# Naive CNN


class NaiveCnn(nn.Module):
    """Three conv/ReLU/max-pool stages, global average pool, 2-way linear head."""

    def __init__(self, in_channels: int = 4, widths=(32, 64, 128)):
        super().__init__()
        self.in_channels = in_channels
        layers: list[nn.Module] = []
        prev = in_channels
        for w in widths:
            layers += [nn.Conv2d(prev, w, kernel_size=3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            prev = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(prev, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).mean(dim=(2, 3)))


def cnn_input(view: PairTensors, n: int, in_channels: int) -> torch.Tensor:
    rgb = view.rgb(torch.arange(n))
    if in_channels == 3:
        return rgb
    return torch.cat([rgb, view.tof], dim=1)


def augment_batch(x: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    # per-sample horizontal flip and rotation by a multiple of 90 degrees
    out = []
    for xi in x:
        if rng.random() < 0.5:
            xi = torch.flip(xi, dims=(2,))
        k = int(rng.integers(0, 4))
        if xi.shape[-1] != xi.shape[-2]:
            k = 2 * (k % 2)
        out.append(torch.rot90(xi, k, dims=(1, 2)))
    return torch.stack(out)


@dataclass
class CnnDetector:
    model: NaiveCnn
    config: TrainConfig
    log: list[dict] = field(default_factory=list)

    def probs(self, data: PairTensors, batch_size: int = 64) -> torch.Tensor:
        self.model.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(data), batch_size):
                idx = torch.arange(start, min(start + batch_size, len(data)))
                view = CroppedView(data, idx, self.config.crop, None)
                out.append(F.softmax(self.model(cnn_input(view, len(idx), self.model.in_channels)), dim=-1))
        return torch.cat(out)

    def p_display(self, data: PairTensors) -> np.ndarray:
        return self.probs(data)[:, DISPLAY].double().numpy()


def naive_cnn_train(data: PairTensors, config: TrainConfig, in_channels: int = 4) -> CnnDetector:
    """Softmax cross-entropy on raw [RGB, ToF] (or RGB only with ``in_channels=3``).

    This model reads display RGB by design: it is the moire learner.
    """
    labels = data.labels
    if (labels == REAL).all() or (labels == DISPLAY).all():
        raise ValueError("CNN training needs both real and display samples")
    torch.manual_seed(config.seed + 2)
    model = NaiveCnn(in_channels, config.widths)
    init_weights(model, config.seed + 2)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        model.train()
        crop_rng = np.random.default_rng([config.seed, epoch, 0xC2])
        aug_rng = np.random.default_rng([config.seed, epoch, 0xA6])
        loss_sum = 0.0
        for idx in batch_order(len(data), config.batch_size, config.seed + 2, epoch):
            view = CroppedView(data, idx, config.crop, crop_rng)
            x = cnn_input(view, len(idx), in_channels)
            if config.augment:
                x = augment_batch(x, aug_rng)
            loss = F.cross_entropy(model(x), view.labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
        history.append({"epoch": epoch + 1, "loss": loss_sum / len(data)})
        log.info("naive cnn epoch %d loss=%.5f", epoch + 1, history[-1]["loss"])
    model.eval()
    return CnnDetector(model=model, config=config, log=history)


# ---------------------------------------------------------------------------
# Persistence


def save_svm_detector(path, det: SvmDetector) -> None:
    state = {
        "weight": det.svm.weight,
        "bias": det.svm.bias,
        "scaler_mean": det.scaler.mean,
        "scaler_scale": det.scaler.scale,
    }
    if det.pca is not None:
        state.update(pca_mean=det.pca.mean, pca_axes=det.pca.axes, pca_var=det.pca.explained_variance)
    save_checkpoint(path, det.kind, {"modality": det.modality}, state, log=det.svm.objective_log)


def svm_detector_from_blob(blob: dict) -> SvmDetector:
    st = blob["state"]
    pca = None
    if "pca_mean" in st:
        pca = PcaModel(mean=st["pca_mean"], axes=st["pca_axes"], explained_variance=st["pca_var"])
    return SvmDetector(
        kind=blob["kind"],
        svm=LinearSvmModel(weight=st["weight"], bias=float(st["bias"]), objective_log=list(blob.get("log", []))),
        scaler=Standardizer(mean=st["scaler_mean"], scale=st["scaler_scale"]),
        pca=pca,
        modality=blob["config"].get("modality", "tof"),
    )


def save_cnn_detector(path, det: CnnDetector, kind: str = "naive_cnn") -> None:
    save_checkpoint(
        path,
        kind,
        det.config.to_dict(),
        {"model": det.model.state_dict(), "in_channels": det.model.in_channels},
        log=det.log,
    )


def cnn_detector_from_blob(blob: dict) -> CnnDetector:
    config = TrainConfig.from_dict(blob["config"])
    model = NaiveCnn(blob["state"]["in_channels"], config.widths)
    model.load_state_dict(blob["state"]["model"])
    model.eval()
    return CnnDetector(model=model, config=config, log=list(blob.get("log", [])))
