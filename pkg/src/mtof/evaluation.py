"""Metrics and experimental protocols (target / unseen / all displays)."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy.stats import rankdata

from mtof.baselines import (
    cnn_detector_from_blob,
    freq_detector_train,
    naive_cnn_train,
    pca_fit,
    pca_project,
    pca_svm_train,
    save_cnn_detector,
    save_svm_detector,
    svm_detector_from_blob,
)
from mtof.checkpoint import load_checkpoint
from mtof.data_model import PairSample
from mtof.representation import CroppedView, PairTensors, TrainConfig
from mtof.spoof_classifier import MToFModel, features, mtofnet_from_blob, save_mtofnet, train_mtofnet

log = logging.getLogger(__name__)

MODELS = ("mtofnet", "pca_svm", "freq_svm", "naive_cnn", "image_cnn", "mtofnet_norep")
MODES = ("target", "unseen", "all")


class ProtocolError(RuntimeError):
    pass


@dataclass
class ScoredSample:
    sample_id: str
    true_label: int  # 1 = display
    score: float  # p_display
    predicted_label: int
    display_id: str = "none"
    device_type: str = "none"
    display_type: str = "none"

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"{self.sample_id}: score {self.score} outside [0, 1]")


def _labels_scores(samples: Sequence[ScoredSample]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([s.true_label for s in samples], dtype=np.int64),
        np.array([s.score for s in samples], dtype=np.float64),
    )


def accuracy(samples: Sequence[ScoredSample]) -> float:
    if not samples:
        raise ValueError("accuracy of an empty sample set")
    return sum(s.true_label == s.predicted_label for s in samples) / len(samples)


def auroc(samples: Sequence[ScoredSample]) -> float:
    """P(display score > real score) with ties counted one half (Mann-Whitney U)."""
    y, s = _labels_scores(samples)
    n_pos, n_neg = int((y == 1).sum()), int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ranking(samples: Sequence[ScoredSample]) -> list[ScoredSample]:
    # descending score; ties broken by sample_id so results are reproducible
    return sorted(samples, key=lambda s: (-s.score, s.sample_id))


def average_precision(samples: Sequence[ScoredSample]) -> float:
    ordered = ranking(samples)
    hits = np.cumsum([s.true_label == 1 for s in ordered])
    n_pos = int(hits[-1]) if len(hits) else 0
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    precisions = [hits[k] / (k + 1) for k, s in enumerate(ordered) if s.true_label == 1]
    return math.fsum(precisions) / n_pos


def metrics(samples: Sequence[ScoredSample]) -> dict[str, float]:
    return {"acc": accuracy(samples), "auroc": auroc(samples), "ap": average_precision(samples)}


# ---------------------------------------------------------------------------
# Detectors


def fit_detector(name: str, train: PairTensors, config: TrainConfig):
    if name == "mtofnet":
        return train_mtofnet(train, config)
    if name == "mtofnet_norep":
        return train_mtofnet(train, replace(config, lambda_rep=0.0))
    if name == "pca_svm":
        return pca_svm_train(train)
    if name == "freq_svm":
        return freq_detector_train(train, "tof")
    if name == "naive_cnn":
        return naive_cnn_train(train, config, in_channels=4)
    if name == "image_cnn":
        return naive_cnn_train(train, config, in_channels=3)
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")


def save_detector(path, name: str, detector) -> None:
    if name in ("mtofnet", "mtofnet_norep"):
        save_mtofnet(path, detector)
    elif name in ("pca_svm", "freq_svm"):
        save_svm_detector(path, detector)
    elif name in ("naive_cnn", "image_cnn"):
        save_cnn_detector(path, detector, kind=name)
    else:
        raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")


def load_detector(path):
    """(model name, detector) from any checkpoint written by ``save_detector``."""
    blob = load_checkpoint(path)
    kind = blob["kind"]
    if kind == "mtofnet":
        model = mtofnet_from_blob(blob)
        return ("mtofnet_norep" if model.config.lambda_rep == 0 else "mtofnet"), model
    if kind in ("pca_svm", "freq_svm"):
        return kind, svm_detector_from_blob(blob)
    if kind in ("naive_cnn", "image_cnn"):
        return kind, cnn_detector_from_blob(blob)
    raise ValueError(f"{path}: no detector for checkpoint kind {kind!r}")


def score_samples(detector, samples: Sequence[PairSample]) -> list[ScoredSample]:
    data = PairTensors.from_samples(samples)
    p = np.clip(np.asarray(detector.p_display(data), dtype=np.float64), 0.0, 1.0)
    return [
        ScoredSample(
            sample_id=s.sample_id,
            true_label=int(s.is_display),
            score=float(pi),
            predicted_label=int(pi >= 0.5),
            display_id=s.display_id,
            device_type=s.device_type,
            display_type=s.display_type,
        )
        for s, pi in zip(samples, p)
    ]


# ---------------------------------------------------------------------------
# Protocols


@dataclass
class EvalReport:
    protocol: str
    model: str
    train_display_ids: list[str]
    test_display_ids: list[str]
    metrics: dict[str, float]
    per_display: dict[str, dict[str, float]] = field(default_factory=dict)
    per_group: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    n_train: int = 0
    n_test: int = 0
    scores: list[ScoredSample] = field(default_factory=list)

    def to_dict(self, with_scores: bool = False) -> dict:
        d = asdict(self)
        if not with_scores:
            d.pop("scores")
        return d


def assert_no_leakage(train_ids: Iterable[str], test_ids: Iterable[str]) -> None:
    overlap = set(train_ids) & set(test_ids) - {"none"}
    if overlap:
        raise ProtocolError(f"display ids leaked into the unseen test set: {sorted(overlap)}")


def partition(
    samples: Sequence[PairSample], train_displays: Iterable[str], mode: str
) -> tuple[list[PairSample], list[PairSample]]:
    """Train on real + chosen displays (train split); pick the test set by mode.

    target: test split of real + chosen displays; unseen: test split of
    real + every sample of the other displays; all: whole test split.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    chosen = set(train_displays)
    known = {s.display_id for s in samples if s.is_display}
    missing = chosen - known
    if missing:
        raise ProtocolError(f"requested displays not in dataset: {sorted(missing)}")
    train = [s for s in samples if s.split == "train" and (not s.is_display or s.display_id in chosen)]
    if mode == "target":
        test = [s for s in samples if s.split == "test" and (not s.is_display or s.display_id in chosen)]
    elif mode == "unseen":
        test = [s for s in samples if (not s.is_display and s.split == "test") or (s.is_display and s.display_id not in chosen)]
    else:
        test = [s for s in samples if s.split == "test"]
    if not any(s.is_display for s in test) or all(s.is_display for s in test):
        raise ProtocolError(f"{mode} test partition lacks real or display samples")
    if mode == "unseen":
        assert_no_leakage(chosen, {s.display_id for s in test})
        log.info("leakage check passed: %d train displays, %d unseen", len(chosen), len({s.display_id for s in test if s.is_display}))
    return train, test


def breakdown(scored: Sequence[ScoredSample], key: str) -> dict[str, dict[str, float]]:
    """Metrics of each display group against all real test samples."""
    reals = [s for s in scored if s.true_label == 0]
    groups = sorted({getattr(s, key) for s in scored if s.true_label == 1})
    return {g: metrics(reals + [s for s in scored if s.true_label == 1 and getattr(s, key) == g]) for g in groups}


def evaluate_detector(detector, name: str, protocol: str, train: Sequence[PairSample], test: Sequence[PairSample], train_displays) -> EvalReport:
    scored = score_samples(detector, test)
    return EvalReport(
        protocol=protocol,
        model=name,
        train_display_ids=sorted(train_displays),
        test_display_ids=sorted({s.display_id for s in test if s.is_display}),
        metrics=metrics(scored),
        per_display=breakdown(scored, "display_id"),
        per_group={k: breakdown(scored, k) for k in ("device_type", "display_type")},
        n_train=len(train),
        n_test=len(test),
        scores=scored,
    )


def run_protocol(
    model: str,
    samples: Sequence[PairSample],
    train_displays: Iterable[str],
    mode: str,
    config: TrainConfig,
) -> EvalReport:
    train_displays = sorted(set(train_displays))
    train, test = partition(samples, train_displays, mode)
    detector = fit_detector(model, PairTensors.from_samples(train), config)
    report = evaluate_detector(detector, model, mode, train, test, train_displays)
    log.info("%s %s auroc=%.4f ap=%.4f acc=%.4f", model, mode, report.metrics["auroc"], report.metrics["ap"], report.metrics["acc"])
    return report


def run_protocols(model: str, samples, train_displays, config: TrainConfig, modes=MODES) -> dict[str, EvalReport]:
    """Train once and evaluate under several modes (training data is mode-independent)."""
    train_displays = sorted(set(train_displays))
    parts = {m: partition(samples, train_displays, m) for m in modes}
    train = next(iter(parts.values()))[0]
    detector = fit_detector(model, PairTensors.from_samples(train), config)
    return {m: evaluate_detector(detector, model, m, train, test, train_displays) for m, (_, test) in parts.items()}


ABLATIONS = {
    "w/o ToF": "image_cnn",
    "w/o representation network": "naive_cnn",
    "w/o L_rep": "mtofnet_norep",
    "full": "mtofnet",
}


def ablation_suite(samples, train_displays, config: TrainConfig, mode: str = "unseen") -> dict[str, EvalReport]:
    return {variant: run_protocol(model, samples, train_displays, mode, config) for variant, model in ABLATIONS.items()}


@dataclass
class ScalingPoint:
    """One point of the moire-scaling curve: fold-mean unseen metrics at k displays."""

    k: int
    metrics: dict[str, float]
    folds: list[EvalReport]

    def to_dict(self) -> dict:
        return {"k": self.k, "metrics": self.metrics, "folds": [r.to_dict() for r in self.folds]}


def scaling_folds(displays: Sequence[str], seed: int, n_folds: int | None = None) -> list[tuple[str, list[str]]]:
    """(probe display, ordered training pool) per fold.

    The probe is never in its pool; pools are rotations of one seeded
    permutation so the first k entries form nested training sets.
    """
    order = [displays[i] for i in np.random.default_rng(seed).permutation(len(displays))]
    n = len(order) if n_folds is None else n_folds
    if not 1 <= n <= len(order):
        raise ProtocolError(f"n_folds must lie in [1, {len(order)}]")
    return [(order[f], order[f + 1 :] + order[:f]) for f in range(n)]


def moire_scaling(
    samples: Sequence[PairSample],
    display_counts: Sequence[int],
    seed: int,
    config: TrainConfig,
    model: str = "naive_cnn",
    n_folds: int | None = None,
) -> list[ScalingPoint]:
    """Unseen-display metrics as the number of training displays grows.

    Each fold holds out one probe display and trains on the first k
    displays of its pool, so every k is scored on the same probe set
    (real test split + all probe samples) and the curve reflects training
    diversity rather than which displays happen to remain unseen. Metrics
    are averaged over folds; by default every display is a probe once.
    CNN models train with flip/rotation augmentation.
    """
    displays = sorted({s.display_id for s in samples if s.is_display})
    if any(k < 1 or k >= len(displays) for k in display_counts):
        raise ProtocolError(f"display counts must lie in [1, {len(displays) - 1}] to leave unseen displays")
    if model in ("naive_cnn", "image_cnn"):
        config = replace(config, augment=True)
    folds = scaling_folds(displays, seed, n_folds)
    points = []
    for k in display_counts:
        reports = []
        for probe, pool in folds:
            train_ids = sorted(pool[:k])
            train, _ = partition(samples, train_ids, "unseen")
            test = [s for s in samples if (not s.is_display and s.split == "test") or s.display_id == probe]
            assert_no_leakage(train_ids, {s.display_id for s in test})
            detector = fit_detector(model, PairTensors.from_samples(train), config)
            reports.append(evaluate_detector(detector, model, "unseen", train, test, train_ids))
        mean = {m: float(np.mean([r.metrics[m] for r in reports])) for m in ("acc", "auroc", "ap")}
        log.info("moire scaling %s k=%d mean auroc=%.4f over %d folds", model, k, mean["auroc"], len(reports))
        points.append(ScalingPoint(k=k, metrics=mean, folds=reports))
    return points


def taxonomy_reports(samples: Sequence[PairSample], group_by: str, config: TrainConfig, model: str = "mtofnet") -> list[EvalReport]:
    """One trained model per taxonomy group, scored on every group.

    The diagonal uses the target protocol; off-diagonal cells score the
    other group's displays against the real test samples.
    """
    if group_by not in ("display_type", "device_type"):
        raise ValueError(f"cannot group by {group_by!r}")
    groups: dict[str, set[str]] = {}
    for s in samples:
        if s.is_display:
            groups.setdefault(getattr(s, group_by), set()).add(s.display_id)
    reports = []
    for g in sorted(groups):
        train_ids = sorted(groups[g])
        train, target_test = partition(samples, train_ids, "target")
        detector = fit_detector(model, PairTensors.from_samples(train), config)
        reals = [s for s in target_test if not s.is_display]
        for h in sorted(groups):
            if h == g:
                test = target_test
                protocol = "target"
            else:
                test = reals + [s for s in samples if s.is_display and s.display_id in groups[h]]
                protocol = "unseen"
                assert_no_leakage(train_ids, {s.display_id for s in test})
            rep = evaluate_detector(detector, model, protocol, train, test, train_ids)
            rep.per_group["taxonomy"] = {"group_by": group_by, "train": g, "test": h}
            reports.append(rep)
    return reports


def confusion_by_taxonomy(reports: Sequence[EvalReport], group_by: str, metric: str = "auroc") -> tuple[list[str], np.ndarray]:
    """Matrix[row = training group][column = test group]; missing cells are NaN."""
    cells = {}
    for r in reports:
        tag = r.per_group.get("taxonomy")
        if tag and tag["group_by"] == group_by:
            cells[(tag["train"], tag["test"])] = r.metrics[metric]
    groups = sorted({g for pair in cells for g in pair})
    mat = np.full((len(groups), len(groups)), np.nan)
    for (g, h), v in cells.items():
        mat[groups.index(g), groups.index(h)] = v
    missing = int(np.isnan(mat).sum())
    if missing:
        log.warning("confusion matrix has %d missing cells", missing)
    return groups, mat


def export_features_2d(model: MToFModel, samples: Sequence[PairSample]) -> tuple[list[dict], np.ndarray]:
    """Pooled [z_M, z_T] features and their projection on the top-2 PCA axes."""
    data = PairTensors.from_samples(samples)
    net = model.repnet.net
    net.eval()
    with torch.no_grad():
        view = CroppedView(data, torch.arange(len(data)), model.config.crop, None)
        feats = features(net, view.rgb(torch.arange(len(data))), view.tof).double().numpy()
    uv = pca_project(feats, pca_fit(feats, k=2))
    rows = [
        {"sample_id": s.sample_id, "label": s.label, "display_id": s.display_id, "u": float(u), "v": float(v)}
        for s, (u, v) in zip(samples, uv)
    ]
    return rows, feats


# ---------------------------------------------------------------------------
# Serialization


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def curve_csv(points: Sequence[ScalingPoint]) -> str:
    rows = [{"k": p.k, **p.metrics} for p in points]
    return rows_to_csv(rows, ["k", "acc", "auroc", "ap"])


def matrix_csv(groups: Sequence[str], mat: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["train\\test", *groups])
    for g, row in zip(groups, mat):
        writer.writerow([g, *("" if np.isnan(v) else f"{v:.6f}" for v in row)])
    return buf.getvalue()

