"""``mtof`` command line: gen | train | eval | spectrum | predict."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from mtof.config import ConfigError, RunConfig, load_config
from mtof.data_model import (
    ManifestError,
    PairSample,
    decode_raw_tof,
    load_gray8_png,
    load_raw_tof_png,
    load_rgb_png,
    load_sample,
    read_manifest,
    refine_tof,
    resize_array,
    resize_pair,
    validate_manifest,
)
from mtof.evaluation import (
    MODELS,
    ProtocolError,
    ablation_suite,
    confusion_by_taxonomy,
    curve_csv,
    evaluate_detector,
    export_features_2d,
    fit_detector,
    load_detector,
    matrix_csv,
    moire_scaling,
    partition,
    rows_to_csv,
    run_protocol,
    save_detector,
    taxonomy_reports,
)
from mtof.representation import PairTensors, loss_log_csv
from mtof.spectrum import class_mean_profiles, power_spectrum_1d
from mtof.spoof_classifier import MToFModel, predict_pair
from mtof.synth_gen import gen_dataset

log = logging.getLogger("mtof")

SUITES = ("protocol", "ablation", "moire", "taxonomy", "features")


# ---------------------------------------------------------------------------
# helpers


def _out_dir(cfg: RunConfig, args) -> Path:
    base = Path(args.out) if args.out else Path(cfg.paths.out_dir)
    out = base / cfg.digest()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def _write(path: Path, text: str) -> None:
    # write-then-rename so a crash never leaves a half-written artifact
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def load_run_samples(cfg: RunConfig) -> list[PairSample]:
    """Manifest samples with the configured preprocessing applied."""
    manifest = read_manifest(Path(cfg.paths.data_root))
    validate_manifest(manifest, check_files=True)
    p = cfg.preprocessing
    samples = []
    for rec in manifest.records:
        s = load_sample(manifest, rec, with_raw=True)
        if s.raw_tof is not None:
            s = replace(s, tof=refine_tof(decode_raw_tof(s.raw_tof), p.conf_threshold))
        if p.resize is not None and (s.tof.width, s.tof.height) != tuple(p.resize):
            s = resize_pair(s, *p.resize)
        samples.append(replace(s, raw_tof=None))
    log.info("loaded %d samples from %s", len(samples), cfg.paths.data_root)
    return samples


def train_displays(cfg: RunConfig, samples) -> list[str]:
    if cfg.protocol.train_displays:
        return sorted(cfg.protocol.train_displays)
    ids = sorted({s.display_id for s in samples if s.is_display})
    return ids[: math.ceil(len(ids) / 2)]


def _apply_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is not None:
        cfg.training.seed = seed
        cfg.synth.seed = seed
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: RunConfig, args) -> int:
    root = Path(cfg.paths.data_root)
    manifest = gen_dataset(cfg.synth_config(), root)
    print(root / "manifest.jsonl")
    log.info("wrote %d samples to %s", len(manifest.records), root)
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    samples = load_run_samples(cfg)
    displays = train_displays(cfg, samples)
    train, _ = partition(samples, displays, cfg.protocol.mode)
    tc = cfg.train_config()
    detector = fit_detector(args.model, PairTensors.from_samples(train), tc)
    out = _out_dir(cfg, args)
    ckpt = out / f"{args.model}.pt"
    save_detector(ckpt, args.model, detector)
    if isinstance(detector, MToFModel):
        _write(out / f"{args.model}_repnet_loss.csv", loss_log_csv(detector.repnet.log))
        _write(out / f"{args.model}_classifier_loss.csv", rows_to_csv(detector.log, ["epoch", "loss", "train_acc"]))
    elif hasattr(detector, "log"):
        _write(out / f"{args.model}_loss.csv", rows_to_csv(detector.log, ["epoch", "loss"]))
    else:
        rows = [{"epoch": i, "objective": v} for i, v in enumerate(detector.svm.objective_log)]
        _write(out / f"{args.model}_objective.csv", rows_to_csv(rows, ["epoch", "objective"]))
    print(ckpt)
    return 0


def _report_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def cmd_eval(cfg: RunConfig, args) -> int:
    samples = load_run_samples(cfg)
    displays = train_displays(cfg, samples)
    tc = cfg.train_config()
    mode = cfg.protocol.mode
    out = _out_dir(cfg, args)
    suite = args.suite

    if suite == "protocol":
        if args.checkpoint:
            name, detector = load_detector(args.checkpoint)
            train, test = partition(samples, displays, mode)
            report = evaluate_detector(detector, name, mode, train, test, displays)
        else:
            report = run_protocol(args.model, samples, displays, mode, tc)
        payload = report.to_dict()
        dest = out / f"eval_{report.model}_{mode}.json"
    elif suite == "ablation":
        reports = ablation_suite(samples, displays, tc, mode)
        payload = {k: r.to_dict() for k, r in reports.items()}
        dest = out / f"ablation_{mode}.json"
    elif suite == "moire":
        counts = args.counts or list(range(1, len({s.display_id for s in samples if s.is_display})))
        points = moire_scaling(samples, counts, tc.seed, tc, args.model, args.folds)
        payload = {"model": args.model, "curve": [p.to_dict() for p in points]}
        _write(out / f"moire_{args.model}.csv", curve_csv(points))
        dest = out / f"moire_{args.model}.json"
    elif suite == "taxonomy":
        reports = taxonomy_reports(samples, args.group_by, tc, args.model)
        groups, mat = confusion_by_taxonomy(reports, args.group_by)
        _write(out / f"taxonomy_{args.group_by}_{args.model}.csv", matrix_csv(groups, mat))
        payload = {
            "group_by": args.group_by,
            "groups": groups,
            "matrix": [[None if np.isnan(v) else float(v) for v in row] for row in mat],
            "reports": [r.to_dict() for r in reports],
        }
        dest = out / f"taxonomy_{args.group_by}_{args.model}.json"
    else:  # features
        if not args.checkpoint:
            raise ProtocolError("--suite features needs --checkpoint of an mtofnet model")
        _, model = load_detector(args.checkpoint)
        if not isinstance(model, MToFModel):
            raise ProtocolError("feature export needs an mtofnet checkpoint")
        rows, feats = export_features_2d(model, samples)
        _write(out / "features_2d.csv", rows_to_csv(rows, ["sample_id", "label", "display_id", "u", "v"]))
        np.save(out / "features_full.npy", feats)
        payload = {"n": len(rows), "csv": "features_2d.csv", "full": "features_full.npy"}
        dest = out / "features.json"

    _write(dest, _report_json(payload))
    print(dest)
    return 0


def cmd_spectrum(cfg: RunConfig, args) -> int:
    samples = load_run_samples(cfg)
    if args.modality == "tof":
        maps = [s.tof.values for s in samples]
    else:
        maps = [s.rgb.values for s in samples]
    profiles = np.stack([power_spectrum_1d(m) for m in maps])
    labels = np.array([int(s.is_display) for s in samples])
    mean_real, mean_display = class_mean_profiles(profiles, labels)
    rows = [
        {"radius": r, "mean_real": f"{a:.10g}", "mean_display": f"{b:.10g}"}
        for r, (a, b) in enumerate(zip(mean_real, mean_display))
    ]
    dest = _out_dir(cfg, args) / f"spectrum_{args.modality}.csv"
    _write(dest, rows_to_csv(rows, ["radius", "mean_real", "mean_display"]))
    print(dest)
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    for p in (args.checkpoint, args.rgb, args.tof):
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    name, detector = load_detector(args.checkpoint)
    rgb = load_rgb_png(args.rgb).values
    if args.raw_tof:
        tof = refine_tof(decode_raw_tof(load_raw_tof_png(args.tof)), cfg.preprocessing.conf_threshold).values
    else:
        tof = load_gray8_png(args.tof).values
    if tof.shape != rgb.shape[:2]:
        raise ValueError(f"rgb {rgb.shape[1]}x{rgb.shape[0]} and tof {tof.shape[1]}x{tof.shape[0]} differ")
    size = cfg.preprocessing.resize
    if size is not None and (tof.shape[1], tof.shape[0]) != tuple(size):
        rgb, tof = resize_array(rgb, *size), resize_array(tof, *size)
    rgb_t = torch.as_tensor(rgb.transpose(2, 0, 1), dtype=torch.float32)
    tof_t = torch.as_tensor(tof, dtype=torch.float32)
    if isinstance(detector, MToFModel):
        label, p = predict_pair(rgb_t, tof_t, detector)
    else:
        data = PairTensors(rgb_t[None], tof_t[None, None], torch.tensor([0]))
        p = float(np.clip(detector.p_display(data)[0], 0.0, 1.0))
        label = "display" if p >= 0.5 else "real"
    print(json.dumps({"label": label, "p_display": p, "model": name}))
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "spectrum": cmd_spectrum,
    "predict": cmd_predict,
}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                        help="override a config value, e.g. training.epochs=5 (repeatable)")
    common.add_argument("--seed", type=int, help="sets training.seed and synth.seed")
    common.add_argument("--out", help="artifact directory (default: paths.out_dir)")
    common.add_argument("--mode", choices=("target", "unseen", "all"), help="evaluation protocol")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mtof", description="RGB + ToF display-spoof detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--model", choices=MODELS, default="mtofnet")

    p = sub.add_parser("eval", parents=[common], help="train/evaluate under a protocol")
    p.add_argument("--model", choices=MODELS, default="mtofnet")
    p.add_argument("--checkpoint", help="evaluate a saved detector instead of training")
    p.add_argument("--suite", choices=SUITES, default="protocol")
    p.add_argument("--counts", type=int, nargs="+", help="display counts for --suite moire")
    p.add_argument("--folds", type=int, help="probe displays for --suite moire (default: all)")
    p.add_argument("--group-by", choices=("display_type", "device_type"), default="device_type")

    p = sub.add_parser("spectrum", parents=[common], help="class-mean power spectra as CSV")
    p.add_argument("--modality", choices=("tof", "image"), default="tof")

    p = sub.add_parser("predict", parents=[common], help="score one RGB/ToF pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--tof", required=True, help="refined 8-bit ToF PNG (or 16-bit raw with --raw-tof)")
    p.add_argument("--raw-tof", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        overrides = list(args.overrides)
        if args.mode:
            overrides.append(f"protocol.mode={json.dumps(args.mode)}")
        cfg = _apply_seed(load_config(args.config, overrides), args.seed)
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ManifestError, ProtocolError, FileNotFoundError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
