"""Shared setup for the experiment runners."""

import argparse
import json
import logging
from pathlib import Path

import torch

from mtof.representation import TrainConfig
from mtof.synth_gen import SynthConfig, gen_samples


def parser(doc: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--samples-per-object", type=int, default=100)
    p.add_argument("--objects", type=int, default=6)
    p.add_argument("--size", type=int, default=80, help="square image side")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", type=Path, default=Path("results"))
    return p


def setup(args) -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    args.out.mkdir(parents=True, exist_ok=True)


def samples_for(args, seed: int):
    cfg = {
        "n_objects": args.objects,
        "samples_per_object": args.samples_per_object,
        "n_profiles": 5,
        "image_size": [args.size, args.size],
        "seed": seed,
    }
    return gen_samples(SynthConfig.from_dict(cfg))


def train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(widths=(8, 16, 32), epochs=args.epochs, seed=seed)


def displays(samples) -> list[str]:
    return sorted({s.display_id for s in samples if s.is_display})


def dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    print(path)
