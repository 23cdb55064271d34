"""Procedural desk-scale RGB-D dataset with real and display captures.

Real scenes get a textured object over a varied depth field. Display
captures re-show a real RGB image with a per-display moire overlay and a
near-planar depth field. The parameters are stand-ins chosen so that
depth flatness generalizes across displays while moire does not.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from mtof.data_model import (
    DepthMap,
    Manifest,
    PairSample,
    RgbImage,
    decode_raw_tof,
    encode_depth_map,
    refine_tof,
    save_gray8_png,
    save_raw_tof_png,
    save_rgb_png,
    sample_record,
    split_dataset,
    write_manifest,
    DEFAULT_CONF_THRESHOLD,
)

DEVICE_CYCLE = ("monitor", "laptop", "phone", "tablet", "projector")
DISPLAY_TYPES = {
    "monitor": ("LED", "LCD"),
    "laptop": ("LCD", "LED"),
    "phone": ("OLED",),
    "tablet": ("LCD", "OLED"),
    "projector": ("screen", "DLP"),
}


@dataclass(frozen=True)
class DisplayProfile:
    display_id: str
    device_type: str
    display_type: str
    moire_freq_a: float
    moire_freq_b: float
    moire_angle_a: float
    moire_angle_b: float
    moire_amplitude: float
    depth_plane_mm: float
    depth_noise_std_mm: float
    depth_jitter_mm: float = 0.0

    def __post_init__(self):
        for f in (self.moire_freq_a, self.moire_freq_b):
            if not 0.0 < f < 0.5:
                raise ValueError(f"{self.display_id}: moire frequency {f} outside (0, 0.5)")
        if not 0.0 <= self.moire_amplitude <= 0.3:
            raise ValueError(f"{self.display_id}: moire amplitude {self.moire_amplitude} outside [0, 0.3]")
        if self.depth_noise_std_mm < 0 or self.depth_jitter_mm < 0:
            raise ValueError(f"{self.display_id}: negative depth noise or jitter")

    def moire_key(self) -> tuple[float, float, float, float]:
        return (self.moire_freq_a, self.moire_freq_b, self.moire_angle_a, self.moire_angle_b)


@dataclass
class SynthConfig:
    n_objects: int = 6
    samples_per_object: int = 10
    profiles: list[DisplayProfile] = field(default_factory=list)
    image_size: tuple[int, int] = (80, 80)  # (width, height)
    seed: int = 0
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.n_objects < 1 or self.samples_per_object < 1:
            raise ValueError("n_objects and samples_per_object must be >= 1")
        if not self.profiles:
            self.profiles = make_profiles(5, self.seed)
        ids = [p.display_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError("display ids must be unique")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data)
        profiles = data.pop("profiles", None)
        n_profiles = data.pop("n_profiles", None)
        if "image_size" in data:
            data["image_size"] = tuple(data["image_size"])
        if "split_ratios" in data:
            data["split_ratios"] = tuple(data["split_ratios"])
        cfg = cls(**data)
        if profiles:
            cfg.profiles = [DisplayProfile(**p) for p in profiles]
        elif n_profiles:
            cfg.profiles = make_profiles(int(n_profiles), cfg.seed)
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["image_size"] = list(self.image_size)
        out["split_ratios"] = list(self.split_ratios)
        return out


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


def make_profiles(n: int, seed: int = 0) -> list[DisplayProfile]:
    """Profiles with pairwise-distinct moire parameters.

    Frequencies come from a jittered ladder over (0.06, 0.44) so no two
    displays share a grating; device types cycle through the taxonomy.
    """
    rng = _rng(seed, 0xD15)
    ladder = np.linspace(0.08, 0.42, 2 * n)
    ladder = ladder + rng.uniform(-0.01, 0.01, size=ladder.size)
    order = rng.permutation(ladder.size)
    profiles = []
    for i in range(n):
        device = DEVICE_CYCLE[i % len(DEVICE_CYCLE)]
        kinds = DISPLAY_TYPES[device]
        profiles.append(
            DisplayProfile(
                display_id=f"{device}{i:02d}",
                device_type=device,
                display_type=kinds[(i // len(DEVICE_CYCLE)) % len(kinds)],
                moire_freq_a=float(ladder[order[2 * i]]),
                moire_freq_b=float(ladder[order[2 * i + 1]]),
                moire_angle_a=float(rng.uniform(0, math.pi)),
                moire_angle_b=float(rng.uniform(0, math.pi)),
                moire_amplitude=float(rng.uniform(0.15, 0.25)),
                depth_plane_mm=float(rng.uniform(2100.0, 3700.0)),
                depth_noise_std_mm=float(rng.uniform(5.0, 25.0)),
                depth_jitter_mm=600.0,
            )
        )
    return profiles


def grating_product(
    width: int,
    height: int,
    freq_a: float,
    angle_a: float,
    freq_b: float,
    angle_b: float,
    phase_a: float = 0.0,
    phase_b: float = 0.0,
) -> np.ndarray:
    y, x = np.mgrid[:height, :width].astype(np.float64)
    a = np.cos(2 * np.pi * freq_a * (x * np.cos(angle_a) + y * np.sin(angle_a)) + phase_a)
    b = np.cos(2 * np.pi * freq_b * (x * np.cos(angle_b) + y * np.sin(angle_b)) + phase_b)
    return a * b


def _depth_field(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    y, x = np.mgrid[:height, :width].astype(np.float64)
    scale = min(width, height)
    base = rng.uniform(1200.0, 2800.0)
    tilt = rng.uniform(-150.0, 150.0, size=2) / scale
    depth = base + tilt[0] * (x - width / 2) + tilt[1] * (y - height / 2)
    for _ in range(int(rng.integers(3, 9))):
        cx, cy = rng.uniform(0.15, 0.85) * width, rng.uniform(0.15, 0.85) * height
        sigma = rng.uniform(0.08, 0.25) * scale
        amp = rng.uniform(200.0, 2000.0)
        depth = depth + amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
    return depth


def _object_texture(object_id: int, width: int, height: int) -> np.ndarray:
    rng = _rng(object_id, 0x7E7)
    y, x = np.mgrid[:height, :width].astype(np.float64)
    scale = min(width, height)
    base = rng.uniform(0.25, 0.7, size=3)
    tex = np.broadcast_to(base, (height, width, 3)).copy()
    for _ in range(3):
        kx, ky = rng.uniform(-3, 3, size=2) / scale
        phase = rng.uniform(0, 2 * np.pi)
        tint = rng.uniform(-0.12, 0.12, size=3)
        tex += np.cos(2 * np.pi * (kx * x + ky * y) + phase)[..., None] * tint
    # fine print/fabric structure so periodic detail alone does not mean "display"
    fine = grating_product(
        width,
        height,
        rng.uniform(0.08, 0.42),
        rng.uniform(0, np.pi),
        rng.uniform(0.08, 0.42),
        rng.uniform(0, np.pi),
    )
    tex += rng.uniform(0.1, 0.2) * fine[..., None]
    return tex


def gen_real_scene(
    object_id: int,
    seed: int,
    image_size: tuple[int, int] = (80, 80),
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> PairSample:
    width, height = image_size
    rng = _rng(seed, object_id, 0x4EA1)
    depth = _depth_field(rng, width, height)

    gy, gx = np.gradient(depth)
    # surface slope in mm/pixel, normalized to a desk-scale pixel footprint
    shade = 1.0 / np.sqrt(1.0 + (gx / 60.0) ** 2 + (gy / 60.0) ** 2)
    light = rng.uniform(0.85, 1.1)
    tex = _object_texture(object_id, width, height)
    # periodic scene content (prints, fabrics, grilles) in the same band as display
    # moire, so only a display's own frequencies/angles mark it in RGB
    for _ in range(int(rng.integers(0, 3))):
        tex = tex + rng.uniform(0.1, 0.25) * grating_product(
            width,
            height,
            rng.uniform(0.08, 0.42),
            rng.uniform(0, np.pi),
            rng.uniform(0.08, 0.42),
            rng.uniform(0, np.pi),
            *rng.uniform(0, 2 * np.pi, size=2),
        )[..., None]
    rgb = np.clip(tex * (shade * light)[..., None], 0.0, 1.0)

    codes = np.zeros((height, width), dtype=np.uint16)
    flaky = rng.random((height, width))
    codes[flaky < 0.01] = 1
    codes[(flaky >= 0.01) & (flaky < 0.03)] = rng.integers(2, 8, size=int(((flaky >= 0.01) & (flaky < 0.03)).sum()))
    raw = encode_depth_map(depth, codes)
    tof = refine_tof(decode_raw_tof(raw), conf_threshold)

    return PairSample(
        rgb=RgbImage(rgb),
        tof=tof,
        label="real",
        object_category=f"object{object_id:03d}",
        sample_id=f"real-o{object_id:03d}-s{seed & 0xFFFFFFFF:08x}",
        raw_tof=raw,
    )


def gen_display_scene(
    real: PairSample,
    profile: DisplayProfile,
    seed: int,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> PairSample:
    if real.label != "real":
        raise ValueError("display scenes are recaptured from real samples only")
    h, w = real.rgb.height, real.rgb.width
    rng = _rng(seed, 0xD1)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    plane = profile.depth_plane_mm + rng.uniform(-1.0, 1.0) * profile.depth_jitter_mm
    moire = grating_product(
        w,
        h,
        profile.moire_freq_a,
        profile.moire_angle_a,
        profile.moire_freq_b,
        profile.moire_angle_b,
        *phases,
    )
    rgb = np.clip(real.rgb.values + profile.moire_amplitude * moire[..., None], 0.0, 1.0)

    depth = np.full((h, w), plane)
    if profile.depth_noise_std_mm > 0:
        depth = depth + rng.normal(0.0, profile.depth_noise_std_mm, size=(h, w))
    raw = encode_depth_map(depth, 0)
    tof = refine_tof(DepthMap(depth=decode_raw_tof(raw).depth, confidence=np.ones((h, w))), conf_threshold)

    return replace(
        real,
        rgb=RgbImage(rgb),
        tof=tof,
        label="display",
        display_id=profile.display_id,
        display_type=profile.display_type,
        device_type=profile.device_type,
        sample_id=real.sample_id.replace("real-", f"disp-{profile.display_id}-", 1),
        raw_tof=raw,
    )


def _view_seed(config: SynthConfig, object_id: int, view: int) -> int:
    return int(_rng(config.seed, object_id, view, 0x5EED).integers(0, 2**32))


def gen_samples(config: SynthConfig) -> list[PairSample]:
    """All samples in memory, split tags assigned; files are not written."""
    samples = []
    for obj in range(config.n_objects):
        for view in range(config.samples_per_object):
            vseed = _view_seed(config, obj, view)
            real = gen_real_scene(obj, vseed, config.image_size, config.conf_threshold)
            samples.append(real)
            for k, profile in enumerate(config.profiles):
                samples.append(gen_display_scene(real, profile, vseed + k + 1, config.conf_threshold))

    # split on metadata only, then copy tags back
    stub = Manifest(records=[sample_record(s, "", "", None) for s in samples])
    tags = {r.sample_id: r.split for r in split_dataset(stub, config.split_ratios, config.seed).records}
    return [replace(s, split=tags[s.sample_id]) for s in samples]


def gen_dataset(config: SynthConfig, root: Path) -> Manifest:
    root = Path(root)
    try:
        for sub in ("rgb", "tof", "tof_raw"):
            (root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset under {root}: {exc}") from exc

    records = []
    for s in gen_samples(config):
        rgb_rel = f"rgb/{s.sample_id}.png"
        tof_rel = f"tof/{s.sample_id}.png"
        raw_rel = f"tof_raw/{s.sample_id}.png"
        save_rgb_png(s.rgb.values, root / rgb_rel)
        save_gray8_png(s.tof.values, root / tof_rel)
        save_raw_tof_png(s.raw_tof, root / raw_rel)
        records.append(sample_record(s, rgb_rel, tof_rel, raw_rel))

    manifest = Manifest(records=records, root=root)
    write_manifest(manifest, root / "manifest.jsonl")
    (root / "synth_config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return manifest
