"""Sample types, ToF word decoding, preprocessing and manifest handling.

Raw ToF words follow the 16-bit mobile depth layout: the top three bits
hold a confidence code, the low 13 bits hold depth in millimeters.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

DEPTH_BITS = 13
DEPTH_MASK = (1 << DEPTH_BITS) - 1  # 0x1FFF
MAX_DEPTH_MM = DEPTH_MASK  # 8191
SCHEMA_VERSION = 1

LABELS = ("real", "display")
SPLITS = ("train", "val", "test")
DEVICE_TYPES = ("monitor", "laptop", "phone", "tablet", "projector", "none")

# (width, height); the experiments resize to 180x240, the dataset section says 180x180
DEFAULT_RESIZE = (240, 180)
DEFAULT_CROP = 160
DEFAULT_CONF_THRESHOLD = 0.5


class ManifestError(ValueError):
    pass


@dataclass
class RawToFMap:
    width: int
    height: int
    words: np.ndarray  # uint16, row-major, length width*height or shape (h, w)

    def grid(self) -> np.ndarray:
        words = np.asarray(self.words)
        if words.size != self.width * self.height:
            raise ValueError(
                f"raw ToF map declares {self.width}x{self.height} but holds {words.size} words"
            )
        return words.astype(np.uint16).reshape(self.height, self.width)


@dataclass
class DepthMap:
    depth: np.ndarray  # (h, w) millimeters
    confidence: np.ndarray  # (h, w) in [0, 1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class ToFMap:
    values: np.ndarray  # (h, w) in [0, 1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class RgbImage:
    values: np.ndarray  # (h, w, 3) in [0, 1]

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError(f"RGB image must be (h, w, 3), got {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class PairSample:
    rgb: RgbImage
    tof: ToFMap
    label: str
    display_id: str = "none"
    display_type: str = "none"
    device_type: str = "none"
    object_category: str = ""
    split: str = "train"
    sample_id: str = ""
    raw_tof: RawToFMap | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if (self.label == "real") != (self.display_id == "none"):
            raise ValueError("label 'real' must go with display_id 'none' and vice versa")
        if (self.rgb.height, self.rgb.width) != (self.tof.height, self.tof.width):
            raise ValueError(
                f"rgb {self.rgb.width}x{self.rgb.height} and tof "
                f"{self.tof.width}x{self.tof.height} differ in size"
            )

    @property
    def is_display(self) -> bool:
        return self.label == "display"


@dataclass
class SampleRecord:
    """One manifest line: file references plus metadata, paths relative to the root."""

    sample_id: str
    rgb: str
    tof: str
    label: str
    tof_raw: str | None = None
    display_id: str = "none"
    display_type: str = "none"
    device_type: str = "none"
    object_category: str = ""
    split: str = "train"


@dataclass
class Manifest:
    records: list[SampleRecord]
    root: Path | None = None
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.records)

    def display_ids(self) -> list[str]:
        return sorted({r.display_id for r in self.records if r.label == "display"})


# ---------------------------------------------------------------------------
# ToF decoding and refinement


def confidence_from_code(code: int) -> float:
    if code == 0:
        return 1.0
    if code == 1:
        return 0.0
    return (code - 1) / 7.0


_CONF_TABLE = np.array([confidence_from_code(c) for c in range(8)], dtype=np.float64)


def decode_tof_pixel(word: int) -> tuple[int, float]:
    word = int(word) & 0xFFFF
    depth = word & DEPTH_MASK
    code = word >> DEPTH_BITS
    return depth, float(_CONF_TABLE[code])


def encode_tof_pixel(depth_mm: int, code: int) -> int:
    if not 0 <= depth_mm <= MAX_DEPTH_MM:
        raise ValueError(f"depth {depth_mm} outside 13-bit range")
    if not 0 <= code <= 7:
        raise ValueError(f"confidence code {code} outside 3-bit range")
    return (code << DEPTH_BITS) | depth_mm


def confidence_code(word: int) -> int:
    return (int(word) & 0xFFFF) >> DEPTH_BITS


def decode_raw_tof(raw: RawToFMap) -> DepthMap:
    grid = raw.grid()
    depth = (grid & DEPTH_MASK).astype(np.float64)
    conf = _CONF_TABLE[grid >> DEPTH_BITS]
    return DepthMap(depth=depth, confidence=conf)


def encode_depth_map(depth_mm: np.ndarray, codes: np.ndarray | int = 0) -> RawToFMap:
    depth = np.clip(np.rint(depth_mm), 0, MAX_DEPTH_MM).astype(np.uint16)
    codes = np.broadcast_to(np.asarray(codes, dtype=np.uint16), depth.shape)
    words = (codes << DEPTH_BITS) | depth
    h, w = depth.shape
    return RawToFMap(width=w, height=h, words=words.astype(np.uint16))


def refine_tof(depth: DepthMap, conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> ToFMap:
    """Mask low-confidence pixels and map millimeters onto the 8-bit scale.

    Pixels below ``conf_threshold`` are in-filled with the mean depth of the
    confident ones (0 if there are none). Scaling uses the fixed 13-bit
    range rather than per-image min/max so absolute flatness survives.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError("conf_threshold must lie in [0, 1]")
    d = np.asarray(depth.depth, dtype=np.float64)
    confident = np.asarray(depth.confidence) >= conf_threshold
    fill = d[confident].mean() if confident.any() else 0.0
    d = np.where(confident, d, fill)
    eight_bit = np.rint(np.clip(d, 0, MAX_DEPTH_MM) * 255.0 / MAX_DEPTH_MM)
    return ToFMap(values=eight_bit / 255.0)


# ---------------------------------------------------------------------------
# Geometry


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # pixel-center convention (align_corners=False), edges clamped
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_array(values: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    if target_w < 1 or target_h < 1:
        raise ValueError(f"target size must be positive, got {target_w}x{target_h}")
    h, w = values.shape[:2]
    if (h, w) == (target_h, target_w):
        return values.copy()
    y0, y1, fy = _bilinear_axis(h, target_h)
    x0, x1, fx = _bilinear_axis(w, target_w)
    extra = (1,) * (values.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    top = values[y0][:, x0] * (1 - fx) + values[y0][:, x1] * fx
    bottom = values[y1][:, x0] * (1 - fx) + values[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(out, 0.0, 1.0)


def resize_map(m: RgbImage | ToFMap, target_w: int, target_h: int) -> RgbImage | ToFMap:
    return type(m)(values=resize_array(m.values, target_w, target_h))


def resize_pair(sample: PairSample, target_w: int, target_h: int) -> PairSample:
    return replace(
        sample,
        rgb=resize_map(sample.rgb, target_w, target_h),
        tof=resize_map(sample.tof, target_w, target_h),
    )


def crop_offsets(height: int, width: int, size: int, seed: int) -> tuple[int, int]:
    if size > min(height, width):
        raise ValueError(f"crop size {size} exceeds map size {width}x{height}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return top, left


def random_crop_pair(sample: PairSample, size: int, seed: int) -> PairSample:
    top, left = crop_offsets(sample.tof.height, sample.tof.width, size, seed)
    window = (slice(top, top + size), slice(left, left + size))
    return replace(
        sample,
        rgb=RgbImage(sample.rgb.values[window].copy()),
        tof=ToFMap(sample.tof.values[window].copy()),
    )


def center_crop_array(values: np.ndarray, size: int) -> np.ndarray:
    h, w = values.shape[:2]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds map size {w}x{h}")
    top, left = (h - size) // 2, (w - size) // 2
    return values[top : top + size, left : left + size]


# ---------------------------------------------------------------------------
# Splits


def _split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_train = min(n, int(math.floor(n * ratios[0] + 0.5)))
    n_val = min(n - n_train, int(math.floor(n * ratios[1] + 0.5)))
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    manifest: Manifest,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Manifest:
    """Assign train/val/test tags per (object_category, display_id) group."""
    if len(manifest.records) == 0:
        raise ManifestError("cannot split an empty manifest")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")

    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, rec in enumerate(manifest.records):
        groups[(rec.object_category, rec.display_id)].append(i)

    rng = np.random.default_rng(seed)
    tags = [""] * len(manifest.records)
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda i: manifest.records[i].sample_id)
        order = rng.permutation(len(members))
        n_train, n_val, _ = _split_counts(len(members), ratios)
        for rank, j in enumerate(order):
            if rank < n_train:
                tags[members[j]] = "train"
            elif rank < n_train + n_val:
                tags[members[j]] = "val"
            else:
                tags[members[j]] = "test"

    records = [replace(r, split=t) for r, t in zip(manifest.records, tags)]
    return replace(manifest, records=records)


# ---------------------------------------------------------------------------
# Manifest I/O


def validate_manifest(manifest: Manifest, check_files: bool = True) -> None:
    if manifest.schema_version != SCHEMA_VERSION:
        raise ManifestError(f"unsupported schema version {manifest.schema_version}")
    seen_ids: set[str] = set()
    device_of: dict[str, str] = {}
    for rec in manifest.records:
        if rec.sample_id in seen_ids:
            raise ManifestError(f"duplicate sample_id {rec.sample_id}")
        seen_ids.add(rec.sample_id)
        if rec.label not in LABELS:
            raise ManifestError(f"{rec.sample_id}: unknown label {rec.label!r}")
        if rec.split not in SPLITS:
            raise ManifestError(f"{rec.sample_id}: unknown split {rec.split!r}")
        if (rec.label == "real") != (rec.display_id == "none"):
            raise ManifestError(f"{rec.sample_id}: label/display_id mismatch")
        if rec.device_type not in DEVICE_TYPES:
            raise ManifestError(f"{rec.sample_id}: unknown device_type {rec.device_type!r}")
        if rec.label == "real" and rec.device_type != "none":
            raise ManifestError(f"{rec.sample_id}: real sample with device_type {rec.device_type}")
        prev = device_of.setdefault(rec.display_id, rec.device_type)
        if prev != rec.device_type:
            raise ManifestError(
                f"display {rec.display_id} listed as both {prev} and {rec.device_type}"
            )
        if check_files:
            if manifest.root is None:
                raise ManifestError("manifest has no root directory to resolve files")
            for rel in (rec.rgb, rec.tof, rec.tof_raw):
                if rel is not None and not (manifest.root / rel).is_file():
                    raise ManifestError(f"{rec.sample_id}: missing file {rel}")


def write_manifest(manifest: Manifest, path: Path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for rec in manifest.records:
            row = {"schema_version": manifest.schema_version, **asdict(rec)}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path: Path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    records = []
    version = SCHEMA_VERSION
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            version = row.pop("schema_version", None)
            if version != SCHEMA_VERSION:
                raise ManifestError(f"{path}:{lineno}: unsupported schema version {version}")
            try:
                records.append(SampleRecord(**row))
            except TypeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return Manifest(records=records, root=path.parent, schema_version=version)


def save_rgb_png(values: np.ndarray, path: Path) -> None:
    Image.fromarray(np.rint(np.clip(values, 0, 1) * 255).astype(np.uint8)).save(path)


def save_gray8_png(values: np.ndarray, path: Path) -> None:
    Image.fromarray(np.rint(np.clip(values, 0, 1) * 255).astype(np.uint8)).save(path)


def save_raw_tof_png(raw: RawToFMap, path: Path) -> None:
    Image.fromarray(raw.grid()).save(path)


def load_rgb_png(path: Path) -> RgbImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return RgbImage(arr / 255.0)


def load_gray8_png(path: Path) -> ToFMap:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return ToFMap(arr / 255.0)


def load_raw_tof_png(path: Path) -> RawToFMap:
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.uint16)
    h, w = arr.shape
    return RawToFMap(width=w, height=h, words=arr)


def load_sample(manifest: Manifest, rec: SampleRecord, with_raw: bool = False) -> PairSample:
    root = manifest.root or Path(".")
    raw = load_raw_tof_png(root / rec.tof_raw) if with_raw and rec.tof_raw else None
    return PairSample(
        rgb=load_rgb_png(root / rec.rgb),
        tof=load_gray8_png(root / rec.tof),
        label=rec.label,
        display_id=rec.display_id,
        display_type=rec.display_type,
        device_type=rec.device_type,
        object_category=rec.object_category,
        split=rec.split,
        sample_id=rec.sample_id,
        raw_tof=raw,
    )


def load_samples(manifest: Manifest, records: Iterable[SampleRecord] | None = None) -> list[PairSample]:
    recs = manifest.records if records is None else list(records)
    return [load_sample(manifest, r) for r in recs]


def sample_record(sample: PairSample, rgb: str, tof: str, tof_raw: str | None) -> SampleRecord:
    return SampleRecord(
        sample_id=sample.sample_id,
        rgb=rgb,
        tof=tof,
        tof_raw=tof_raw,
        label=sample.label,
        display_id=sample.display_id,
        display_type=sample.display_type,
        device_type=sample.device_type,
        object_category=sample.object_category,
        split=sample.split,
    )

