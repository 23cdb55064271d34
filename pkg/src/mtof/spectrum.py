"""DFT magnitude spectra and azimuthally averaged 1-D power spectra."""

from __future__ import annotations

import numpy as np


def _as_gray(values) -> np.ndarray:
    arr = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.ndim != 2:
        raise ValueError(f"expected a single-channel 2-D map, got shape {arr.shape}")
    return arr


def dft2_magnitude(values) -> np.ndarray:
    """Centered magnitude of the 2-D DFT. RGB input is averaged to gray first."""
    arr = _as_gray(values)
    if min(arr.shape) < 2:
        raise ValueError(f"spectrum needs at least 2x2 input, got {arr.shape}")
    return np.abs(np.fft.fftshift(np.fft.fft2(arr)))


def profile_length(height: int, width: int) -> int:
    return min(height, width) // 2


def radius_grid(height: int, width: int) -> np.ndarray:
    cy, cx = height // 2, width // 2
    y, x = np.mgrid[:height, :width]
    return np.rint(np.hypot(y - cy, x - cx)).astype(np.int64)


def azimuthal_average(spec: np.ndarray) -> np.ndarray:
    """Mean magnitude per integer radius around the shifted DC bin.

    Radii are rounded to the nearest integer; the profile stops at
    floor(min(h, w) / 2) and empty bins are 0.
    """
    spec = np.asarray(spec, dtype=np.float64)
    h, w = spec.shape
    n = profile_length(h, w)
    r = radius_grid(h, w).ravel()
    keep = r < n
    sums = np.bincount(r[keep], weights=spec.ravel()[keep], minlength=n)
    counts = np.bincount(r[keep], minlength=n)
    out = np.zeros(n)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def power_spectrum_1d(values) -> np.ndarray:
    return np.log1p(azimuthal_average(dft2_magnitude(values)))


def class_mean_profiles(profiles: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean profile of the real (label 0) and display (label 1) rows."""
    profiles = np.asarray(profiles)
    labels = np.asarray(labels)
    return profiles[labels == 0].mean(axis=0), profiles[labels == 1].mean(axis=0)
