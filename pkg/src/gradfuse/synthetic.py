"""Seeded synthetic PAN/MS scenes for tests and demos.

A scene starts from a high-resolution MS "truth": smooth band-correlated
fields plus sharp structure (rectangles, disks and fine texture) shared by
all bands with band-specific contrast, and a second sharp layer whose
contrast changes sign across the spectrum. The PAN is a fixed weighted sum of
the truth bands and the MS is the truth degraded by ``H``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import operators as ops


@dataclass(frozen=True)
class Scene:
    pan: np.ndarray  # (1, R*h, R*w)
    ms: np.ndarray  # (s, h, w)
    truth: np.ndarray  # (s, R*h, R*w)


def _smooth_field(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    f -= f.mean()
    return f / (np.abs(f).max() + 1e-12)


def _structure(rng, shape):
    h, w = shape
    s = np.zeros(shape)
    yy, xx = np.mgrid[:h, :w]
    for _ in range(int(rng.integers(6, 12))):
        level = rng.uniform(-1.0, 1.0)
        if rng.random() < 0.6:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            dy, dx = rng.integers(h // 16 + 2, h // 3 + 3), rng.integers(w // 16 + 2, w // 3 + 3)
            s[y0 : y0 + dy, x0 : x0 + dx] = level
        else:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            rad = rng.uniform(h / 20 + 1, h / 6 + 2)
            s[(yy - cy) ** 2 + (xx - cx) ** 2 < rad**2] = level
    s += 0.3 * _smooth_field(rng, shape, 1.0)
    return s / (np.abs(s).max() + 1e-12)


def make_truth(shape, bands: int = 4, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    h, w = shape
    shared_low = [_smooth_field(rng, shape, max(h, w) / 8) for _ in range(3)]
    detail = _structure(rng, shape)
    flip = _structure(rng, shape)
    flip_contrast = np.linspace(-0.08, 0.08, bands) if bands > 1 else np.zeros(1)
    out = np.empty((bands, h, w))
    for b in range(bands):
        mix = rng.uniform(-1.0, 1.0, size=3)
        low = sum(m * f for m, f in zip(mix, shared_low)) / np.abs(mix).sum()
        contrast = rng.uniform(0.08, 0.2)
        out[b] = rng.uniform(0.35, 0.6) + 0.15 * low + contrast * detail + flip_contrast[b] * flip
    return np.clip(out, 0.0, 1.0)


def pan_weights(bands: int) -> np.ndarray:
    w = np.linspace(1.0, 2.0, bands)
    return w / w.sum()


def make_scene(ms_shape=(64, 64), bands: int = 4, ratio: int = 4, gnyq: float = 0.3, seed: int = 0) -> Scene:
    """A scene whose MS is ``ms_shape`` and whose PAN is ``ratio`` times larger."""
    hr = (ms_shape[0] * ratio, ms_shape[1] * ratio)
    truth = make_truth(hr, bands, seed)
    pan = np.tensordot(pan_weights(bands), truth, axes=1)[None]
    ms = ops.apply_H(truth, ops.DegradationSpec.mtf(ratio, gnyq))
    return Scene(pan=pan, ms=np.clip(ms, 0.0, 1.0), truth=truth)
