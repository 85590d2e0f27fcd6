"""Full-reference quality indexes: ERGAS, SAM, Q (UIQI) and PSNR.

Images are ``(bands, height, width)`` with values on a [0, 1] scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

PSNR_CAP = 300.0
Q_BLOCK = 32
FIELDS = ("ergas", "sam_degrees", "q", "psnr_db")


def _pair(test, ref) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(test, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    if r.ndim == 2:
        r = r[None]
    if t.shape != r.shape:
        raise ValueError(f"shape mismatch: test {t.shape} vs ref {r.shape}")
    return t, r


def psnr(test, ref) -> float:
    t, r = _pair(test, ref)
    mse = float(np.mean((t - r) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def sam(test, ref) -> float:
    """Mean spectral angle in degrees over pixels with nonzero spectra.

    Uses ``2 atan2(|u - v|, |u + v|)`` on unit vectors, which is exact for
    identical spectra where ``arccos`` of a rounded dot product is not.
    """
    t, r = _pair(test, ref)
    if t.shape[0] < 2:
        raise ValueError("SAM needs at least two bands")
    tn = np.sqrt(np.sum(t * t, axis=0))
    rn = np.sqrt(np.sum(r * r, axis=0))
    keep = (tn >= 1e-12) & (rn >= 1e-12)
    if not keep.any():
        raise ValueError("SAM undefined: every pixel has a zero spectrum")
    u = t[:, keep] / tn[keep]
    v = r[:, keep] / rn[keep]
    angle = 2.0 * np.arctan2(np.sqrt(np.sum((u - v) ** 2, axis=0)), np.sqrt(np.sum((u + v) ** 2, axis=0)))
    return float(np.degrees(angle.mean()))


def ergas(test, ref, ratio: int) -> float:
    t, r = _pair(test, ref)
    mu = r.mean(axis=(1, 2))
    if np.any(mu == 0):
        raise ValueError("ERGAS undefined: a reference band has zero mean")
    rmse = np.sqrt(np.mean((t - r) ** 2, axis=(1, 2)))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / mu) ** 2)))


def _uiqi(x: np.ndarray, y: np.ndarray) -> float | None:
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    cxy = np.mean(dx * dy)
    den = (vx + vy) * (mx * mx + my * my)
    if den == 0.0:
        return None
    return float(4.0 * cxy * mx * my / den)


def q_index(test, ref, block: int = Q_BLOCK) -> float:
    """Band-averaged universal image quality index on ``block`` windows.

    Windows tile the image with stride ``block``; partial windows at the
    right/bottom edge are dropped. An image smaller than one window is scored
    as a single whole-image window. Windows with a zero denominator are
    skipped; if every window of every band is skipped the score is 1 for
    identical images and 0 otherwise.
    """
    t, r = _pair(test, ref)
    _, h, w = t.shape
    if h < block or w < block:
        windows = [(slice(0, h), slice(0, w))]
    else:
        windows = [
            (slice(i, i + block), slice(j, j + block))
            for i in range(0, h - block + 1, block)
            for j in range(0, w - block + 1, block)
        ]
    per_band = []
    for b in range(t.shape[0]):
        vals = [q for rs, cs in windows if (q := _uiqi(t[b, rs, cs], r[b, rs, cs])) is not None]
        if vals:
            per_band.append(np.mean(vals))
    if not per_band:
        return 1.0 if np.array_equal(t, r) else 0.0
    return float(np.mean(per_band))


@dataclass
class QualityReport:
    ergas: float
    sam_degrees: float
    q: float
    psnr_db: float
    ratio: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def as_row(self) -> tuple[float, float, float, float]:
        return tuple(getattr(self, f) for f in FIELDS)


def quality_report(test, ref, ratio: int) -> QualityReport:
    t, r = _pair(test, ref)
    # spectral angles need at least two bands
    s = sam(t, r) if t.shape[0] >= 2 else float("nan")
    return QualityReport(ergas(t, r, ratio), s, q_index(t, r), psnr(t, r), ratio)


def mean_report(reports: list[QualityReport]) -> QualityReport:
    if not reports:
        raise ValueError("no reports to average")
    ratios = {rep.ratio for rep in reports}
    if len(ratios) != 1:
        raise ValueError(f"cannot average reports with different ratios {sorted(ratios)}")
    means = {f: float(np.mean([getattr(rep, f) for rep in reports])) for f in FIELDS}
    return QualityReport(ratio=ratios.pop(), **means)
