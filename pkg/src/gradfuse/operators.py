"""Linear imaging operators and their exact adjoints.

All functions take ``(bands, height, width)`` arrays (or anything
``np.asarray`` accepts, including :class:`~gradfuse.raster.MultiBandImage`)
and return float64 arrays. Every operator acts band by band.

Horizontal means along the width axis (last axis), vertical along height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
_AXIS = {HORIZONTAL: -1, VERTICAL: -2}


def _as_cube(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected a (bands, height, width) array, got shape {arr.shape}")
    return arr


def _axis(direction: str) -> int:
    try:
        return _AXIS[direction]
    except KeyError:
        raise ValueError(f"direction must be 'horizontal' or 'vertical', got {direction!r}") from None


# -- finite differences --------------------------------------------------------


def gradient_forward(image, direction: str) -> np.ndarray:
    """Forward difference ``x[i+1] - x[i]``; the last row/column is zero."""
    x = _as_cube(image)
    ax = _axis(direction)
    g = np.zeros_like(x)
    n = x.shape[ax]
    head = [slice(None)] * 3
    head[ax] = slice(0, n - 1)
    g[tuple(head)] = np.diff(x, axis=ax)
    return g


def gradient_adjoint(image, direction: str) -> np.ndarray:
    """Transpose of :func:`gradient_forward`: ``out[i] = y[i-1] - y[i]``.

    ``y[-1]`` is taken as 0 and the last entry of ``y`` is ignored, since the
    forward operator never writes it.
    """
    y = _as_cube(image)
    ax = _axis(direction)
    n = y.shape[ax]
    out = np.zeros_like(y)
    if n == 1:
        return out
    yy = np.moveaxis(y, ax, -1)
    oo = np.moveaxis(out, ax, -1)
    oo[..., : n - 1] -= yy[..., : n - 1]
    oo[..., 1:] += yy[..., : n - 1]
    return out


def laplacian_apply(image) -> np.ndarray:
    """5-point stencil ``4c - N - S - E - W`` with replicate padding."""
    x = _as_cube(image)
    # identical to sum_j grad_j^T grad_j: each interior edge contributes once
    out = np.zeros_like(x)
    for ax in (-2, -1):
        d = np.diff(x, axis=ax)
        n = x.shape[ax]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(0, n - 1), slice(1, n)
        out[tuple(lo)] -= d
        out[tuple(hi)] += d
    return out


def laplacian_adjoint(image) -> np.ndarray:
    # With replicate padding the stencil equals sum_j grad_j^T grad_j, which is
    # symmetric, so the transpose is the operator itself.
    return laplacian_apply(image)


# -- blur + decimation ----------------------------------------------------------


@dataclass(frozen=True)
class BlurKernel:
    """Separable, symmetric, unit-sum blur kernel."""

    taps1d: np.ndarray
    sigma: float = 0.0
    gnyq: float | None = None

    def __post_init__(self):
        t = np.array(self.taps1d, dtype=np.float64).ravel()
        if t.size % 2 != 1:
            raise ValueError("kernel size must be odd")
        t.flags.writeable = False
        object.__setattr__(self, "taps1d", t)

    @property
    def size(self) -> int:
        return self.taps1d.size

    @property
    def taps(self) -> np.ndarray:
        return np.outer(self.taps1d, self.taps1d)

    @classmethod
    def identity(cls) -> "BlurKernel":
        return cls(np.ones(1))


def mtf_sigma(ratio: int, gnyq: float) -> float:
    """Gaussian width whose frequency response equals ``gnyq`` at the LR Nyquist."""
    return (ratio / math.pi) * math.sqrt(2.0 * math.log(1.0 / gnyq))


def mtf_gaussian_kernel(ratio: int, gnyq: float = 0.3) -> BlurKernel:
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    if not 0.0 < gnyq < 1.0:
        raise ValueError(f"gnyq must lie in (0, 1), got {gnyq}")
    sigma = mtf_sigma(ratio, gnyq)
    # sub-half-pixel support collapses to a single tap
    half = math.ceil(3.0 * sigma) if 3.0 * sigma >= 0.5 else 0
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return BlurKernel(g, sigma=sigma, gnyq=gnyq)


@dataclass(frozen=True)
class DegradationSpec:
    ratio: int
    kernel: BlurKernel
    noise_sigma: float = 0.0
    noise_seed: int | None = None

    def __post_init__(self):
        if int(self.ratio) != self.ratio or self.ratio < 1:
            raise ValueError(f"ratio must be an integer >= 1, got {self.ratio}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def mtf(cls, ratio: int, gnyq: float = 0.3, noise_sigma: float = 0.0, noise_seed=None):
        return cls(ratio, mtf_gaussian_kernel(ratio, gnyq), noise_sigma, noise_seed)

    @property
    def offset(self) -> int:
        return self.ratio // 2


@lru_cache(maxsize=64)
def _axis_matrix(n: int, taps: tuple, transpose: bool = False) -> sparse.csr_matrix:
    """Banded ``n x n`` correlation matrix with the replicate border folded in."""
    half = len(taps) // 2
    rows = np.repeat(np.arange(n), len(taps))
    cols = np.clip(rows + np.tile(np.arange(-half, half + 1), n), 0, n - 1)
    vals = np.tile(np.asarray(taps, dtype=np.float64), n)
    if transpose:
        rows, cols = cols, rows
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _apply_axis(m, x: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(x, axis, 0)
    out = m @ moved.reshape(moved.shape[0], -1)
    return np.moveaxis(np.asarray(out).reshape(moved.shape), 0, axis)


def _correlate_axis(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    if taps.size == 1:
        return x * taps[0]
    return _apply_axis(_axis_matrix(x.shape[axis], tuple(taps)), x, axis)


def _correlate_axis_adjoint(y: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    if taps.size == 1:
        return y * taps[0]
    return _apply_axis(_axis_matrix(y.shape[axis], tuple(taps), True), y, axis)


def blur(image, kernel: BlurKernel) -> np.ndarray:
    x = _as_cube(image)
    return _correlate_axis(_correlate_axis(x, kernel.taps1d, -2), kernel.taps1d, -1)


def blur_adjoint(image, kernel: BlurKernel) -> np.ndarray:
    y = _as_cube(image)
    return _correlate_axis_adjoint(_correlate_axis_adjoint(y, kernel.taps1d, -1), kernel.taps1d, -2)


def _check_divisible(shape, ratio: int) -> None:
    h, w = shape[-2:]
    if h % ratio or w % ratio:
        raise ValueError(f"image dimensions {h}x{w} are not divisible by ratio {ratio}")


def apply_H(image, spec: DegradationSpec, seed: int | None = None, add_noise: bool = True) -> np.ndarray:
    """Blur with ``spec.kernel`` then keep every ratio-th sample from ``ratio // 2``.

    Gaussian noise is added when ``spec.noise_sigma > 0`` and ``add_noise``;
    ``seed`` overrides ``spec.noise_seed``. Solvers pass ``add_noise=False``
    to get the linear operator.
    """
    x = _as_cube(image)
    r = spec.ratio
    _check_divisible(x.shape, r)
    low = blur(x, spec.kernel)[:, spec.offset :: r, spec.offset :: r]
    if add_noise and spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.noise_seed if seed is None else seed)
        low = low + spec.noise_sigma * rng.standard_normal(low.shape)
    return np.ascontiguousarray(low)


def apply_H_adjoint(image, spec: DegradationSpec, hr_dims: tuple[int, int]) -> np.ndarray:
    """Transpose of the noise-free :func:`apply_H` for an HR grid of ``hr_dims``."""
    y = _as_cube(image)
    r = spec.ratio
    h, w = hr_dims
    _check_divisible((h, w), r)
    if y.shape[1:] != (h // r, w // r):
        raise ValueError(f"LR dims {y.shape[1:]} inconsistent with HR dims {hr_dims} at ratio {r}")
    up = np.zeros((y.shape[0], h, w))
    up[:, spec.offset :: r, spec.offset :: r] = y
    return blur_adjoint(up, spec.kernel)


# -- interpolation ----------------------------------------------------------------


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic weights for offsets -1, 0, 1, 2 at fractional position ``t``."""
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    w = np.where(
        d <= 1,
        (a + 2) * d**3 - (a + 3) * d**2 + 1,
        a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a,
    )
    return w


def interp_matrix(n_low: int, ratio: int) -> np.ndarray:
    """Dense ``(n_low * ratio, n_low)`` bicubic interpolation matrix.

    HR index ``i`` sits at LR coordinate ``(i - ratio // 2) / ratio``, the same
    sampling phase used by :func:`apply_H`. Out-of-range taps are clamped.
    """
    n_high = n_low * ratio
    u = (np.arange(n_high) - ratio // 2) / ratio
    base = np.floor(u).astype(int)
    w = _cubic_weights(u - base)
    m = np.zeros((n_high, n_low))
    rows = np.arange(n_high)
    for k in range(4):
        cols = np.clip(base - 1 + k, 0, n_low - 1)
        np.add.at(m, (rows, cols), w[:, k])
    return m


def upsample_interp(image, ratio: int) -> np.ndarray:
    """Per-band Catmull-Rom bicubic upsampling by an integer ``ratio``."""
    x = _as_cube(image)
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    if ratio == 1:
        return x.copy()
    mh = interp_matrix(x.shape[1], ratio)
    mw = interp_matrix(x.shape[2], ratio)
    return np.einsum("ij,bjk,lk->bil", mh, x, mw, optimize=True)
