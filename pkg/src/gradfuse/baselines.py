"""Comparison fusion methods: plain interpolation and MTF-matched GLP injection."""

from __future__ import annotations

import logging

import numpy as np

from . import operators as ops

log = logging.getLogger(__name__)


def fuse_naive(Y, ratio: int) -> np.ndarray:
    """Bicubic upsampling of the MS image; the PAN is ignored."""
    return ops.upsample_interp(Y, ratio)


def injection_gains(ms_up: np.ndarray, pan_low_up: np.ndarray) -> np.ndarray:
    """Per-band global gains ``cov(MS_b, P_low) / var(P_low)``."""
    p = pan_low_up[0] - pan_low_up[0].mean()
    var = float(np.mean(p * p))
    # roundoff-level variance (e.g. a blurred constant) counts as zero
    scale = float(np.abs(pan_low_up).max())
    if var <= (1e-12 * scale) ** 2:
        log.warning("low-pass PAN has zero variance; injecting no detail")
        return np.zeros(ms_up.shape[0])
    centered = ms_up - ms_up.mean(axis=(1, 2), keepdims=True)
    return np.einsum("bij,ij->b", centered, p) / (p.size * var)


def fuse_glp_mtf(Y, Z, spec: ops.DegradationSpec) -> np.ndarray:
    """Generalized Laplacian pyramid fusion with an MTF-matched low-pass.

    The PAN detail ``Z - up(H Z)`` is added to each upsampled MS band with a
    single global gain per band.
    """
    Y = ops._as_cube(Y)
    Z = ops._as_cube(Z)
    r = spec.ratio
    if Z.shape[0] != 1:
        raise ValueError("PAN must have one band")
    if Z.shape[1:] != (Y.shape[1] * r, Y.shape[2] * r):
        raise ValueError(f"PAN dims {Z.shape[1:]} must be ratio {r} times MS dims {Y.shape[1:]}")
    ms_up = ops.upsample_interp(Y, r)
    z_low = ops.upsample_interp(ops.apply_H(Z, spec, add_noise=False), r)
    detail = Z - z_low
    gains = injection_gains(ms_up, z_low)
    return ms_up + gains[:, None, None] * detail
