"""Gradient-guided fusion energy and its minimization.

The energy of a fused image ``X`` given the LR-MS ``Y`` and gradient
priors ``G1`` (horizontal) and ``G2`` (vertical) is::

    E(X) = 1/2 ||Y - H X||^2 + lambda1/2 sum_j ||grad_j X - G_j||^2 + lambda2/2 ||D X||^2

It is a strictly convex quadratic, so :func:`cg_solve` (conjugate gradient
on the normal equations) and :func:`admm_fuse` (splitting ``V_j = grad_j X``)
must agree. Both solve each band independently.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import operators as ops

DIRECTIONS = (ops.HORIZONTAL, ops.VERTICAL)


class SolverError(ArithmeticError):
    pass


@dataclass
class FusionParams:
    spec: ops.DegradationSpec
    lambda1: float = 0.5
    lambda2: float = 0.01
    rho: float | None = None  # None -> 2 * lambda1 (or 1 when lambda1 == 0)
    outer_iters: int = 50
    inner_cg_iters: int = 100
    inner_cg_tol: float = 1e-6
    stop_tol: float = 1e-10
    cg_max_iters: int = 2000

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.rho is not None and self.rho <= 0:
            raise ValueError("rho must be > 0")
        if self.inner_cg_tol <= 0 or self.stop_tol <= 0:
            raise ValueError("tolerances must be > 0")

    @property
    def penalty(self) -> float:
        if self.rho is not None:
            return self.rho
        return 2.0 * self.lambda1 if self.lambda1 > 0 else 1.0

    def as_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "rho": self.penalty,
            "outer_iters": self.outer_iters,
            "inner_cg_iters": self.inner_cg_iters,
            "inner_cg_tol": self.inner_cg_tol,
            "stop_tol": self.stop_tol,
            "ratio": self.spec.ratio,
            "kernel_size": self.spec.kernel.size,
            "kernel_sigma": self.spec.kernel.sigma,
            "gnyq": self.spec.kernel.gnyq,
        }


@dataclass
class SolveReport:
    iterations: int = 0
    primal_residuals: list[float] = field(default_factory=list)
    dual_residuals: list[float] = field(default_factory=list)
    energy_trace: list[float] = field(default_factory=list)
    converged: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


# -- energy ------------------------------------------------------------------------


def _H(x, spec):
    return ops.apply_H(x, spec, add_noise=False)


def energy_terms(X, Y, G1, G2, params: FusionParams) -> tuple[float, float, float]:
    """The spectral, gradient and Laplacian terms, already weighted."""
    X = ops._as_cube(X)
    Y = ops._as_cube(Y)
    G = (ops._as_cube(G1), ops._as_cube(G2))
    r = params.spec.ratio
    if Y.shape != (X.shape[0], X.shape[1] // r, X.shape[2] // r) or X.shape[1] % r or X.shape[2] % r:
        raise ValueError(f"Y shape {Y.shape} is not the degraded shape of X {X.shape}")
    for g in G:
        if g.shape != X.shape:
            raise ValueError(f"gradient prior shape {g.shape} differs from X {X.shape}")
    spectral = 0.5 * float(np.sum((Y - _H(X, params.spec)) ** 2))
    grad = 0.0
    for d, g in zip(DIRECTIONS, G):
        grad += float(np.sum((ops.gradient_forward(X, d) - g) ** 2))
    lap = float(np.sum(ops.laplacian_apply(X) ** 2))
    return spectral, 0.5 * params.lambda1 * grad, 0.5 * params.lambda2 * lap


def energy_eval(X, Y, G1, G2, params: FusionParams) -> float:
    return sum(energy_terms(X, Y, G1, G2, params))


# -- conjugate gradient ------------------------------------------------------------


def conjugate_gradient(apply_A, b: np.ndarray, x0: np.ndarray, tol: float, max_iter: int, on_iter=None):
    """Plain CG for a symmetric positive definite ``apply_A``.

    Stops when ``||b - A x|| <= tol * ||b||`` (absolute ``tol`` if ``b = 0``).
    Returns ``(x, iterations, relative_residual)``.
    """
    x = x0.copy()
    r = b - apply_A(x)
    bnorm = float(np.sqrt(np.sum(b * b)))
    scale = bnorm if bnorm > 0 else 1.0
    rr = float(np.sum(r * r))
    rel = np.sqrt(rr) / scale
    p = r.copy()
    it = 0
    while rel > tol and it < max_iter:
        Ap = apply_A(p)
        pAp = float(np.sum(p * Ap))
        if not np.isfinite(pAp) or pAp <= 0:
            raise SolverError(f"CG breakdown: p^T A p = {pAp}")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        rel = np.sqrt(rr) / scale
        it += 1
        if on_iter is not None:
            on_iter(x, rel)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite CG iterate")
    return x, it, rel


def _grad_normal(x):
    return sum(ops.gradient_adjoint(ops.gradient_forward(x, d), d) for d in DIRECTIONS)


def normal_operator(params: FusionParams, grad_weight: float):
    """``x -> H^T H x + grad_weight * sum_j grad_j^T grad_j x + lambda2 D^T D x``."""
    spec = params.spec

    def apply(x):
        out = ops.apply_H_adjoint(_H(x, spec), spec, x.shape[1:])
        if grad_weight:
            out = out + grad_weight * _grad_normal(x)
        if params.lambda2:
            out = out + params.lambda2 * ops.laplacian_adjoint(ops.laplacian_apply(x))
        return out

    return apply


def _check_inputs(Y, G1, G2, params, hr_dims):
    Y = ops._as_cube(Y)
    G1 = ops._as_cube(G1)
    G2 = ops._as_cube(G2)
    h, w = hr_dims
    r = params.spec.ratio
    if Y.shape[1:] != (h // r, w // r) or h % r or w % r:
        raise ValueError(f"Y dims {Y.shape[1:]} inconsistent with HR dims {hr_dims} at ratio {r}")
    for g in (G1, G2):
        if g.shape != (Y.shape[0], h, w):
            raise ValueError(f"gradient prior shape {g.shape}, expected {(Y.shape[0], h, w)}")
    return Y, G1, G2


def _merge(reports: list[SolveReport]) -> SolveReport:
    """Combine per-band reports; shorter traces are padded with their last value.

    Energies add across bands; residuals take the max across bands.
    """
    n = max(r.iterations for r in reports)

    def pad(seq):
        return seq + [seq[-1]] * (n - len(seq)) if seq else [0.0] * n

    merged = SolveReport(iterations=n, converged=all(r.converged for r in reports))
    if n:
        merged.primal_residuals = list(np.max([pad(r.primal_residuals) for r in reports], axis=0))
        merged.dual_residuals = list(np.max([pad(r.dual_residuals) for r in reports], axis=0))
        merged.energy_trace = list(np.sum([pad(r.energy_trace) for r in reports], axis=0))
    merged.primal_residuals = [float(v) for v in merged.primal_residuals]
    merged.dual_residuals = [float(v) for v in merged.dual_residuals]
    merged.energy_trace = [float(v) for v in merged.energy_trace]
    return merged


def _rhs(Yb, G1b, G2b, params, grad_weight, hr_dims):
    b = ops.apply_H_adjoint(Yb, params.spec, hr_dims)
    if grad_weight:
        b = b + grad_weight * (ops.gradient_adjoint(G1b, ops.HORIZONTAL) + ops.gradient_adjoint(G2b, ops.VERTICAL))
    return b


def cg_solve(Y, G1, G2, params: FusionParams, hr_dims, x0=None):
    """Minimize the energy directly: CG on the normal equations, band by band."""
    Y, G1, G2 = _check_inputs(Y, G1, G2, params, hr_dims)
    if x0 is None:
        x0 = ops.upsample_interp(Y, params.spec.ratio)
    A = normal_operator(params, params.lambda1)
    bands, reports = [], []
    for k in range(Y.shape[0]):
        sl = slice(k, k + 1)
        b = _rhs(Y[sl], G1[sl], G2[sl], params, params.lambda1, hr_dims)
        rep = SolveReport()

        def record(x, rel, sl=sl, rep=rep):
            rep.primal_residuals.append(float(rel))
            rep.dual_residuals.append(0.0)
            rep.energy_trace.append(energy_eval(x, Y[sl], G1[sl], G2[sl], params))

        x, it, rel = conjugate_gradient(A, b, x0[sl], params.stop_tol, params.cg_max_iters, record)
        rep.iterations = it
        rep.converged = rel <= params.stop_tol
        bands.append(x)
        reports.append(rep)
    return np.concatenate(bands), _merge(reports)


def _admm_band(Yb, G1b, G2b, x0, params: FusionParams, hr_dims) -> tuple[np.ndarray, SolveReport]:
    rho = params.penalty
    lam1 = params.lambda1
    A = normal_operator(params, rho)
    HtY = ops.apply_H_adjoint(Yb, params.spec, hr_dims)
    G = (G1b, G2b)
    x = x0.copy()
    V = [ops.gradient_forward(x, d) for d in DIRECTIONS]
    U = [np.zeros_like(x), np.zeros_like(x)]
    thresh = params.stop_tol * np.sqrt(x.size)
    rep = SolveReport()
    for _ in range(params.outer_iters):
        b = HtY + rho * sum(ops.gradient_adjoint(v - u, d) for v, u, d in zip(V, U, DIRECTIONS))
        x, _, _ = conjugate_gradient(A, b, x, params.inner_cg_tol, params.inner_cg_iters)
        grads = [ops.gradient_forward(x, d) for d in DIRECTIONS]
        V_old = V
        V = [(lam1 * g + rho * (gx + u)) / (lam1 + rho) for g, gx, u in zip(G, grads, U)]
        U = [u + gx - v for u, gx, v in zip(U, grads, V)]
        primal = float(np.sqrt(sum(np.sum((gx - v) ** 2) for gx, v in zip(grads, V))))
        dual = rho * float(np.sqrt(np.sum(sum(ops.gradient_adjoint(v - vo, d) for v, vo, d in zip(V, V_old, DIRECTIONS)) ** 2)))
        if not (np.isfinite(primal) and np.isfinite(dual) and np.all(np.isfinite(x))):
            raise SolverError("non-finite ADMM iterate")
        rep.primal_residuals.append(primal)
        rep.dual_residuals.append(dual)
        rep.energy_trace.append(energy_eval(x, Yb, G1b, G2b, params))
        rep.iterations += 1
        if max(primal, dual) < thresh:
            rep.converged = True
            break
    return x, rep


def admm_fuse(Y, G1, G2, params: FusionParams, hr_dims, x0=None):
    """ADMM with splitting ``V_j = grad_j X`` and scaled duals ``U_j``.

    Per outer iteration: an inner CG X-update, the closed-form V-update
    ``(lambda1 G_j + rho (grad_j X + U_j)) / (lambda1 + rho)`` and the dual
    ascent ``U_j += grad_j X - V_j``.
    """
    Y, G1, G2 = _check_inputs(Y, G1, G2, params, hr_dims)
    if x0 is None:
        x0 = ops.upsample_interp(Y, params.spec.ratio)
    bands, reports = [], []
    for k in range(Y.shape[0]):
        sl = slice(k, k + 1)
        x, rep = _admm_band(Y[sl], G1[sl], G2[sl], x0[sl], params, hr_dims)
        bands.append(x)
        reports.append(rep)
    return np.concatenate(bands), _merge(reports)
