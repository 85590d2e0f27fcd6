"""Residual gradient CNN: input cubes, forward/backward passes, training.

The network maps a stacked gradient cube ``In`` (PAN and upsampled-MS
gradients) to the residual ``Tr - In``. Everything is plain float64 numpy;
convolutions are 3x3, stride 1, with replicate padding so the output has
the input's spatial size.

Batches are ``(N, C, H, W)`` arrays; a single cube may be passed as
``(C, H, W)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import operators as ops

log = logging.getLogger(__name__)

ROLES = ("input", "target", "residual", "prior")


class TrainingDiverged(RuntimeError):
    pass


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class GradientCube:
    """Stacked gradient planes, ``(channels, height, width)``.

    Input and target cubes carry ``2 * (s + 1)`` channels ordered PAN-h,
    PAN-v, then h/v per MS band; a prior carries ``2 * s``.
    """

    data: np.ndarray
    role: str = "input"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"gradient cube must be (channels, height, width), got {arr.shape}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if arr.shape[0] % 2:
            raise ValueError(f"channel count must be even, got {arr.shape[0]}")
        if self.role in ("input", "target") and arr.shape[0] < 4:
            raise ValueError("input/target cubes need PAN channels plus at least one MS band")
        if not np.all(np.isfinite(arr)):
            raise ValueError("gradient cube contains non-finite samples")
        object.__setattr__(self, "data", arr)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def ms_bands(self) -> int:
        return self.channels // 2 if self.role == "prior" else self.channels // 2 - 1


@dataclass
class ConvBlock:
    kernel: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)
    relu: bool

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]


@dataclass
class NetworkWeights:
    blocks: list[ConvBlock]
    seed: int | None = None

    def __post_init__(self):
        if len(self.blocks) < 2:
            raise ValueError("network needs at least two blocks")
        for i, b in enumerate(self.blocks):
            if b.kernel.ndim != 4 or b.kernel.shape[2:] != (3, 3):
                raise ValueError(f"block {i}: kernels must be (out, in, 3, 3), got {b.kernel.shape}")
            if b.bias.shape != (b.out_channels,):
                raise ValueError(f"block {i}: bias shape {b.bias.shape} does not match {b.out_channels} outputs")
            if i and b.in_channels != self.blocks[i - 1].out_channels:
                raise ValueError(f"block {i}: expects {b.in_channels} inputs, previous block gives {self.blocks[i - 1].out_channels}")
        if self.blocks[-1].out_channels != self.input_channels:
            raise ValueError("last block must map back to the input channel count")
        if self.blocks[-1].relu or not all(b.relu for b in self.blocks[:-1]):
            raise ValueError("ReLU must follow every block except the last")

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.blocks[0].out_channels

    @property
    def input_channels(self) -> int:
        return self.blocks[0].in_channels

    @property
    def n_params(self) -> int:
        return sum(b.kernel.size + b.bias.size for b in self.blocks)

    def copy(self) -> "NetworkWeights":
        return NetworkWeights([ConvBlock(b.kernel.copy(), b.bias.copy(), b.relu) for b in self.blocks], self.seed)

    def params(self) -> list[np.ndarray]:
        out = []
        for b in self.blocks:
            out += [b.kernel, b.bias]
        return out


def init_weights(input_channels: int, depth: int = 17, width: int = 64, seed: int = 0) -> NetworkWeights:
    """He-normal kernels (fan-in ``9 * in``), zero biases."""
    if depth < 2:
        raise ValueError("depth must be >= 2")
    rng = np.random.default_rng(seed)
    sizes = [input_channels] + [width] * (depth - 1) + [input_channels]
    blocks = []
    for i, (cin, cout) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt(2.0 / (9 * cin))
        kernel = rng.standard_normal((cout, cin, 3, 3)) * std
        blocks.append(ConvBlock(kernel, np.zeros(cout), relu=i < depth - 1))
    return NetworkWeights(blocks, seed)


def zero_weights(input_channels: int, depth: int = 17, width: int = 64) -> NetworkWeights:
    w = init_weights(input_channels, depth, width)
    for b in w.blocks:
        b.kernel[...] = 0.0
    w.seed = None
    return w


# -- input cubes -------------------------------------------------------------------


def build_input_cube(pan, ms_upsampled) -> GradientCube:
    pan = ops._as_cube(pan)
    ms = ops._as_cube(ms_upsampled)
    if pan.shape[0] != 1:
        raise ValueError(f"PAN must have exactly one band, got {pan.shape[0]}")
    if pan.shape[1:] != ms.shape[1:]:
        raise ValueError(f"PAN dims {pan.shape[1:]} differ from upsampled MS dims {ms.shape[1:]}")
    return GradientCube(_interleaved_gradients(np.concatenate([pan, ms])), "input")


def _interleaved_gradients(stack: np.ndarray) -> np.ndarray:
    gh = ops.gradient_forward(stack, ops.HORIZONTAL)
    gv = ops.gradient_forward(stack, ops.VERTICAL)
    out = np.empty((2 * stack.shape[0],) + stack.shape[1:])
    out[0::2] = gh
    out[1::2] = gv
    return out


# -- forward / backward --------------------------------------------------------------


def _batch(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) or (C, H, W), got shape {arr.shape}")
    return arr


# Internally activations are laid out (C, N, H, W) so that each convolution
# is a single (out, 9*in) @ (9*in, N*H*W) product.


def _im2col(x: np.ndarray) -> np.ndarray:
    """``(C, N, H, W)`` -> ``(C*9, N*H*W)`` over replicate-padded 3x3 windows."""
    c, n, h, w = x.shape
    p = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    cols = np.empty((c, 3, 3, n, h, w))
    for ky in range(3):
        for kx in range(3):
            cols[:, ky, kx] = p[:, :, ky : ky + h, kx : kx + w]
    return cols.reshape(c * 9, n * h * w)


def _col2im(dcols: np.ndarray, shape) -> np.ndarray:
    """Adjoint of :func:`_im2col`, including the replicate-padding fold."""
    c, n, h, w = shape
    dcols = dcols.reshape(c, 3, 3, n, h, w)
    dp = np.zeros((c, n, h + 2, w + 2))
    for ky in range(3):
        for kx in range(3):
            dp[:, :, ky : ky + h, kx : kx + w] += dcols[:, ky, kx]
    # fold the halo back onto the border, rows then columns
    dp[:, :, 1, :] += dp[:, :, 0, :]
    dp[:, :, -2, :] += dp[:, :, -1, :]
    dp = dp[:, :, 1:-1, :]
    dp[:, :, :, 1] += dp[:, :, :, 0]
    dp[:, :, :, -2] += dp[:, :, :, -1]
    return dp[:, :, :, 1:-1]


def _forward_cached(x: np.ndarray, weights: NetworkWeights):
    """Run the net on ``(C, N, H, W)``; return per-block im2col buffers and outputs."""
    _, n, h, w = x.shape
    cols, outs = [], []
    a = x
    for blk in weights.blocks:
        col = _im2col(a)
        z = blk.kernel.reshape(blk.out_channels, -1) @ col
        z += blk.bias[:, None]
        if blk.relu:
            np.maximum(z, 0.0, out=z)
        a = z.reshape(blk.out_channels, n, h, w)
        cols.append(col)
        outs.append(a)
    return cols, outs


_TILE_BUDGET = 1 << 28  # bytes of im2col buffer before strip tiling kicks in


def _forward_lean(x: np.ndarray, weights: NetworkWeights) -> np.ndarray:
    """Forward pass on ``(C, N, H, W)``, tiled in row strips for large inputs.

    Each strip carries a halo of ``depth`` rows, the receptive-field radius,
    so kept rows never see the artificial strip border.
    """
    c, n, h, w = x.shape
    widest = max(max(b.in_channels for b in weights.blocks), 1)
    per_row = 9 * widest * n * w * 8
    rows = max(1, _TILE_BUDGET // per_row - 2 * weights.depth)
    if rows >= h:
        return _forward_cached_lean(x, weights)
    halo = weights.depth
    out = np.empty_like(x)
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        lo, hi = max(0, r0 - halo), min(h, r1 + halo)
        strip = _forward_cached_lean(x[:, :, lo:hi], weights)
        out[:, :, r0:r1] = strip[:, :, r0 - lo : r1 - lo]
    return out


def _forward_cached_lean(x: np.ndarray, weights: NetworkWeights) -> np.ndarray:
    _, n, h, w = x.shape
    a = x
    for blk in weights.blocks:
        z = blk.kernel.reshape(blk.out_channels, -1) @ _im2col(a)
        z += blk.bias[:, None]
        if blk.relu:
            np.maximum(z, 0.0, out=z)
        a = z.reshape(blk.out_channels, n, h, w)
    return a


def network_forward(cube, weights: NetworkWeights) -> np.ndarray:
    """Residual prediction with the same shape as ``cube``."""
    squeeze = np.asarray(cube).ndim == 3
    x = _batch(cube)
    if x.shape[1] != weights.input_channels:
        raise ValueError(f"cube has {x.shape[1]} channels, network expects {weights.input_channels}")
    out = _forward_lean(x.transpose(1, 0, 2, 3), weights).transpose(1, 0, 2, 3)
    return out[0] if squeeze else np.ascontiguousarray(out)


def loss_eq2(predicted_residual, inputs, targets) -> float:
    """Mean over patches of the squared Frobenius norm of ``f(In) - (Tr - In)``."""
    p, i, t = _batch(predicted_residual), _batch(inputs), _batch(targets)
    if not p.shape == i.shape == t.shape:
        raise ValueError(f"shape mismatch: {p.shape}, {i.shape}, {t.shape}")
    r = p - (t - i)
    return float(np.sum(r * r) / p.shape[0])


def network_backward(inputs, targets, weights: NetworkWeights):
    """Loss and its gradient w.r.t. every kernel and bias.

    Returns ``(loss, grads)`` where ``grads`` is a list of
    ``(dkernel, dbias)`` pairs aligned with ``weights.blocks``.
    """
    x, t = _batch(inputs), _batch(targets)
    if x.shape != t.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {t.shape}")
    if x.shape[1] != weights.input_channels:
        raise ValueError(f"cube has {x.shape[1]} channels, network expects {weights.input_channels}")
    n = x.shape[0]
    cols, outs = _forward_cached(x.transpose(1, 0, 2, 3), weights)
    r = outs[-1] - (t - x).transpose(1, 0, 2, 3)
    loss = float(np.sum(r * r) / n)
    delta = (2.0 / n) * r
    grads = [None] * weights.depth
    for k in range(weights.depth - 1, -1, -1):
        blk = weights.blocks[k]
        if blk.relu:
            # subgradient 0 at 0: outputs are exactly 0 wherever z <= 0
            delta = delta * (outs[k] > 0)
        d = delta.reshape(blk.out_channels, -1)
        dk = (d @ cols[k].T).reshape(blk.kernel.shape)
        db = d.sum(axis=1)
        grads[k] = (dk, db)
        if k:
            kmat = blk.kernel.reshape(blk.out_channels, -1)
            delta = _col2im(kmat.T @ d, outs[k - 1].shape)
    return loss, grads


# -- training ------------------------------------------------------------------------


@dataclass
class TrainConfig:
    depth: int = 17
    width: int = 64
    patch_size: int = 40
    batch_size: int = 128
    epochs: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    validation_fraction: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.patch_size < 5:
            raise ValueError("patch_size must be >= 5")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise ValueError("no training pairs given")
    xs = np.stack([np.asarray(a, dtype=np.float64) for a, _ in pairs])
    ts = np.stack([np.asarray(b, dtype=np.float64) for _, b in pairs])
    if xs.shape != ts.shape:
        raise ValueError("input and target cubes differ in shape")
    return xs, ts


def train(patch_pairs, config: TrainConfig, init: NetworkWeights | None = None):
    """Fit the residual mapping with seeded mini-batch Adam.

    Returns ``(weights, history)``. ``history.train_loss[e]`` is the mean of
    the mini-batch losses seen during epoch ``e``.
    """
    xs, ts = _stack_pairs(patch_pairs)
    rng = np.random.default_rng(config.seed)
    n = xs.shape[0]
    order = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    val_idx, train_idx = order[:n_val], order[n_val:]

    weights = init.copy() if init is not None else init_weights(xs.shape[1], config.depth, config.width, config.seed)
    if weights.input_channels != xs.shape[1]:
        raise ValueError(f"network expects {weights.input_channels} channels, data has {xs.shape[1]}")
    opt = Adam(weights.params(), config.learning_rate, config.beta1, config.beta2, config.eps)
    history = TrainHistory()
    for epoch in range(config.epochs):
        perm = train_idx[rng.permutation(train_idx.size)]
        losses = []
        for start in range(0, perm.size, config.batch_size):
            idx = np.sort(perm[start : start + config.batch_size])
            loss, grads = network_backward(xs[idx], ts[idx], weights)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            opt.step([g for pair in grads for g in pair])
            losses.append(loss)
        history.train_loss.append(float(np.mean(losses)))
        if n_val:
            val = loss_eq2(network_forward(xs[val_idx], weights), xs[val_idx], ts[val_idx])
            history.val_loss.append(val)
        log.debug("epoch %d loss %.6g", epoch, history.train_loss[-1])
    return weights, history


# -- prior prediction ------------------------------------------------------------------


def predict_prior(pan, ms_upsampled, weights: NetworkWeights) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical gradient priors, each ``(s, H, W)``."""
    cube = build_input_cube(pan, ms_upsampled).data
    full = cube + network_forward(cube, weights)
    ms = full[2:]
    return ms[0::2].copy(), ms[1::2].copy()


def make_training_pairs(pan_hr, ms, spec: ops.DegradationSpec, config: TrainConfig, n_patches: int = 64, seed: int | None = None):
    """Reduced-resolution (input, target) cube pairs cut into random patches.

    Inputs come from the degraded PAN and the upsampled degraded MS; the MS
    target channels are the gradients of the original MS, and the PAN target
    channels copy the input so the PAN residual is zero.
    """
    pan_hr = ops._as_cube(pan_hr)
    ms = ops._as_cube(ms)
    r = spec.ratio
    if pan_hr.shape[1:] != (ms.shape[1] * r, ms.shape[2] * r):
        raise ValueError(f"PAN dims {pan_hr.shape[1:]} must be ratio {r} times MS dims {ms.shape[1:]}")
    pan_low = ops.apply_H(pan_hr, spec)
    ms_low = ops.apply_H(ms, spec)
    inp = build_input_cube(pan_low, ops.upsample_interp(ms_low, r)).data
    tgt = inp.copy()
    tgt[2:] = _interleaved_gradients(ms)
    h, w = ms.shape[1:]
    p = config.patch_size
    if h < p or w < p:
        raise ValueError(f"image {h}x{w} is smaller than patch size {p}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    rows = rng.integers(0, h - p + 1, size=n_patches)
    cols = rng.integers(0, w - p + 1, size=n_patches)
    return [
        (GradientCube(inp[:, i : i + p, j : j + p], "input"), GradientCube(tgt[:, i : i + p, j : j + p], "target"))
        for i, j in zip(rows, cols)
    ]


# -- persistence -----------------------------------------------------------------------


def weight_paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    name = stem.name
    for suffix in (".gnet.json", ".gnet.bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return stem.with_name(name + ".gnet.json"), stem.with_name(name + ".gnet.bin")


def _blob(weights: NetworkWeights) -> bytes:
    parts = []
    for b in weights.blocks:
        parts.append(np.ascontiguousarray(b.kernel, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b.bias, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(weights: NetworkWeights, stem) -> None:
    """Write the manifest and float32 blob; values are rounded to float32."""
    manifest_path, blob_path = weight_paths(stem)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob = _blob(weights)
    manifest = {
        "depth": weights.depth,
        "width": weights.width,
        "input_channels": weights.input_channels,
        "seed": weights.seed,
        "dtype": "f32",
        "byte_order": "little",
        "kernel_layout": "out,in,ky,kx",
        "blocks": [{"in": b.in_channels, "out": b.out_channels, "relu": b.relu} for b in weights.blocks],
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    blob_path.write_bytes(blob)


def load_weights(stem) -> NetworkWeights:
    manifest_path, blob_path = weight_paths(stem)
    try:
        manifest = json.loads(manifest_path.read_text())
        specs = manifest["blocks"]
        if len(specs) != manifest["depth"]:
            raise WeightFileError(f"manifest lists {len(specs)} blocks but depth {manifest['depth']}")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise WeightFileError(f"malformed weight manifest {manifest_path}: {exc}") from exc
    blob = blob_path.read_bytes()
    expected = 4 * sum(s["out"] * s["in"] * 9 + s["out"] for s in specs)
    if len(blob) != expected:
        raise WeightFileError(f"weight blob has {len(blob)} bytes, manifest implies {expected}")
    flat = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    blocks, pos = [], 0
    for s in specs:
        nk = s["out"] * s["in"] * 9
        kernel = flat[pos : pos + nk].reshape(s["out"], s["in"], 3, 3).copy()
        pos += nk
        bias = flat[pos : pos + s["out"]].copy()
        pos += s["out"]
        blocks.append(ConvBlock(kernel, bias, bool(s["relu"])))
    try:
        return NetworkWeights(blocks, manifest.get("seed"))
    except ValueError as exc:
        raise WeightFileError(str(exc)) from exc


def weights_checksum(weights: NetworkWeights) -> str:
    return hashlib.sha256(_blob(weights)).hexdigest()
