"""Multiband image container and the BSQ file pair used for all I/O.

On disk an image is two files: ``<stem>.json`` holds the header and
``<stem>.bsq`` holds raw little-endian float32 samples, band-sequential,
row-major within each band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DTYPE_TAG = "f32"
LAYOUT_TAG = "bsq"
BYTE_ORDER_TAG = "little"
_DISK_DTYPE = np.dtype("<f4")


class RasterError(ValueError):
    """Raised for malformed headers, size mismatches and bad samples."""


@dataclass(frozen=True)
class MultiBandImage:
    """A ``(bands, height, width)`` grid of finite samples.

    The array is copied on construction and marked read-only, so instances
    can be shared freely. ``np.asarray(img)`` yields the samples, which lets
    every numerical routine accept either an image or a plain array.
    """

    data: np.ndarray
    band_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.array(self.data, copy=True)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise RasterError(f"expected a nonempty (bands, height, width) array, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise RasterError("image contains non-finite samples")
        if self.band_names is not None and len(self.band_names) != arr.shape[0]:
            raise RasterError("band_names length does not match band count")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _header_dict(image: MultiBandImage) -> dict:
    header = {
        "width": image.width,
        "height": image.height,
        "bands": image.bands,
        "dtype": DTYPE_TAG,
        "layout": LAYOUT_TAG,
        "byte_order": BYTE_ORDER_TAG,
    }
    if image.band_names is not None:
        header["band_names"] = list(image.band_names)
    return header


def _parse_header(text: str) -> dict:
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RasterError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise RasterError("malformed header: expected a JSON object")
    for key in ("width", "height", "bands"):
        value = header.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise RasterError(f"malformed header: {key!r} must be a positive integer, got {value!r}")
    for key, tag in (("dtype", DTYPE_TAG), ("layout", LAYOUT_TAG), ("byte_order", BYTE_ORDER_TAG)):
        if header.get(key) != tag:
            raise RasterError(f"malformed header: {key!r} must be {tag!r}, got {header.get(key)!r}")
    names = header.get("band_names")
    if names is not None and (not isinstance(names, list) or len(names) != header["bands"]):
        raise RasterError("malformed header: band_names must list one name per band")
    return header


def read_image(header_path, data_path) -> MultiBandImage:
    header = _parse_header(Path(header_path).read_text())
    raw = Path(data_path).read_bytes()
    b, h, w = header["bands"], header["height"], header["width"]
    expected = _DISK_DTYPE.itemsize * b * h * w
    if len(raw) != expected:
        raise RasterError(f"length mismatch: header implies {expected} bytes, {data_path} has {len(raw)}")
    samples = np.frombuffer(raw, dtype=_DISK_DTYPE).astype(np.float32).reshape(b, h, w)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        band, rem = divmod(int(bad[0]), h * w)
        raise RasterError(f"non-finite sample at band {band}, row {rem // w}, column {rem % w}")
    names = header.get("band_names")
    return MultiBandImage(samples, tuple(names) if names is not None else None)


def write_image(image, header_path, data_path) -> None:
    if not isinstance(image, MultiBandImage):
        image = MultiBandImage(image)
    Path(header_path).write_text(json.dumps(_header_dict(image), indent=2) + "\n")
    Path(data_path).write_bytes(np.ascontiguousarray(image.data, dtype=_DISK_DTYPE).tobytes())


def stem_paths(stem) -> tuple[Path, Path]:
    """Header and data paths for ``stem``; a trailing .json/.bsq is ignored."""
    stem = Path(stem)
    if stem.suffix in (".json", ".bsq"):
        stem = stem.with_suffix("")
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bsq")


def load(stem) -> MultiBandImage:
    return read_image(*stem_paths(stem))


def save(image, stem) -> None:
    header_path, data_path = stem_paths(stem)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    write_image(image, header_path, data_path)


def normalize(image, per_band: bool = True) -> MultiBandImage:
    """Min-max rescale into [0, 1]; a constant image (or band) maps to zeros."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    axes = (1, 2) if per_band else (0, 1, 2)
    lo = x.min(axis=axes, keepdims=True)
    span = x.max(axis=axes, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    names = image.band_names if isinstance(image, MultiBandImage) else None
    return MultiBandImage(np.clip(out, 0.0, 1.0), names)
