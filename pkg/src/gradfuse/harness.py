"""Reduced-resolution (Wald) experiments and the end-to-end proposed fusion."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, gradnet, metrics, raster
from . import operators as ops
from . import solver as sv

log = logging.getLogger(__name__)

METHODS = ("naive", "glp", "proposed")
TABLE_COLUMNS = ("ERGAS", "SAM", "Q", "PSNR")


def center_crop_to_ratio(pan, ms, ratio: int):
    """Crop MS to the largest ratio-multiple and the PAN to match.

    Returns ``(pan, ms, crop)`` where ``crop`` records the MS window kept, or
    is ``None`` when nothing was cut.
    """
    pan = ops._as_cube(pan)
    ms = ops._as_cube(ms)
    _, h, w = ms.shape
    if pan.shape[1:] != (h * ratio, w * ratio):
        raise ValueError(f"PAN dims {pan.shape[1:]} must be ratio {ratio} times MS dims {(h, w)}")
    hc, wc = h - h % ratio, w - w % ratio
    if hc == 0 or wc == 0:
        raise ValueError(f"MS {h}x{w} is smaller than the ratio {ratio}")
    if (hc, wc) == (h, w):
        return pan, ms, None
    top, left = (h - hc) // 2, (w - wc) // 2
    ms_c = ms[:, top : top + hc, left : left + wc]
    pan_c = pan[:, top * ratio : (top + hc) * ratio, left * ratio : (left + wc) * ratio]
    crop = {"ms_from": [h, w], "ms_to": [hc, wc], "top": top, "left": left}
    return pan_c, ms_c, crop


def wald_degrade(pan, ms, spec: ops.DegradationSpec, seed: int | None = None):
    """Degrade both inputs by ``H`` so the original MS can serve as reference."""
    pan = ops._as_cube(pan)
    ms = ops._as_cube(ms)
    if seed is not None and spec.noise_sigma > 0:
        s_pan, s_ms = np.random.SeedSequence(seed).generate_state(2)
        return ops.apply_H(pan, spec, seed=int(s_pan)), ops.apply_H(ms, spec, seed=int(s_ms))
    return ops.apply_H(pan, spec), ops.apply_H(ms, spec)


def fuse_proposed(pan, ms, weights: gradnet.NetworkWeights, params: sv.FusionParams, solver: str = "admm", return_report: bool = False):
    """Upsample, predict the gradient prior, then minimize the fusion energy."""
    pan = ops._as_cube(pan)
    ms = ops._as_cube(ms)
    r = params.spec.ratio
    if pan.shape[0] != 1:
        raise ValueError("PAN must have one band")
    if pan.shape[1:] != (ms.shape[1] * r, ms.shape[2] * r):
        raise ValueError(f"PAN dims {pan.shape[1:]} must be ratio {r} times MS dims {ms.shape[1:]}")
    ms_up = ops.upsample_interp(ms, r)
    G1, G2 = gradnet.predict_prior(pan, ms_up, weights)
    solve = {"admm": sv.admm_fuse, "cg": sv.cg_solve}[solver]
    X, report = solve(ms, G1, G2, params, pan.shape[1:], x0=ms_up)
    X = np.clip(X, 0.0, 1.0)
    return (X, report) if return_report else X


def fuse(method: str, pan, ms, params: sv.FusionParams, weights=None, solver: str = "admm"):
    if method == "naive":
        return baselines.fuse_naive(ms, params.spec.ratio)
    if method == "glp":
        return baselines.fuse_glp_mtf(ms, pan, params.spec)
    if method == "proposed":
        if weights is None:
            raise ValueError("the proposed method needs network weights")
        return fuse_proposed(pan, ms, weights, params, solver)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


# -- experiment --------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    scenes: list[dict]  # each {"name", "pan", "ms"}; pan/ms are raster stems
    ratio: int = 4
    gnyq: float = 0.3
    lambda1: float = 0.5
    lambda2: float = 0.01
    rho: float | None = None
    solver: str = "admm"
    weights: str | None = None
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seed: int = 0
    noise_sigma: float = 0.0
    output: str = "experiment_out"

    def __post_init__(self):
        if not self.methods:
            raise ValueError("methods must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if "proposed" in self.methods and not self.weights:
            raise ValueError("method 'proposed' needs a weights path")
        if self.solver not in ("admm", "cg"):
            raise ValueError(f"solver must be 'admm' or 'cg', got {self.solver!r}")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        raw = json.loads(path.read_text())
        base = path.parent

        def resolve(p):
            return str(p if Path(p).is_absolute() else base / p)

        raw["scenes"] = [
            {"name": s.get("name", Path(s["ms"]).name), "pan": resolve(s["pan"]), "ms": resolve(s["ms"])}
            for s in raw["scenes"]
        ]
        if raw.get("weights"):
            raw["weights"] = resolve(raw["weights"])
        if "output" in raw:
            raw["output"] = resolve(raw["output"])
        cfg = cls(**raw)
        cfg.check_files()
        return cfg

    def check_files(self) -> None:
        missing = []
        for s in self.scenes:
            for key in ("pan", "ms"):
                missing += [str(p) for p in raster.stem_paths(s[key]) if not p.exists()]
        if "proposed" in self.methods:
            missing += [str(p) for p in gradnet.weight_paths(self.weights) if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing input files: {missing}")

    def fusion_params(self) -> sv.FusionParams:
        spec = ops.DegradationSpec.mtf(self.ratio, self.gnyq, self.noise_sigma)
        return sv.FusionParams(spec, lambda1=self.lambda1, lambda2=self.lambda2, rho=self.rho)


@dataclass
class ExperimentReport:
    config: dict
    methods: list[str]
    scenes: list[dict]
    mean: dict[str, dict]
    weights_sha256: str | None = None
    columns: tuple[str, ...] = TABLE_COLUMNS

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=False) + "\n"

    def table(self) -> str:
        """Mean-of-scenes rows in the order ERGAS, SAM, Q, PSNR."""
        n = sum(1 for s in self.scenes if not s["errors"])
        lines = [f"Mean over {n} scenes (ratio {self.config['ratio']})", "Method\\index\tERGAS(↓)\tSAM(↓)\tQ(↑)\tPSNR(↑)"]
        for m in self.methods:
            row = self.mean.get(m)
            if row is None:
                lines.append(f"{m}\t-\t-\t-\t-")
                continue
            lines.append(f"{m}\t{row['ergas']:.4f}\t{row['sam_degrees']:.4f}\t{row['q']:.4f}\t{row['psnr_db']:.4f}")
        return "\n".join(lines) + "\n"


def _scene_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentReport:
    params = config.fusion_params()
    spec = params.spec
    weights = gradnet.load_weights(config.weights) if "proposed" in config.methods else None
    out = Path(config.output)
    if write:
        (out / "fused").mkdir(parents=True, exist_ok=True)
    scene_rows, timings = [], {}
    per_method: dict[str, list[metrics.QualityReport]] = {m: [] for m in config.methods}
    for i, scene in enumerate(config.scenes):
        row = {"name": scene["name"], "seed": _scene_seed(config.seed, i), "crop": None, "results": {}, "errors": {}}
        scene_rows.append(row)
        try:
            pan, ms, crop = center_crop_to_ratio(raster.load(scene["pan"]), raster.load(scene["ms"]), config.ratio)
            row["crop"] = crop
            if crop:
                log.info("scene %s cropped to %s", scene["name"], crop["ms_to"])
            pan_low, ms_low = wald_degrade(pan, ms, spec, seed=row["seed"])
        except Exception as exc:  # noqa: BLE001 - recorded, experiment continues
            log.error("scene %s failed: %s", scene["name"], exc)
            row["errors"]["scene"] = f"{type(exc).__name__}: {exc}"
            continue
        for method in config.methods:
            t0 = time.perf_counter()
            try:
                fused = fuse(method, pan_low, ms_low, params, weights, config.solver)
                report = metrics.quality_report(fused, ms, config.ratio)
            except Exception as exc:  # noqa: BLE001
                log.error("scene %s method %s failed: %s", scene["name"], method, exc)
                row["errors"][method] = f"{type(exc).__name__}: {exc}"
                continue
            timings.setdefault(method, []).append(time.perf_counter() - t0)
            row["results"][method] = report.as_dict()
            per_method[method].append(report)
            if write:
                raster.save(raster.MultiBandImage(fused.astype(np.float32)), out / "fused" / f"{scene['name']}_{method}")
    mean = {m: metrics.mean_report(reps).as_dict() for m, reps in per_method.items() if reps}
    config_echo = asdict(config)
    config_echo["fusion_params"] = params.as_dict()
    report = ExperimentReport(
        config=config_echo,
        methods=list(config.methods),
        scenes=scene_rows,
        mean=mean,
        weights_sha256=gradnet.weights_checksum(weights) if weights is not None else None,
    )
    if write:
        (out / "report.json").write_text(report.to_json())
        (out / "table.txt").write_text(report.table())
        # wall-clock times live apart from the report so the report is reproducible
        runtime = {m: {"total_s": sum(v), "per_scene_s": v} for m, v in timings.items()}
        (out / "timings.json").write_text(json.dumps(runtime, indent=2) + "\n")
    return report


# -- training helpers ----------------------------------------------------------------


def training_pairs_from_scenes(scenes, spec: ops.DegradationSpec, config: gradnet.TrainConfig, patches_per_scene: int = 64):
    """Patch pairs from several ``(pan, ms)`` scenes with per-scene sub-seeds."""
    pairs = []
    for i, (pan, ms) in enumerate(scenes):
        pan, ms, _ = center_crop_to_ratio(pan, ms, spec.ratio)
        pairs += gradnet.make_training_pairs(pan, ms, spec, config, patches_per_scene, seed=_scene_seed(config.seed, i))
    return pairs
