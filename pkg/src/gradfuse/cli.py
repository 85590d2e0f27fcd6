"""Command-line entry point: ``gradfuse <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradnet, harness, metrics, raster, synthetic
from . import operators as ops
from . import solver as sv

log = logging.getLogger("gradfuse")


def _add_degradation(p):
    p.add_argument("--ratio", type=int, default=4, help="PAN/MS resolution ratio (default 4)")
    p.add_argument("--gnyq", type=float, default=0.3, help="MTF gain at the LR Nyquist frequency (default 0.3)")


def _add_fusion(p):
    p.add_argument("--lambda1", type=float, default=0.5, help="weight of the gradient-prior term (default 0.5)")
    p.add_argument("--lambda2", type=float, default=0.01, help="weight of the Laplacian term (default 0.01)")
    p.add_argument("--rho", type=float, default=None, help="ADMM penalty (default 2*lambda1)")
    p.add_argument("--solver", choices=("admm", "cg"), default="admm", help="energy minimizer (default admm)")


def _write_json(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_fuse(args):
    if args.method == "proposed" and not args.weights:
        raise SystemExit("error: --method proposed requires --weights")
    pan, ms = raster.load(args.pan), raster.load(args.ms)
    spec = ops.DegradationSpec.mtf(args.ratio, args.gnyq)
    params = sv.FusionParams(spec, args.lambda1, args.lambda2, args.rho)
    report = None
    if args.method == "proposed":
        weights = gradnet.load_weights(args.weights)
        fused, report = harness.fuse_proposed(pan, ms, weights, params, args.solver, return_report=True)
    else:
        fused = harness.fuse(args.method, pan, ms, params)
    raster.save(raster.MultiBandImage(fused.astype(np.float32)), args.out)
    if args.report:
        _write_json(json.loads(report.to_json()) if report else {"method": args.method}, args.report)
    return 0


def cmd_train(args):
    if len(args.pan) != len(args.ms):
        raise SystemExit("error: give one --ms per --pan")
    spec = ops.DegradationSpec.mtf(args.ratio, args.gnyq)
    config = gradnet.TrainConfig(
        depth=args.depth,
        width=args.width,
        patch_size=args.patch_size,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seed=args.seed,
        validation_fraction=args.validation_fraction,
    )
    scenes = [(raster.load(p), raster.load(m)) for p, m in zip(args.pan, args.ms)]
    pairs = harness.training_pairs_from_scenes(scenes, spec, config, args.patches)
    weights, history = gradnet.train(pairs, config)
    gradnet.save_weights(weights, args.out)
    if args.report:
        _write_json({"train_loss": history.train_loss, "val_loss": history.val_loss, "patches": len(pairs)}, args.report)
    log.info("final training loss %.6g", history.train_loss[-1] if history.train_loss else float("nan"))
    return 0


def cmd_degrade(args):
    spec = ops.DegradationSpec.mtf(args.ratio, args.gnyq, args.noise_sigma)
    pan, ms, crop = harness.center_crop_to_ratio(raster.load(args.pan), raster.load(args.ms), args.ratio)
    pan_low, ms_low = harness.wald_degrade(pan, ms, spec, seed=args.seed)
    out = Path(args.out)
    raster.save(raster.MultiBandImage(pan_low.astype(np.float32)), out / "pan_low")
    raster.save(raster.MultiBandImage(ms_low.astype(np.float32)), out / "ms_low")
    raster.save(raster.MultiBandImage(ms.astype(np.float32)), out / "ms_ref")
    if args.report:
        _write_json({"crop": crop, "ratio": args.ratio, "gnyq": args.gnyq}, args.report)
    return 0


def cmd_metrics(args):
    rep = metrics.quality_report(raster.load(args.test), raster.load(args.ref), args.ratio)
    _write_json(rep.as_dict(), args.report)
    return 0


def cmd_kernel(args):
    k = ops.mtf_gaussian_kernel(args.ratio, args.gnyq)
    _write_json({"ratio": args.ratio, "gnyq": args.gnyq, "sigma": k.sigma, "size": k.size, "taps1d": k.taps1d.tolist()}, args.report)
    return 0


def cmd_experiment(args):
    config = harness.ExperimentConfig.from_json(args.config)
    if args.out:
        config.output = args.out
    report = harness.run_experiment(config)
    sys.stdout.write(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json())
    return 0


def cmd_synth(args):
    """Write seeded synthetic scenes plus an experiment config."""
    out = Path(args.out)
    entries = []
    for i in range(args.scenes):
        sc = synthetic.make_scene((args.size, args.size), args.bands, args.ratio, args.gnyq, seed=args.seed + i)
        name = f"scene{i:02d}"
        raster.save(raster.MultiBandImage(sc.pan.astype(np.float32)), out / f"{name}_pan")
        raster.save(raster.MultiBandImage(sc.ms.astype(np.float32)), out / f"{name}_ms")
        entries.append({"name": name, "pan": f"{name}_pan", "ms": f"{name}_ms"})
    cfg = {"scenes": entries, "ratio": args.ratio, "gnyq": args.gnyq, "methods": ["naive", "glp"], "seed": args.seed, "output": "results"}
    _write_json(cfg, out / "exp.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradfuse", description="Gradient-prior pansharpening toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse a PAN/MS pair")
    p.add_argument("--pan", required=True, help="PAN raster stem")
    p.add_argument("--ms", required=True, help="MS raster stem")
    p.add_argument("--method", choices=harness.METHODS, default="proposed", help="fusion method (default proposed)")
    p.add_argument("--weights", help="network weight stem (required for proposed)")
    p.add_argument("--out", required=True, help="output raster stem")
    p.add_argument("--report", help="write the solver report as JSON here")
    _add_degradation(p)
    _add_fusion(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", help="train the gradient network on reduced-resolution pairs")
    p.add_argument("--pan", action="append", required=True, help="PAN raster stem (repeatable)")
    p.add_argument("--ms", action="append", required=True, help="MS raster stem (repeatable, paired with --pan)")
    p.add_argument("--out", required=True, help="output weight stem")
    p.add_argument("--depth", type=int, default=17, help="number of conv blocks (default 17)")
    p.add_argument("--width", type=int, default=64, help="feature maps per hidden block (default 64)")
    p.add_argument("--patch-size", type=int, default=40, help="patch side in pixels (default 40)")
    p.add_argument("--batch-size", type=int, default=128, help="mini-batch size (default 128)")
    p.add_argument("--patches", type=int, default=64, help="random patches per scene (default 64)")
    p.add_argument("--epochs", type=int, default=50, help="training epochs (default 50)")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    p.add_argument("--validation-fraction", type=float, default=0.0, help="held-out patch fraction (default 0)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--report", help="write the loss trace as JSON here")
    _add_degradation(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("degrade", help="reduced-resolution copies of a PAN/MS pair")
    p.add_argument("--pan", required=True, help="PAN raster stem")
    p.add_argument("--ms", required=True, help="MS raster stem")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="additive noise std (default 0)")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    p.add_argument("--report", help="write crop details as JSON here")
    _add_degradation(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("metrics", help="ERGAS, SAM, Q and PSNR of a test image against a reference")
    p.add_argument("--ref", required=True, help="reference raster stem")
    p.add_argument("--test", required=True, help="test raster stem")
    p.add_argument("--ratio", type=int, default=4, help="resolution ratio used by ERGAS (default 4)")
    p.add_argument("--report", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("kernel", help="print the MTF-matched Gaussian kernel")
    _add_degradation(p)
    p.add_argument("--report", help="write the kernel here instead of stdout")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("experiment", help="run a reduced-resolution experiment from a JSON config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--report", help="also copy the report JSON here")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="write seeded synthetic scenes and an experiment config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=4, help="number of scenes (default 4)")
    p.add_argument("--size", type=int, default=64, help="MS side in pixels (default 64)")
    p.add_argument("--bands", type=int, default=4, help="MS bands (default 4)")
    p.add_argument("--seed", type=int, default=0, help="first scene seed (default 0)")
    _add_degradation(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
