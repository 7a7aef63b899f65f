"""Single entry point: deterministic, scriptable subcommands.

Exit codes: 0 success, 1 usage/config error, 2 data error (missing or
malformed files), 3 numerical failure (NaN or divergence).  All randomness
flows from explicit seeds; identical invocations produce byte-identical
artifacts.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, describe_keys
from .errors import DataError, NumericalError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems exit 1, not argparse's default 2 (reserved for data)
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(payload, out_path=None):
    text = json.dumps(payload, sort_keys=True, indent=2)
    if out_path:
        Path(out_path).write_text(text)
    else:
        print(text)


def _sensor_from_config(cfg: RunConfig):
    from .sensor import SensorParams
    return SensorParams(
        photon_scale=float(cfg["sensor.k"]),
        quantum_efficiency=float(cfg["sensor.qe"]),
        read_noise_std=float(cfg["sensor.read_std"]),
        adc_gain=float(cfg["sensor.adu"]),
        adc_baseline=float(cfg["sensor.baseline"]),
        bit_depth=int(cfg["sensor.bits"]),
        poisson_crossover=float(cfg["sensor.poisson_crossover"]),
    )


def _loss_from_config(cfg: RunConfig):
    from .enhance import LossConfig
    return LossConfig(w1=float(cfg["loss.w1"]), w2=float(cfg["loss.w2"]),
                      w3=float(cfg["loss.w3"]), w4=float(cfg["loss.w4"]),
                      w5=float(cfg["loss.w5"]),
                      feature_seed=int(cfg["loss.feature_seed"]))


def cmd_datagen(args):
    from .datasetgen import build_dataset, make_toy_scenes, make_toy_psf
    from .llt1 import write_llt1
    from .optics import Psf

    cfg = RunConfig(args.config, args.set or [])
    src = Path(args.src)
    if args.toy_scenes:
        src.mkdir(parents=True, exist_ok=True)
        scenes = make_toy_scenes(args.toy_scenes, size=args.toy_size,
                                 seed=int(cfg["dataset.seed"]))
        for i, scene in enumerate(scenes):
            write_llt1(src / f"scene{i:04d}.llt1", scene)
    if args.psf:
        psf = Psf.load(args.psf)
        psf_path = args.psf
    else:
        psf = make_toy_psf()
        psf_path = str(Path(args.out) / "psf.llt1")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_llt1(psf_path, psf.data)
    train_r, test_r = (int(p) for p in str(cfg["dataset.split"]).split("/"))
    manifest = build_dataset(
        src, args.out, psf, _sensor_from_config(cfg),
        exposure=args.exposure if args.exposure is not None
        else float(cfg["dataset.exposure"]),
        seed=args.seed if args.seed is not None else int(cfg["dataset.seed"]),
        split=(train_r, test_r),
        add_noise=not args.no_noise and bool(cfg["dataset.noise"]),
        psf_path=psf_path)
    _emit({"items": len(manifest.items),
           "train": sum(1 for i in manifest.items if i["split"] == "train"),
           "test": sum(1 for i in manifest.items if i["split"] == "test"),
           "manifest": str(Path(args.out) / "manifest.json")}, args.json_out)
    return 0


def cmd_reconstruct(args):
    from .imageio import load_image, save_image
    from .llt1 import write_llt1
    from .optics import Psf
    from .recon1 import AdmmConfig, WienerConfig, admm_reconstruct, wiener_deconv

    psf = Psf.load(args.psf)
    measurement = load_image(args.infile)
    if args.method == "wiener":
        result = wiener_deconv(measurement, psf, WienerConfig(lam=args.lam))
        residuals = None
    else:
        cfg = AdmmConfig(iterations=args.iters, rho=args.rho,
                         prior=args.prior, tv_weight=args.tv_weight)
        out = admm_reconstruct(measurement, psf, cfg)
        result, residuals = out.image, out.residuals
    if not np.all(np.isfinite(result)):
        raise NumericalError("reconstruction produced non-finite values")
    out_path = Path(args.out)
    if out_path.suffix.lower() == ".llt1":
        write_llt1(out_path, result)
    else:
        save_image(out_path, np.clip(result, 0.0, 1.0))
    payload = {"method": args.method, "out": str(out_path)}
    if residuals is not None:
        payload["residuals"] = residuals
    _emit(payload, args.json_out)
    return 0


def cmd_train(args):
    from .datasetgen import DatasetManifest
    from .optics import Psf
    from .pipeline import ToyTrainSpec, train_stage2

    cfg = RunConfig(args.config, args.set or [])
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise DataError(f"missing manifest {manifest_path}")
    manifest = DatasetManifest.from_json(manifest_path.read_text())
    psf = Psf.load(args.psf if args.psf else manifest.psf_path)
    spec = ToyTrainSpec(
        schedule_T=int(cfg["diffusion.T"]),
        beta_start=float(cfg["diffusion.beta_start"]),
        beta_end=float(cfg["diffusion.beta_end"]),
        levels=int(cfg["stage2.levels"]),
        hf_level=cfg["stage2.hf_level"],
        implicit_steps=int(cfg["diffusion.steps"]),
        wiener_lambda=float(cfg["stage1.wiener_lambda"]),
        hidden=int(cfg["net.hidden"]),
        attn_dim=int(cfg["net.attn_dim"]),
        hf_features=int(cfg["net.hf_features"]),
        epochs=int(cfg["train.epochs"]),
        batch_size=int(cfg["train.batch"]),
        lr=float(cfg["train.lr"]),
        lr_decay=float(cfg["train.lr_decay"]),
        lr_decay_every=int(cfg["train.lr_decay_every"]),
        ema_rate=float(cfg["train.ema"]),
        recon_every=int(cfg["train.recon_every"]),
        rollout_steps=int(cfg["train.rollout_steps"]),
        hf_epochs=int(cfg["train.hf_epochs"]),
        hf_lr=float(cfg["train.hf_lr"]),
        seed=int(cfg["train.seed"]),
        loss=_loss_from_config(cfg))
    meta = train_stage2(manifest, psf, spec, args.out)
    _emit({"checkpoint": str(args.out), "meta": meta}, args.json_out)
    return 0


def cmd_enhance(args):
    from .imageio import load_image, save_image
    from .metrics import psnr, ssim
    from .optics import Psf
    from .pipeline import enhance_measurement, load_measurement, load_stage2
    from .enhance import Stage2Config, stage2 as run_stage2

    runtime = load_stage2(args.ckpt)
    if args.psf:
        # raw capture in: run gain-corrected stage 1 first
        cfg = RunConfig(args.config, args.set or [])
        psf = Psf.load(args.psf)
        measurement = load_measurement(args.infile)
        stage1_img, s2 = enhance_measurement(measurement, psf,
                                             _sensor_from_config(cfg), runtime,
                                             seed=args.seed)
    else:
        stage1_img = np.clip(load_image(args.infile), 0.0, 1.0)
        cfg2 = Stage2Config(levels=runtime.cfg.levels,
                            implicit_steps=runtime.cfg.implicit_steps,
                            hf_level=runtime.cfg.hf_level, seed=args.seed)
        s2 = np.clip(run_stage2(stage1_img, runtime.predictor, runtime.hf_net,
                                runtime.schedule, cfg2), 0.0, 1.0)
    save_image(args.out, s2)
    payload = {"out": str(args.out)}
    if args.truth:
        truth = load_image(args.truth)
        payload["stage1"] = {"psnr": psnr(stage1_img, truth),
                             "ssim": ssim(stage1_img, truth)}
        payload["stage2"] = {"psnr": psnr(s2, truth), "ssim": ssim(s2, truth)}
        Path(str(args.out) + ".metrics.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2))
    _emit(payload, args.json_out)
    return 0


def cmd_eval(args):
    from .datasetgen import DatasetManifest
    from .metrics import evaluate_pairs

    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise DataError(f"missing manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    report = evaluate_pairs(manifest, args.pred)
    _emit(report.to_dict(), args.out)
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_gradient_checks

    results = run_gradient_checks(threshold=args.threshold)
    payload = {
        "threshold": args.threshold,
        "checks": [{"name": r.name, "rel_err": r.rel_err, "passed": r.passed}
                   for r in results],
        "all_passed": all(r.passed for r in results),
    }
    _emit(payload, args.json_out)
    return 0 if payload["all_passed"] else 3


def cmd_schedule_dump(args):
    from .diffusion import make_schedule

    sched = make_schedule(args.T, args.beta_start, args.beta_end)
    rows = [{"t": t,
             "beta": sched.beta[t],
             "alpha": sched.alpha[t],
             "alpha_bar": sched.alpha_bar[t],
             "posterior_var": sched.posterior_var[t]}
            for t in range(1, args.T + 1)]
    _emit(rows, args.json_out)
    return 0


def cmd_sweep_exposure(args):
    from .datasetgen import make_toy_psf, make_toy_scenes
    from .optics import Psf
    from .pipeline import load_stage2, sweep_exposure

    factors = [float(f) for f in args.factors.split(",")]
    if any(not 0 < f <= 1 for f in factors):
        raise ValueError(f"exposure factors must be in (0, 1]: {factors}")
    cfg = RunConfig(args.config, args.set or [])
    runtime = load_stage2(args.ckpt)
    psf = Psf.load(args.psf) if args.psf else make_toy_psf()
    scenes = make_toy_scenes(args.scenes, size=args.size, seed=args.scene_seed)
    ids = [f"sweep{i:03d}" for i in range(len(scenes))]
    reports = sweep_exposure(scenes, ids, psf, _sensor_from_config(cfg),
                             runtime, factors, base_seed=args.seed)
    payload = {
        "factors": factors,
        "reports": {str(f): {"stage1": reports[f]["stage1"].to_dict(),
                             "stage2": reports[f]["stage2"].to_dict()}
                    for f in factors},
        "mean_psnr_stage2": {str(f): reports[f]["stage2"].mean_psnr
                             for f in factors},
    }
    _emit(payload, args.json_out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dimlens",
                     description="Low-light lensless imaging toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable")

    p = sub.add_parser("datagen", help="synthesize a paired dataset",
                       epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--src", required=True, help="scene directory (.png/.llt1)")
    p.add_argument("--psf", help="PSF file; omitted -> built-in toy PSF")
    p.add_argument("--exposure", type=float, help="exposure time (s)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--no-noise", action="store_true",
                   help="skip noise injection (expectation chain)")
    p.add_argument("--toy-scenes", type=int, default=0, metavar="N",
                   help="first generate N toy scenes into --src")
    p.add_argument("--toy-size", type=int, default=16)
    p.add_argument("--json-out", help="write the JSON summary here")
    add_config(p)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("reconstruct", help="stage-1 inversion of a measurement")
    p.add_argument("--method", choices=("wiener", "admm"), required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=50000.0,
                   help="Wiener regularizer")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--prior", choices=("nonneg", "tv"), default="nonneg")
    p.add_argument("--tv-weight", type=float, default=0.01)
    p.add_argument("--psf", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="fit the stage-2 networks",
                       epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--manifest", required=True)
    p.add_argument("--psf", help="defaults to the manifest PSF")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--json-out")
    add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="stage-2 refinement of a stage-1 image",
                       epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--in", dest="infile", required=True,
                   help="stage-1 image (.llt1/.png), or raw capture with --psf")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--psf", help="treat --in as a raw capture and run stage 1")
    p.add_argument("--truth", help="ground truth for the metrics sidecar")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json-out")
    add_config(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score reconstructions against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="directory of predictions")
    p.add_argument("--out", help="report path (stdout otherwise)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--all", action="store_true", help="run every check (default)")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("schedule-dump", help="emit the diffusion schedule")
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("sweep-exposure",
                       help="toy-set robustness sweep over exposure factors",
                       epilog=describe_keys(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--factors", default="0.3,0.5,0.7")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--psf", help="defaults to the built-in toy PSF")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--scene-seed", type=int, default=900)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--json-out")
    add_config(p)
    p.set_defaults(func=cmd_sweep_exposure)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 1
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
