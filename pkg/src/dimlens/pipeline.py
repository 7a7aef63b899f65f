"""End-to-end orchestration: stage-1 inversion, stage-2 training/inference,
and the exposure-robustness sweep.

Stage 1 converts a quantized capture to a gain-corrected measurement
(baseline subtracted, ADC/QE/photon scales divided out), Wiener-deconvolves
it, and clips to [0, 1].  Stage 2 training derives, per training item, a
conditioning/target pair in the normalized level-2 LL latent plus an HF
subband stack pair, fits the diffusion predictor (with the bidirectional
rollout penalty) and the HF net, and stores both in one checkpoint.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import enhance, wavelet
from .checkpoint import load_checkpoint, save_checkpoint
from .datasetgen import DatasetManifest, sensor_from_dict, synthesize_pair
from .diffusion import (DiffusionSchedule, ToyPredictor, TrainConfig,
                        make_schedule, train_epsilon)
from .enhance import (NOMINAL_LEVEL, HfNet, LossConfig, Stage2Config,
                      _chw, brightness_of, ll_gain, make_condition, stage2,
                      train_hf)
from .errors import DataError
from .imageio import load_image, load_png_raw
from .metrics import EvalReport, evaluate_arrays
from .optics import Psf
from .recon1 import WienerConfig, wiener_deconv
from .rng import Rng
from .sensor import SensorParams


ADAPTIVE_LAMBDA_REF = NOMINAL_LEVEL


def stage1_reconstruct(measurement: np.ndarray, psf: Psf,
                       params: SensorParams, lam: float,
                       adaptive: bool = True) -> np.ndarray:
    """Gain-corrected Wiener inversion of a quantized capture, in [0, 1].

    With `adaptive`, the regularizer scales with the inverse square of the
    estimated signal level (lambda tracks the noise-to-signal power ratio),
    i.e. darker captures get a smoother inverse.
    """
    maxd = params.max_digital
    b = np.asarray(measurement, dtype=np.float64) / maxd
    chain_gain = params.adc_gain * params.quantum_efficiency \
        * params.photon_scale / maxd
    b = (b - params.adc_baseline / maxd) / chain_gain
    if adaptive:
        level = float(np.clip(b.mean(), 0.05, 1.0))
        lam = lam * (ADAPTIVE_LAMBDA_REF / level) ** 2
    x = wiener_deconv(b, psf, WienerConfig(lam=lam))
    return np.clip(x, 0.0, 1.0)


@dataclass
class ToyTrainSpec:
    """Everything the toy stage-2 experiment needs, in one record."""

    schedule_T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    levels: int = 2
    hf_level: object = 2       # 1, 2, or "both"
    implicit_steps: int = 10
    wiener_lambda: float = 3e-3
    hidden: int = 24
    attn_dim: int = 32
    hf_features: int = 8
    epochs: int = 300
    batch_size: int = 16
    lr: float = 3e-3
    lr_decay: float = 0.8
    lr_decay_every: int = 75
    ema_rate: float = 0.99
    recon_every: int = 10
    rollout_steps: int = 5
    hf_epochs: int = 40
    hf_lr: float = 2e-3
    dark_oversample: int = 1   # training-weight multiplier for exposures < 0.4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)


def _latent_pair(stage1_img: np.ndarray, scene: np.ndarray, levels: int):
    """(cond, x0): conditioning stack and clean [-1, 1] LL latent target."""
    gain = ll_gain(levels)
    target = wavelet.dwt2_multi(scene, levels)[-1].ll / gain * 2.0 - 1.0
    return make_condition(stage1_img, levels), _chw(target)


def _hf_stack_pairs(stage1_img: np.ndarray, scene: np.ndarray, levels: int,
                    hf_level) -> list:
    """One (noisy, clean) stack pair per refined level; noisy stacks are
    brightness-equalized by the same factor as the conditioning."""
    chosen = tuple(range(1, levels + 1)) if hf_level == "both" \
        else (min(int(hf_level), levels),)
    boost = NOMINAL_LEVEL / brightness_of(stage1_img, levels)
    noisy_pyr = wavelet.dwt2_multi(stage1_img, levels)
    clean_pyr = wavelet.dwt2_multi(scene, levels)
    pack = lambda s, k: {"hh": _chw(s.hh) * k, "lh": _chw(s.lh) * k,
                         "hl": _chw(s.hl) * k}
    return [(pack(noisy_pyr[lvl - 1], boost), pack(clean_pyr[lvl - 1], 1.0))
            for lvl in chosen]


def load_measurement(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".llt1":
        return load_image(path)
    return load_png_raw(path)


def train_stage2(manifest: DatasetManifest, psf: Psf, spec: ToyTrainSpec,
                 ckpt_dir) -> dict:
    """Fit diffusion + HF nets on the manifest's train split; save checkpoint."""
    params = sensor_from_dict(manifest.sensor)
    schedule = make_schedule(spec.schedule_T, spec.beta_start, spec.beta_end)

    diff_pairs, hf_pairs = [], []
    for item in manifest.items:
        if item.get("split", "train") != "train":
            continue
        scene = load_image(item["scene"])
        measurement = load_measurement(item["measurement"])
        s1 = stage1_reconstruct(measurement, psf, params, spec.wiener_lambda)
        repeats = spec.dark_oversample \
            if item.get("exposure", 1.0) < 0.4 else 1
        for _ in range(max(1, repeats)):
            diff_pairs.append(_latent_pair(s1, scene, spec.levels))
            hf_pairs.extend(_hf_stack_pairs(s1, scene, spec.levels,
                                            spec.hf_level))
    if not diff_pairs:
        raise DataError("train_stage2: manifest has no train items")

    channels = diff_pairs[0][1].shape[0]
    cond_channels = diff_pairs[0][0].shape[0]
    predictor = ToyPredictor(data_channels=channels,
                             cond_channels=cond_channels, hidden=spec.hidden,
                             attn_dim=spec.attn_dim, seed=spec.seed,
                             schedule=schedule)

    def recon_loss(x_hat, x0):
        # rollout lives in the [-1,1] latent; score it on the [0,1] scale
        from . import tensor as tz
        to01 = lambda t: tz.scale(tz.add_scalar(t, 1.0), 0.5)
        return enhance.loss_recon(to01(x_hat), to01(x0), spec.loss)

    train_cfg = TrainConfig(
        epochs=spec.epochs, batch_size=spec.batch_size, lr=spec.lr,
        lr_decay=spec.lr_decay, lr_decay_every=spec.lr_decay_every,
        ema_rate=spec.ema_rate, recon_every=spec.recon_every,
        rollout_steps=spec.rollout_steps, seed=spec.seed)
    result = train_epsilon(predictor, diff_pairs, schedule, train_cfg,
                           recon_loss_fn=recon_loss)

    hf_net = HfNet(channels=channels, features=spec.hf_features, seed=spec.seed)
    hf_losses = train_hf(hf_net, hf_pairs, spec.loss, epochs=spec.hf_epochs,
                         lr=spec.hf_lr, seed=spec.seed)

    meta = {
        "channels": channels,
        "cond_channels": cond_channels,
        "schedule": {"T": spec.schedule_T, "beta_start": spec.beta_start,
                     "beta_end": spec.beta_end},
        "levels": spec.levels,
        "hf_level": spec.hf_level,
        "implicit_steps": spec.implicit_steps,
        "wiener_lambda": spec.wiener_lambda,
        "hidden": spec.hidden,
        "attn_dim": spec.attn_dim,
        "hf_features": spec.hf_features,
        "psf": {"frozen": True},
        "final_eps_loss": result.losses[-1],
        "final_hf_loss": hf_losses[-1],
    }
    save_checkpoint(ckpt_dir, {
        "diffusion": result.params,
        "diffusion_ema": result.ema_params,
        "hf": hf_net.state(),
    }, meta)
    return meta


@dataclass
class Stage2Runtime:
    predictor: ToyPredictor
    hf_net: HfNet
    schedule: DiffusionSchedule
    cfg: Stage2Config
    wiener_lambda: float


def load_stage2(ckpt_dir, use_ema: bool = True) -> Stage2Runtime:
    sections, meta = load_checkpoint(ckpt_dir)
    sched_meta = meta["schedule"]
    schedule = make_schedule(int(sched_meta["T"]), sched_meta["beta_start"],
                             sched_meta["beta_end"])
    predictor = ToyPredictor(
        data_channels=int(meta["channels"]),
        cond_channels=int(meta.get("cond_channels", meta["channels"])),
        hidden=int(meta["hidden"]), attn_dim=int(meta["attn_dim"]),
        schedule=schedule)
    weights = "diffusion_ema" if use_ema and "diffusion_ema" in sections \
        else "diffusion"
    predictor.load_state(sections[weights])
    hf_net = HfNet(channels=int(meta["channels"]),
                   features=int(meta["hf_features"]))
    hf_net.load_state(sections["hf"])
    cfg = Stage2Config(levels=int(meta["levels"]),
                       implicit_steps=int(meta["implicit_steps"]),
                       hf_level=meta["hf_level"])
    return Stage2Runtime(predictor=predictor, hf_net=hf_net, schedule=schedule,
                         cfg=cfg, wiener_lambda=float(meta["wiener_lambda"]))


def enhance_measurement(measurement: np.ndarray, psf: Psf,
                        params: SensorParams, runtime: Stage2Runtime,
                        seed: int = 0):
    """(stage1, stage2) images for one capture."""
    s1 = stage1_reconstruct(measurement, psf, params, runtime.wiener_lambda)
    cfg = Stage2Config(levels=runtime.cfg.levels,
                       implicit_steps=runtime.cfg.implicit_steps,
                       hf_level=runtime.cfg.hf_level, seed=seed)
    s2 = stage2(s1, runtime.predictor, runtime.hf_net, runtime.schedule, cfg)
    return s1, np.clip(s2, 0.0, 1.0)


def evaluate_split(manifest: DatasetManifest, psf: Psf,
                   runtime: Stage2Runtime, split: str = "test",
                   seed: int = 0):
    """Per-stage reports over one manifest split."""
    from .datasetgen import _split_hash
    params = sensor_from_dict(manifest.sensor)
    master = Rng(seed)
    s1_pairs, s2_pairs = [], []
    for item in manifest.items:
        if item.get("split", "train") != split:
            continue
        scene = load_image(item["scene"])
        measurement = load_measurement(item["measurement"])
        s1, s2 = enhance_measurement(measurement, psf, params, runtime,
                                     seed=master.derive_seed(_split_hash(item["id"])))
        s1_pairs.append((item["id"], scene, s1))
        s2_pairs.append((item["id"], scene, s2))
    if not s1_pairs:
        raise DataError(f"evaluate_split: no items in split {split!r}")
    return (evaluate_arrays(s1_pairs, {"stage": 1}),
            evaluate_arrays(s2_pairs, {"stage": 2}))


def sweep_exposure(scenes: list, ids: list, psf: Psf, params: SensorParams,
                   runtime: Stage2Runtime, factors, base_seed: int = 11) -> dict:
    """Re-synthesize the scene list at each exposure and score both stages."""
    master = Rng(base_seed)
    reports = {}
    for factor in factors:
        s1_pairs, s2_pairs = [], []
        for index, (scene, item_id) in enumerate(zip(scenes, ids)):
            seed = master.derive_seed(index * 1000 + int(round(factor * 100)))
            measurement, _ = synthesize_pair(scene, psf, params,
                                             exposure=factor, seed=seed)
            s1, s2 = enhance_measurement(measurement, psf, params, runtime,
                                         seed=seed)
            s1_pairs.append((item_id, scene, s1))
            s2_pairs.append((item_id, scene, s2))
        reports[factor] = {
            "stage1": evaluate_arrays(s1_pairs, {"exposure": factor, "stage": 1}),
            "stage2": evaluate_arrays(s2_pairs, {"exposure": factor, "stage": 2}),
        }
    return reports
