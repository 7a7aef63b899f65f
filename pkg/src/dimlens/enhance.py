"""Stage-2 assembly: wavelet split, diffusion LL refinement, HF network,
recombination, and the training losses.

Losses (all differentiable through the tensor primitives):

    recon  = w1*MAE + w2*(1 - SSIM) + w3*(feature distances at taps 2 and 4)
    hf     = w4*MSE + w5*TV(residual)
    total  = eps_loss + recon + hf

The perceptual taps come from a fixed random-seeded 4-layer conv stack (the
seed lives in LossConfig) standing in for a pretrained feature network; swap
in any callable with the same (x -> (f2, f4)) contract via `feature_fn`.

The SSIM term enters as 1 - SSIM so perfect reconstruction scores exactly 0,
and the TV penalty acts on the residual (hf_hat - hf), which is zero for a
perfect reconstruction.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from . import wavelet
from .diffusion import DiffusionSchedule, batched_self_attention, ddim_sample
from .rng import Rng
from .tensor import Tensor

#: gain-corrected mean level of a nominal-exposure capture; the conditioning
#: equalizes measured brightness to this reference and carries the measured
#: level in a separate channel
NOMINAL_LEVEL = 0.4


def ll_gain(levels: int) -> float:
    """Scale factor between a [0,1] image and its level-L Haar LL subband."""
    return float(2 ** levels)


def _chw(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img[None]
    return np.transpose(img, (2, 0, 1))


def brightness_of(stage1_img: np.ndarray, levels: int) -> float:
    """Per-image signal level estimate from the deep LL subband, in [0, 1]."""
    raw = wavelet.dwt2_multi(stage1_img, levels)[-1].ll / ll_gain(levels)
    return float(np.clip(raw.mean(), 0.02, 1.0))


def make_condition(stage1_img: np.ndarray, levels: int) -> np.ndarray:
    """Conditioning stack [C+1, h, w]: brightness-equalized LL latent plus a
    constant log-scale channel carrying the measured exposure level."""
    raw = wavelet.dwt2_multi(stage1_img, levels)[-1].ll / ll_gain(levels)
    level = float(np.clip(raw.mean(), 0.02, 1.0))
    equalized = np.clip(raw * (NOMINAL_LEVEL / level), 0.0, 1.5)
    cond_ll = _chw(equalized * 2.0 - 1.0)
    scale_ch = np.full((1,) + cond_ll.shape[1:], np.log(level / NOMINAL_LEVEL))
    return np.concatenate([cond_ll, scale_ch], axis=0)


# ---------------------------------------------------------------------------
# losses


@dataclass
class LossConfig:
    w1: float = 1.0      # MAE
    w2: float = 0.2      # 1 - SSIM
    w3: float = 0.01     # perceptual feature distance
    w4: float = 1.0      # HF MSE
    w5: float = 0.1      # HF TV-on-residual
    feature_seed: int = 7
    feature_channels: int = 8

    def __post_init__(self):
        weights = (self.w1, self.w2, self.w3, self.w4, self.w5)
        if any(w < 0 for w in weights):
            raise ValueError(f"loss weights must be nonnegative, got {weights}")
        if not any(weights):
            raise ValueError("all loss weights are zero")


class FeatureExtractor:
    """Fixed random 4-layer conv stack; taps after layers 2 and 4."""

    def __init__(self, in_channels: int = 3, hidden: int = 8, seed: int = 7):
        rng = Rng(seed)
        chans = [in_channels, hidden, hidden, hidden, hidden]
        self.kernels = [
            Tensor(rng.normal((chans[i + 1], chans[i], 3, 3))
                   * np.sqrt(2.0 / (9 * chans[i])))
            for i in range(4)
        ]

    def __call__(self, x: Tensor):
        taps = []
        z = x
        for i, k in enumerate(self.kernels):
            z = tz.conv2d(z, k, padding=1)
            if i < 3:
                z = tz.silu(z)
            if i in (1, 3):
                taps.append(z)
        return taps[0], taps[1]


_extractors = {}


def _feature_fn(channels: int, cfg: LossConfig):
    key = (channels, cfg.feature_seed, cfg.feature_channels)
    if key not in _extractors:
        _extractors[key] = FeatureExtractor(channels, cfg.feature_channels,
                                            cfg.feature_seed)
    return _extractors[key]


def _as_nchw(t: Tensor) -> Tensor:
    if len(t.shape) == 3:
        return tz.reshape(t, (1,) + tuple(t.shape))
    return t


def mae_term(a: Tensor, b: Tensor) -> Tensor:
    return tz.mean_all(tz.abs_(tz.sub(a, b)))


def mse_term(a: Tensor, b: Tensor) -> Tensor:
    d = tz.sub(a, b)
    return tz.mean_all(tz.mul(d, d))


_GAUSS_CACHE = {}


def _gauss_kernel(channels: int, size: int, sigma: float = 1.5) -> Tensor:
    key = (channels, size, sigma)
    if key not in _GAUSS_CACHE:
        half = (size - 1) / 2.0
        coords = np.arange(size) - half
        g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
        k2 = np.outer(g, g)
        k2 /= k2.sum()
        _GAUSS_CACHE[key] = Tensor(np.broadcast_to(k2, (channels, size, size)).copy())
    return _GAUSS_CACHE[key]


def ssim_tensor(a: Tensor, b: Tensor, window_size: int = 11,
                sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
                peak: float = 1.0) -> Tensor:
    """Differentiable windowed SSIM on NCHW tensors (valid region, mean)."""
    a, b = _as_nchw(a), _as_nchw(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    n, c, h, w = a.shape
    size = min(window_size, h, w)
    if size % 2 == 0:
        size -= 1
    window = _gauss_kernel(c, size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def filt(t):
        return tz.depthwise_conv2d(t, window)

    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = tz.mul(mu_a, mu_a), tz.mul(mu_b, mu_b), tz.mul(mu_a, mu_b)
    var_a = tz.sub(filt(tz.mul(a, a)), mu_aa)
    var_b = tz.sub(filt(tz.mul(b, b)), mu_bb)
    cov = tz.sub(filt(tz.mul(a, b)), mu_ab)
    num = tz.mul(tz.add_scalar(tz.scale(mu_ab, 2.0), c1),
                 tz.add_scalar(tz.scale(cov, 2.0), c2))
    den = tz.mul(tz.add_scalar(tz.add(mu_aa, mu_bb), c1),
                 tz.add_scalar(tz.add(var_a, var_b), c2))
    return tz.mean_all(tz.div(num, den))


_TV_KERNELS = {}


def tv_term(x: Tensor) -> Tensor:
    """Anisotropic total variation: mean |dx| + mean |dy| via fixed kernels."""
    x = _as_nchw(x)
    c = x.shape[1]
    if c not in _TV_KERNELS:
        kh = np.zeros((c, 1, 2))
        kh[:, 0, 0], kh[:, 0, 1] = -1.0, 1.0
        kv = np.zeros((c, 2, 1))
        kv[:, 0, 0], kv[:, 1, 0] = -1.0, 1.0
        _TV_KERNELS[c] = (Tensor(kh), Tensor(kv))
    kh, kv = _TV_KERNELS[c]
    parts = []
    if x.shape[3] > 1:
        parts.append(tz.mean_all(tz.abs_(tz.depthwise_conv2d(x, kh))))
    if x.shape[2] > 1:
        parts.append(tz.mean_all(tz.abs_(tz.depthwise_conv2d(x, kv))))
    if not parts:
        return tz.mean_all(tz.scale(x, 0.0))
    total = parts[0]
    for p in parts[1:]:
        total = tz.add(total, p)
    return total


def loss_recon(x_hat: Tensor, x: Tensor, cfg: LossConfig) -> Tensor:
    """Generation-side loss: w1*MAE + w2*(1-SSIM) + w3*feature distance."""
    x_hat, x = _as_nchw(x_hat), _as_nchw(x)
    if x_hat.shape != x.shape:
        raise ValueError(f"loss_recon: shape mismatch {x_hat.shape} vs {x.shape}")
    total = tz.scale(mae_term(x_hat, x), cfg.w1)
    if cfg.w2 > 0:
        ssim_loss = tz.add_scalar(tz.scale(ssim_tensor(x_hat, x), -1.0), 1.0)
        total = tz.add(total, tz.scale(ssim_loss, cfg.w2))
    if cfg.w3 > 0:
        extractor = _feature_fn(x.shape[1], cfg)
        f2_hat, f4_hat = extractor(x_hat)
        f2, f4 = extractor(x)
        feat = tz.add(mse_term(f2_hat, f2), mse_term(f4_hat, f4))
        total = tz.add(total, tz.scale(feat, cfg.w3))
    return total


def loss_hf(hf_hat: Tensor, hf: Tensor, cfg: LossConfig) -> Tensor:
    """High-frequency loss: w4*MSE + w5*TV of the residual."""
    hf_hat, hf = _as_nchw(hf_hat), _as_nchw(hf)
    if hf_hat.shape != hf.shape:
        raise ValueError(f"loss_hf: shape mismatch {hf_hat.shape} vs {hf.shape}")
    total = tz.scale(mse_term(hf_hat, hf), cfg.w4)
    if cfg.w5 > 0:
        total = tz.add(total, tz.scale(tv_term(tz.sub(hf_hat, hf)), cfg.w5))
    return total


def loss_total(eps_loss: Tensor, recon: Tensor, hf: Tensor) -> Tensor:
    return tz.add(tz.add(eps_loss, recon), hf)


# ---------------------------------------------------------------------------
# HF module


class HfNet:
    """Refines the (HH, LH, HL) subband stack.

    Depthwise-separable feature extraction per subband, pairwise
    cross-attention across the three subband feature maps, depthwise
    refinement, then a zero-initialized projection back added residually —
    so a freshly constructed net is the identity map.
    """

    SUBBANDS = ("hh", "lh", "hl")

    def __init__(self, channels: int = 3, features: int = 8, seed: int = 0):
        self.channels = channels
        self.features = features
        rng = Rng(seed)

        def init(shape, fan_in):
            return Tensor(rng.normal(shape) * np.sqrt(1.0 / fan_in),
                          requires_grad=True)

        p = {}
        for name in self.SUBBANDS:
            p[f"{name}_dw"] = init((channels, 3, 3), 9)
            p[f"{name}_pw"] = init((features, channels, 1, 1), channels)
            p[f"{name}_b"] = Tensor(np.zeros(features), requires_grad=True)
        p["att_q"] = init((features, features), features)
        p["att_k"] = init((features, features), features)
        p["att_v"] = init((features, features), features)
        p["att_o"] = init((features, features), features)
        for name in self.SUBBANDS:
            p[f"{name}_ref_dw"] = init((features, 3, 3), 9)
            p[f"{name}_out"] = Tensor(np.zeros((channels, features, 1, 1)),
                                      requires_grad=True)
            p[f"{name}_out_b"] = Tensor(np.zeros(channels), requires_grad=True)
        self.params = p

    def load_state(self, state: dict) -> None:
        for name, value in state.items():
            self.params[name].data = np.asarray(value, dtype=np.float64)

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def __call__(self, subbands: dict) -> dict:
        return hf_forward(subbands, self.params)


def hf_forward(subbands: dict, params: dict) -> dict:
    """subbands: {"hh","lh","hl"} -> NCHW tensors of identical shape."""
    shapes = {name: tuple(t.shape) for name, t in subbands.items()}
    if len(set(shapes.values())) != 1:
        raise ValueError(f"hf_forward: subband shapes disagree: {shapes}")
    feats = {}
    for name in HfNet.SUBBANDS:
        t = subbands[name]
        z = tz.silu(tz.bias_add(
            tz.conv2d(tz.depthwise_conv2d(t, params[f"{name}_dw"], padding=1),
                      params[f"{name}_pw"]), params[f"{name}_b"]))
        feats[name] = z
    fused = {}
    for name in HfNet.SUBBANDS:
        others = [feats[o] for o in HfNet.SUBBANDS if o != name]
        partner = tz.add(others[0], others[1])
        fused[name] = tz.add(feats[name], _pairwise_attention(
            feats[name], partner, params))
    out = {}
    for name in HfNet.SUBBANDS:
        z = tz.silu(tz.depthwise_conv2d(fused[name], params[f"{name}_ref_dw"],
                                        padding=1))
        delta = tz.bias_add(tz.conv2d(z, params[f"{name}_out"]),
                            params[f"{name}_out_b"])
        out[name] = tz.add(subbands[name], delta)
    return out


def _pairwise_attention(query_map: Tensor, context_map: Tensor,
                        params: dict) -> Tensor:
    """Cross-attention of one subband's tokens against the other two."""
    nb, cb, hb, wb = query_map.shape
    q_flat = tz.reshape(query_map, (nb, cb * hb * wb))
    c_flat = tz.reshape(context_map, (nb, cb * hb * wb))
    out = None
    for i in range(nb):
        sel = Tensor(np.eye(nb)[i:i + 1])
        q_tok = tz.transpose2d(tz.reshape(tz.matmul(sel, q_flat), (cb, hb * wb)))
        c_tok = tz.transpose2d(tz.reshape(tz.matmul(sel, c_flat), (cb, hb * wb)))
        att = tz.cross_attention(tz.matmul(q_tok, params["att_q"]),
                                 tz.matmul(c_tok, params["att_k"]),
                                 tz.matmul(c_tok, params["att_v"]))
        att = tz.matmul(att, params["att_o"])
        row = tz.reshape(tz.transpose2d(att), (1, cb * hb * wb))
        scattered = tz.matmul(tz.transpose2d(sel), row)
        out = scattered if out is None else tz.add(out, scattered)
    return tz.reshape(out, (nb, cb, hb, wb))


def train_hf(hf_net: HfNet, dataset, cfg: LossConfig, epochs: int = 20,
             batch_size: int = 8, lr: float = 1e-3, seed: int = 0) -> list:
    """Fit the HF net on (noisy stack, clean stack) pairs; returns loss history.

    Each dataset item is a pair of dicts {"hh","lh","hl"} -> [C,H,W] arrays.
    """
    from .optim import Adam
    from .tensor import GradTape

    if not dataset:
        raise ValueError("train_hf: empty dataset")
    rng = Rng(seed)
    adam = Adam(hf_net.params, lr=lr)
    losses = []
    # batches never mix spatial sizes (a "both"-levels dataset has two)
    groups = {}
    for j, (noisy, _) in enumerate(dataset):
        groups.setdefault(noisy["hh"].shape, []).append(j)
    for _ in range(epochs):
        batches = []
        for members in groups.values():
            order = rng.permutation(len(members))
            for start in range(0, len(members), batch_size):
                batches.append([members[k] for k in order[start:start + batch_size]])
        for idx in batches:
            noisy = {k: Tensor(np.stack([dataset[j][0][k] for j in idx]))
                     for k in HfNet.SUBBANDS}
            clean = {k: np.stack([dataset[j][1][k] for j in idx])
                     for k in HfNet.SUBBANDS}
            with GradTape() as tape:
                refined = hf_net(noisy)
                pred = tz.concat_channels([refined[k] for k in HfNet.SUBBANDS])
                target = Tensor(np.concatenate(
                    [clean[k] for k in HfNet.SUBBANDS], axis=1))
                loss = loss_hf(pred, target, cfg)
                adam.zero_grad()
                tape.backward(loss)
            adam.step()
            losses.append(loss.item())
    return losses


# ---------------------------------------------------------------------------
# stage-2 inference


@dataclass
class Stage2Config:
    levels: int = 2
    implicit_steps: int = 10
    hf_level: object = 2       # 1, 2, or "both": pyramid level(s) the HF net refines
    seed: int = 0

    def hf_levels(self) -> tuple:
        if self.hf_level == "both":
            return tuple(range(1, self.levels + 1))
        return (min(int(self.hf_level), self.levels),)


def _to_nchw(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img[None, None]
    return np.transpose(img, (2, 0, 1))[None]


def _from_nchw(arr: np.ndarray) -> np.ndarray:
    arr = arr[0]
    if arr.shape[0] == 1:
        return arr[0]
    return np.transpose(arr, (1, 2, 0))


def stage2(x_init: np.ndarray, predictor, hf_net: HfNet,
           schedule: DiffusionSchedule, cfg: Stage2Config = None) -> np.ndarray:
    """Refine a stage-1 reconstruction: diffusion on LL, HF net on details."""
    cfg = cfg or Stage2Config()
    x_init = np.asarray(x_init, dtype=np.float64)
    pyramid = wavelet.dwt2_multi(x_init, cfg.levels)
    gain = ll_gain(cfg.levels)

    cond = make_condition(x_init, cfg.levels)[None]
    data_channels = getattr(predictor, "data_channels", cond.shape[1] - 1)
    shape = (1, data_channels) + cond.shape[2:]
    rng = Rng(cfg.seed)
    ll_hat = ddim_sample(predictor, cond, schedule, steps=cfg.implicit_steps,
                         rng=rng, shape=shape)
    pyramid[-1].ll = _from_nchw((ll_hat + 1.0) / 2.0 * gain)

    boost = NOMINAL_LEVEL / brightness_of(x_init, cfg.levels)
    for lvl in cfg.hf_levels():
        level = pyramid[lvl - 1]
        stack = {"hh": Tensor(boost * _to_nchw(level.hh)),
                 "lh": Tensor(boost * _to_nchw(level.lh)),
                 "hl": Tensor(boost * _to_nchw(level.hl))}
        refined = hf_net(stack)
        level.hh = _from_nchw(refined["hh"].data)
        level.lh = _from_nchw(refined["lh"].data)
        level.hl = _from_nchw(refined["hl"].data)

    return wavelet.idwt2_multi(pyramid)
