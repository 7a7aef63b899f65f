"""Conditional denoising-diffusion machinery for the wavelet LL latent.

Holds the variance schedule, the closed-form forward jump, ancestral and
implicit reverse samplers, a small conditional noise-prediction network built
entirely from the tensor primitives, and the eps-prediction training loop
with Adam + EMA.

The reverse-step mean uses the standard form mu = (x_t - beta_t/
sqrt(1-abar_t) * eps) / sqrt(alpha_t).  The implicit sampler's per-step noise
scale is sigma^2 = eta^2 * beta_tilde over the sub-schedule; eta defaults to
0 (fully deterministic, nothing drawn after the initial noise image), while
eta=1 with zeroed noise reproduces the ancestral mean chain step for step.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .errors import NumericalError
from .optim import Adam, Ema
from .rng import Rng
from .tensor import GradTape, Tensor


@dataclass
class DiffusionSchedule:
    """Arrays indexed 0..T; index 0 is the identity step (alpha_bar[0] = 1)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray


def make_schedule(T: int = 200, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    if T < 1:
        raise ValueError(f"schedule needs T >= 1, got {T}")
    if not 0 < beta_start < 1 or not 0 < beta_end < 1:
        raise ValueError("beta endpoints must lie in (0, 1)")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    posterior_var = np.zeros(T + 1)
    posterior_var[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return DiffusionSchedule(T=T, beta=beta, alpha=alpha,
                             alpha_bar=alpha_bar, posterior_var=posterior_var)


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray,
             schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form forward jump x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_step(x_prev: np.ndarray, t: int, schedule: DiffusionSchedule,
                 rng: Rng) -> np.ndarray:
    """One forward transition q(x_t | x_{t-1})."""
    a = schedule.alpha[t]
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * rng.normal(x_prev.shape)


def posterior_mean_variance(x_t: np.ndarray, eps_hat: np.ndarray, t: int,
                            schedule: DiffusionSchedule):
    mu = (x_t - schedule.beta[t] / np.sqrt(1.0 - schedule.alpha_bar[t]) * eps_hat) \
        / np.sqrt(schedule.alpha[t])
    return mu, float(schedule.posterior_var[t])


def _call_predictor(predictor, x: np.ndarray, cond: np.ndarray, t) -> np.ndarray:
    out = predictor(Tensor(x), Tensor(cond), t)
    return out.data if isinstance(out, Tensor) else np.asarray(out)


def ddpm_sample(predictor, cond: np.ndarray, schedule: DiffusionSchedule,
                rng: Rng, shape=None, x_init: np.ndarray = None) -> np.ndarray:
    """Ancestral reverse chain from x_T to x_0."""
    if x_init is None:
        if shape is None:
            shape = np.asarray(cond).shape
        x = rng.normal(shape)
    else:
        x = np.array(x_init, dtype=np.float64)
    for t in range(schedule.T, 0, -1):
        eps_hat = _call_predictor(predictor, x, cond, t)
        mu, var = posterior_mean_variance(x, eps_hat, t, schedule)
        if not np.all(np.isfinite(mu)):
            raise NumericalError(f"ddpm_sample: non-finite mean at step t={t}")
        if t > 1:
            x = mu + np.sqrt(var) * rng.normal(x.shape)
        else:
            x = mu
    return x


def ddim_substeps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced sub-schedule 0 = tau_0 < ... < tau_steps = T."""
    if not 1 <= steps <= T:
        raise ValueError(f"implicit steps must be in [1, T], got {steps}")
    return np.round(np.linspace(0, T, steps + 1)).astype(int)


def ddim_sample(predictor, cond: np.ndarray, schedule: DiffusionSchedule,
                steps: int = 10, eta: float = 0.0, rng: Rng = None,
                shape=None, x_init: np.ndarray = None) -> np.ndarray:
    """Implicit sampling over an evenly spaced sub-schedule.

    With the default eta=0 no randomness is consumed after the initial draw.
    """
    taus = ddim_substeps(schedule.T, steps)
    if x_init is None:
        if shape is None:
            shape = np.asarray(cond).shape
        if rng is None:
            raise ValueError("ddim_sample needs x_init or an rng for the initial draw")
        x = rng.normal(shape)
    else:
        x = np.array(x_init, dtype=np.float64)
    ab = schedule.alpha_bar
    for i in range(steps, 0, -1):
        t, p = int(taus[i]), int(taus[i - 1])
        eps_hat = _call_predictor(predictor, x, cond, t)
        x0_pred = (x - np.sqrt(1.0 - ab[t]) * eps_hat) / np.sqrt(ab[t])
        if not np.all(np.isfinite(x0_pred)):
            raise NumericalError(f"ddim_sample: non-finite estimate at step t={t}")
        sig2 = 0.0
        if eta > 0.0 and p > 0:
            sig2 = eta ** 2 * (1.0 - ab[p]) / (1.0 - ab[t]) * (1.0 - ab[t] / ab[p])
        direction = np.sqrt(max(1.0 - ab[p] - sig2, 0.0))
        x = np.sqrt(ab[p]) * x0_pred + direction * eps_hat
        if sig2 > 0.0:
            x = x + np.sqrt(sig2) * rng.normal(x.shape)
    return x


# ---------------------------------------------------------------------------
# conditional noise-prediction network


TIME_EMBED_DIM = 8


def time_embedding(t, T: int) -> np.ndarray:
    """Sinusoidal features of the step index, one vector per batch element."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = 2.0 ** np.arange(TIME_EMBED_DIM // 2) / float(T)
    angles = 2.0 * np.pi * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class ToyPredictor:
    """Small conditional eps-net: two depthwise-separable encoder stages, one
    cross-attention mixing block at the bottleneck, mirrored decoder.

    Input channels: data + conditioning stack + time embedding.  Internally
    the stack estimates the clean signal and the eps output is formed
    analytically as (x_t - sqrt(abar_t) * x0_hat) / sqrt(1 - abar_t), which
    keeps the network's task well conditioned across the whole schedule while
    the training objective stays plain noise prediction.
    """

    def __init__(self, data_channels: int = 3, hidden: int = 16,
                 attn_dim: int = 24, seed: int = 0,
                 schedule: DiffusionSchedule = None, T: int = 200,
                 cond_channels: int = None):
        if schedule is None:
            schedule = make_schedule(T)
        self.schedule = schedule
        self.data_channels = data_channels
        self.cond_channels = cond_channels or data_channels
        self.hidden = hidden
        self.attn_dim = attn_dim
        self.T = schedule.T
        rng = Rng(seed)
        c_in = data_channels + self.cond_channels + TIME_EMBED_DIM

        def init(shape, fan_in):
            return Tensor(rng.normal(shape) * np.sqrt(1.0 / fan_in),
                          requires_grad=True)

        p = {}
        # x0 skip from the conditioning stack, initialized to pass through
        # its first data_channels channels
        skip = np.zeros((data_channels, self.cond_channels, 1, 1))
        for i in range(min(data_channels, self.cond_channels)):
            skip[i, i, 0, 0] = 1.0
        p["skip_pw"] = Tensor(skip, requires_grad=True)
        p["enc1_dw"] = init((c_in, 3, 3), 9)
        p["enc1_pw"] = init((hidden, c_in, 1, 1), c_in)
        p["enc1_b"] = Tensor(np.zeros(hidden), requires_grad=True)
        p["enc2_dw"] = init((hidden, 3, 3), 9)
        p["enc2_pw"] = init((attn_dim, hidden, 1, 1), hidden)
        p["enc2_b"] = Tensor(np.zeros(attn_dim), requires_grad=True)
        p["att_q"] = init((attn_dim, attn_dim), attn_dim)
        p["att_k"] = init((attn_dim, attn_dim), attn_dim)
        p["att_v"] = init((attn_dim, attn_dim), attn_dim)
        p["att_o"] = init((attn_dim, attn_dim), attn_dim)
        p["dec1_dw"] = init((attn_dim, 3, 3), 9)
        p["dec1_pw"] = init((hidden, attn_dim, 1, 1), attn_dim)
        p["dec1_b"] = Tensor(np.zeros(hidden), requires_grad=True)
        p["dec2_dw"] = init((hidden, 3, 3), 9)
        p["dec2_pw"] = Tensor(0.05 * rng.normal((data_channels, hidden, 1, 1)),
                              requires_grad=True)
        p["dec2_b"] = Tensor(np.zeros(data_channels), requires_grad=True)
        self.params = p

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def load_state(self, state: dict) -> None:
        for name, value in state.items():
            self.params[name].data = np.asarray(value, dtype=np.float64)

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def __call__(self, x_t: Tensor, cond: Tensor, t) -> Tensor:
        p = self.params
        n, c, h, w = x_t.shape
        emb = time_embedding(np.broadcast_to(np.asarray(t), (n,)), self.T)
        emb_maps = Tensor(np.broadcast_to(
            emb[:, :, None, None], (n, TIME_EMBED_DIM, h, w)).copy())
        z = tz.concat_channels([x_t, cond, emb_maps])

        z = tz.silu(tz.bias_add(
            tz.conv2d(tz.depthwise_conv2d(z, p["enc1_dw"], padding=1),
                      p["enc1_pw"]), p["enc1_b"]))
        z = tz.downsample_nearest(z, 2)
        z = tz.silu(tz.bias_add(
            tz.conv2d(tz.depthwise_conv2d(z, p["enc2_dw"], padding=1),
                      p["enc2_pw"]), p["enc2_b"]))

        z = tz.add(z, batched_self_attention(
            z, p["att_q"], p["att_k"], p["att_v"], p["att_o"]))

        z = tz.upsample_nearest(z, 2)
        z = tz.silu(tz.bias_add(
            tz.conv2d(tz.depthwise_conv2d(z, p["dec1_dw"], padding=1),
                      p["dec1_pw"]), p["dec1_b"]))
        # clean-signal estimate as a correction on the conditioning stack
        x0_hat = tz.add(tz.conv2d(cond, p["skip_pw"]), tz.bias_add(
            tz.conv2d(tz.depthwise_conv2d(z, p["dec2_dw"], padding=1),
                      p["dec2_pw"]), p["dec2_b"]))

        ab = self.schedule.alpha_bar[np.broadcast_to(np.asarray(t), (n,))]
        sqrt_ab = np.sqrt(ab)[:, None, None, None]
        inv_std = 1.0 / np.sqrt(np.maximum(1.0 - ab, 1e-12))[:, None, None, None]
        shape = (n, c, h, w)
        scale_a = Tensor(np.broadcast_to(sqrt_ab, shape).copy())
        scale_b = Tensor(np.broadcast_to(inv_std, shape).copy())
        return tz.mul(tz.sub(x_t, tz.mul(x0_hat, scale_a)), scale_b)


def ddim_rollout_tensor(predictor, cond: Tensor, schedule: DiffusionSchedule,
                        steps: int, x_init: Tensor) -> Tensor:
    """Differentiable implicit rollout (eta=0) used by bidirectional training."""
    taus = ddim_substeps(schedule.T, steps)
    ab = schedule.alpha_bar
    x = x_init
    for i in range(steps, 0, -1):
        t, p = int(taus[i]), int(taus[i - 1])
        eps_hat = predictor(x, cond, t)
        x0_pred = tz.scale(tz.sub(x, tz.scale(eps_hat, np.sqrt(1.0 - ab[t]))),
                           1.0 / np.sqrt(ab[t]))
        x = tz.add(tz.scale(x0_pred, np.sqrt(ab[p])),
                   tz.scale(eps_hat, np.sqrt(1.0 - ab[p])))
    return x


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_every: int = 100     # epochs between decays
    ema_rate: float = 0.9999
    recon_every: int = 10         # steps between rollout penalties; 0 disables
    rollout_steps: int = 3
    seed: int = 0


@dataclass
class TrainResult:
    params: dict
    ema_params: dict
    losses: list = field(default_factory=list)


def train_epsilon(predictor, dataset, schedule: DiffusionSchedule,
                  cfg: TrainConfig, recon_loss_fn=None) -> TrainResult:
    """Minimize E||eps - eps_theta(x_t, s, t)||^2 over (cond, x0) pairs.

    Bidirectional regimen: the eps loss runs every step; every
    `recon_every`-th step adds a short differentiable implicit rollout scored
    by `recon_loss_fn(x0_hat, x0)` against the clean target.
    """
    if not dataset:
        raise ValueError("train_epsilon: empty dataset")
    rng = Rng(cfg.seed)
    adam = Adam(predictor.params, lr=cfg.lr)
    ema = Ema(predictor.params, rate=cfg.ema_rate)
    losses = []
    step = 0
    n = len(dataset)
    for epoch in range(cfg.epochs):
        adam.lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cond = np.stack([dataset[j][0] for j in idx])
            x0 = np.stack([dataset[j][1] for j in idx])
            t_arr = rng.integers(1, schedule.T + 1, (len(idx),))
            eps = rng.normal(x0.shape)
            ab = schedule.alpha_bar[t_arr][:, None, None, None]
            x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

            step += 1
            with GradTape() as tape:
                pred = predictor(Tensor(x_t), Tensor(cond), t_arr)
                diff = tz.sub(Tensor(eps), pred)
                loss = tz.mean_all(tz.mul(diff, diff))
                if (recon_loss_fn is not None and cfg.recon_every > 0
                        and step % cfg.recon_every == 0):
                    x_start = Tensor(rng.normal(x0.shape))
                    x0_hat = ddim_rollout_tensor(predictor, Tensor(cond),
                                                 schedule, cfg.rollout_steps,
                                                 x_start)
                    loss = tz.add(loss, recon_loss_fn(x0_hat, Tensor(x0)))
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(
                        f"train_epsilon: non-finite loss at step {step}")
                adam.zero_grad()
                tape.backward(loss)
            adam.step()
            ema.update(predictor.params)
            losses.append(value)
    return TrainResult(params=predictor.state(),
                       ema_params=ema.state(), losses=losses)


def batched_self_attention(z: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                           wo: Tensor) -> Tensor:
    """Spatial-token self-attention per batch element of an NCHW tensor.

    Batch rows are gathered and scattered with constant one-hot selector
    matmuls so every step stays inside the differentiable primitive set.
    """
    nb, cb, hb, wb = z.shape
    flat = tz.reshape(z, (nb, cb * hb * wb))
    out = None
    for i in range(nb):
        sel = Tensor(np.eye(nb)[i:i + 1])                 # [1, nb]
        fmap = tz.reshape(tz.matmul(sel, flat), (cb, hb * wb))
        tokens = tz.transpose2d(fmap)                     # [tokens, C]
        att = tz.cross_attention(tz.matmul(tokens, wq),
                                 tz.matmul(tokens, wk),
                                 tz.matmul(tokens, wv))
        att = tz.matmul(att, wo)
        row = tz.reshape(tz.transpose2d(att), (1, cb * hb * wb))
        scattered = tz.matmul(tz.transpose2d(sel), row)   # [nb, m], zeros elsewhere
        out = scattered if out is None else tz.add(out, scattered)
    return tz.reshape(out, (nb, cb, hb, wb))
