"""Finite-difference verification of every differentiable primitive and loss.

Each check builds a scalar loss (a fixed random weighting of the op output),
computes analytic gradients with one tape pass, and compares against central
differences.  The error metric per coordinate is

    |analytic - fd| / max(1, |fd|)

and a check passes when the max over all coordinates of all inputs stays
below the threshold (1e-4 at h=1e-5 in float64).  Inputs for kinked ops
(relu, abs) are pushed away from the kink by more than the step size.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .rng import Rng
from .tensor import GradTape, Tensor, finite_diff_grad


@dataclass
class CheckResult:
    name: str
    rel_err: float
    passed: bool


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


def _away_from_kink(a: np.ndarray, margin: float = 0.05) -> np.ndarray:
    a = a.copy()
    near = np.abs(a) < margin
    a[near] = margin * np.where(a[near] >= 0, 1.0, -1.0) * 2.0
    return a


def _run_check(name, fn, arrays, h, threshold, results):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with GradTape() as tape:
        loss = fn(*tensors)
        tape.backward(loss)
    worst = 0.0
    for i in range(len(arrays)):
        def partial(x, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = x
            return fn(*args)
        fd = finite_diff_grad(partial, Tensor(arrays[i]), h)
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        worst = max(worst, rel_err(analytic, fd))
    results.append(CheckResult(name=name, rel_err=worst, passed=worst < threshold))


def run_gradient_checks(h: float = 1e-5, threshold: float = 1e-4) -> list:
    """The full primitive + loss suite; every entry independent and seeded."""
    rng = Rng(2024)
    results = []

    def uni(shape):
        return rng.uniform(shape) * 2.0 - 1.0

    def weighted(op):
        # scalar loss exercising every output coordinate
        def fn(*ts):
            out = op(*ts)
            w = Tensor(_weights[id(op)][:out.size].reshape(out.shape))
            return tz.sum_all(tz.mul(out, w))
        return fn

    _weights = {}

    def reg(name, op, arrays):
        _weights[id(op)] = rng.uniform(4096) * 2.0 - 1.0
        _run_check(name, weighted(op), arrays, h, threshold, results)

    a44, b44 = uni((4, 4)), uni((4, 4))
    reg("add", tz.add, [a44, b44])
    reg("sub", tz.sub, [a44, b44])
    reg("mul", tz.mul, [a44, b44])
    reg("div", tz.div, [a44, np.sign(b44) * (np.abs(b44) + 1.0)])
    reg("scale", lambda t: tz.scale(t, -1.7), [a44])
    reg("add_scalar", lambda t: tz.add_scalar(t, 0.3), [a44])
    reg("abs", tz.abs_, [_away_from_kink(a44)])
    reg("relu", tz.relu, [_away_from_kink(a44)])
    reg("silu", tz.silu, [a44])

    x_img = uni((2, 3, 4, 4))
    reg("bias_add", tz.bias_add, [x_img, uni(3)])
    reg("matmul", tz.matmul, [uni((3, 4)), uni((4, 2))])
    reg("transpose2d", tz.transpose2d, [uni((3, 5))])
    reg("reshape", lambda t: tz.reshape(t, (2, 8)), [uni((4, 4))])
    reg("softmax_rows", tz.softmax_rows, [uni((3, 5))])
    reg("concat_channels",
        lambda p, q: tz.concat_channels([p, q]),
        [uni((1, 2, 3, 3)), uni((1, 3, 3, 3))])
    reg("upsample_nearest", tz.upsample_nearest, [uni((1, 2, 3, 3))])
    reg("downsample_nearest", tz.downsample_nearest, [uni((1, 2, 4, 4))])
    reg("conv2d",
        lambda x, k: tz.conv2d(x, k, stride=2, padding=1),
        [uni((1, 2, 5, 5)), uni((2, 2, 3, 3))])
    reg("depthwise_conv2d",
        lambda x, k: tz.depthwise_conv2d(x, k, stride=1, padding=1),
        [uni((1, 3, 4, 4)), uni((3, 3, 3))])
    reg("cross_attention", tz.cross_attention,
        [uni((3, 4)), uni((5, 4)), uni((5, 4))])

    # scalar-output ops need no weighting
    _run_check("sum", lambda t: tz.sum_all(t), [a44], h, threshold, results)
    _run_check("mean", lambda t: tz.mean_all(t), [a44], h, threshold, results)

    results.extend(run_loss_checks(h, threshold))
    return results


def run_loss_checks(h: float = 1e-5, threshold: float = 1e-4) -> list:
    """Eq-style losses: eps-prediction term, recon terms, HF terms, total."""
    from .enhance import LossConfig, loss_hf, loss_recon, loss_total

    rng = Rng(77)
    results = []
    cfg = LossConfig()

    # noise-prediction loss through a 10-parameter toy net (3x3 depthwise + bias)
    x_t = rng.uniform((1, 1, 5, 5)) * 2.0 - 1.0
    eps = rng.normal((1, 1, 5, 5))

    def eps_loss(kernel, bias):
        pred = tz.bias_add(tz.depthwise_conv2d(Tensor(x_t), kernel, padding=1),
                           bias)
        d = tz.sub(Tensor(eps), pred)
        return tz.mean_all(tz.mul(d, d))

    _run_check("loss_eps_prediction", eps_loss,
               [rng.normal((1, 3, 3)) * 0.3, rng.normal(1) * 0.1],
               h, threshold, results)

    a = np.clip(rng.uniform((1, 3, 6, 6)), 0.05, 0.95)
    b = np.clip(a + 0.2 * (rng.uniform((1, 3, 6, 6)) - 0.5), 0.05, 0.95)
    flat = np.abs(a - b) > 2e-4   # keep MAE kinks away from the fd step
    b[~flat] += 0.01

    _run_check("loss_recon", lambda p, q: loss_recon(p, q, cfg), [a, b],
               h, threshold, results)
    _run_check("loss_recon_mae_only",
               lambda p, q: loss_recon(p, q, LossConfig(w1=1, w2=0, w3=0)),
               [a, b], h, threshold, results)
    _run_check("loss_recon_ssim_only",
               lambda p, q: loss_recon(p, q, LossConfig(w1=0, w2=1, w3=0)),
               [a, b], h, threshold, results)
    _run_check("loss_recon_features_only",
               lambda p, q: loss_recon(p, q, LossConfig(w1=0, w2=0, w3=1)),
               [a, b], h, threshold, results)

    hf_a = rng.uniform((1, 3, 6, 6)) * 2.0 - 1.0
    hf_b = hf_a + _away_from_kink(rng.uniform((1, 3, 6, 6)) * 0.5 - 0.25, 0.02)
    _run_check("loss_hf", lambda p, q: loss_hf(p, q, cfg), [hf_a, hf_b],
               h, threshold, results)
    _run_check("loss_hf_mse_only",
               lambda p, q: loss_hf(p, q, LossConfig(w4=1, w5=0)),
               [hf_a, hf_b], h, threshold, results)
    _run_check("loss_hf_tv_only",
               lambda p, q: loss_hf(p, q, LossConfig(w4=0, w5=1)),
               [hf_a, hf_b], h, threshold, results)

    _run_check("loss_total",
               lambda p, q: loss_total(tz.mean_all(tz.mul(p, p)),
                                       loss_recon(q, Tensor(a), cfg),
                                       tz.mean_all(tz.abs_(p))),
               [_away_from_kink(rng.uniform((2, 2)) - 0.5), b],
               h, threshold, results)
    return results
