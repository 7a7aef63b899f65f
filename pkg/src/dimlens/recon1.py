"""Stage-1 model-driven inversion.

Wiener deconvolution is the frequency-domain regularized inverse

    x_hat = IFFT( FFT(b) . conj(OTF) / (lambda + |OTF|^2) )

computed on the same zero-padded grid as the forward model in `optics`, per
channel.  `range_project` composes forward model + small-lambda Wiener to
realize the range-space projection.  The ADMM baseline solves
0.5*||Hx - b||^2 + prior with the x-update in closed form in the frequency
domain; the splitting details are standard scaled-form ADMM.

Note the lambda here is the Wiener noise factor (`wiener.lambda` in configs),
unrelated to the loss weights `loss.w1..w5`.  The PSF stays fixed at its
calibration: no stage-1 parameter is trained (configs carry `psf.frozen`).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .optics import Psf, _otf, _pad_shapes, convolve_fft


WIENER_LAMBDA_DEFAULT = 50000.0
WIENER_LAMBDA_NOISY = 80000.0


@dataclass
class WienerConfig:
    lam: float = WIENER_LAMBDA_DEFAULT   # high-noise preset: WIENER_LAMBDA_NOISY
    per_channel: bool = True             # use per-channel PSF planes when available

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"wiener lambda must be >= 0, got {self.lam}")


@dataclass
class AdmmConfig:
    iterations: int = 100
    rho: float = 1.0
    prior: str = "nonneg"       # "nonneg" | "tv"
    tv_weight: float = 0.01

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"admm iterations must be >= 1, got {self.iterations}")
        if self.rho <= 0:
            raise ValueError(f"admm rho must be > 0, got {self.rho}")
        if self.prior not in ("nonneg", "tv"):
            raise ValueError(f"unknown admm prior {self.prior!r}")


@dataclass
class AdmmResult:
    image: np.ndarray
    residuals: list = field(default_factory=list)


def _wiener_plane(b: np.ndarray, psf_plane: np.ndarray, lam: float) -> np.ndarray:
    h, w = b.shape
    ph, pw, oy, ox = _pad_shapes(b.shape, psf_plane.shape)
    otf = _otf(psf_plane, (ph, pw))
    power = np.abs(otf) ** 2
    if lam == 0.0 and power.min() < 1e-12:
        raise NumericalError("singular inverse; increase lambda")
    emb = np.zeros((ph, pw))
    emb[oy:oy + h, ox:ox + w] = b
    spec = np.fft.rfft2(emb) * np.conj(otf) / (lam + power)
    return np.fft.irfft2(spec, s=(ph, pw))[:h, :w]


def wiener_deconv(b: np.ndarray, psf: Psf, cfg: WienerConfig) -> np.ndarray:
    """Initial reconstruction from a measurement, per channel."""
    b = np.asarray(b, dtype=np.float64)
    if psf.data.size == 0:
        raise ValueError("wiener_deconv: empty PSF")
    if b.ndim == 2:
        return _wiener_plane(b, psf.channel(0), cfg.lam)
    if b.ndim == 3:
        out = np.empty_like(b)
        for c in range(b.shape[2]):
            plane = psf.channel(c) if cfg.per_channel else psf.channel(0)
            out[:, :, c] = _wiener_plane(b[:, :, c], plane, cfg.lam)
        return out
    raise ValueError(f"wiener_deconv: expected [H,W] or [H,W,C], got {b.shape}")


def range_project(x: np.ndarray, psf: Psf, lam: float = 1e-8) -> np.ndarray:
    """Project onto the numerical range of the forward model (H then H^-1_lam)."""
    return wiener_deconv(convolve_fft(x, psf), psf, WienerConfig(lam=lam))


def _admm_plane(b: np.ndarray, psf_plane: np.ndarray, psf: Psf,
                cfg: AdmmConfig) -> AdmmResult:
    h, w = b.shape
    ph, pw, oy, ox = _pad_shapes(b.shape, psf_plane.shape)
    otf = _otf(psf_plane, (ph, pw))
    emb = np.zeros((ph, pw))
    emb[oy:oy + h, ox:ox + w] = b
    htb = np.conj(otf) * np.fft.rfft2(emb)
    plane_psf = Psf(data=psf_plane)

    res0 = max(float(np.linalg.norm(b)), 1e-300)

    if cfg.prior == "nonneg":
        denom = np.abs(otf) ** 2 + cfg.rho
        z = np.zeros((ph, pw))
        u = np.zeros((ph, pw))
        residuals = []
        for _ in range(cfg.iterations):
            x = np.fft.irfft2((htb + cfg.rho * np.fft.rfft2(z - u)) / denom, s=(ph, pw))
            z = np.maximum(x + u, 0.0)
            u = u + x - z
            estimate = z[:h, :w]
            res = float(np.linalg.norm(convolve_fft(estimate, plane_psf) - b))
            if not np.isfinite(res) or res > 1e6 * res0:
                raise NumericalError(
                    f"ADMM diverged: residual {res:.3e} vs initial {res0:.3e}")
            residuals.append(res)
        return AdmmResult(image=z[:h, :w], residuals=residuals)

    # anisotropic TV prior via gradient splitting
    ky = np.fft.fftfreq(ph)[:, None]
    kx = np.fft.rfftfreq(pw)[None, :]
    sym_v = np.exp(2j * np.pi * ky) - 1.0    # circular forward difference, rows
    sym_h = np.exp(2j * np.pi * kx) - 1.0    # circular forward difference, cols
    denom = np.abs(otf) ** 2 + cfg.rho * (np.abs(sym_v) ** 2 + np.abs(sym_h) ** 2)
    kappa = cfg.tv_weight / cfg.rho

    def d_v(a):
        return np.roll(a, -1, axis=0) - a

    def d_h(a):
        return np.roll(a, -1, axis=1) - a

    def soft(a, thr):
        return np.sign(a) * np.maximum(np.abs(a) - thr, 0.0)

    x = np.zeros((ph, pw))
    zv = np.zeros((ph, pw))
    zh = np.zeros((ph, pw))
    uv = np.zeros((ph, pw))
    uh = np.zeros((ph, pw))
    residuals = []
    for _ in range(cfg.iterations):
        rhs = htb + cfg.rho * (np.conj(sym_v) * np.fft.rfft2(zv - uv)
                               + np.conj(sym_h) * np.fft.rfft2(zh - uh))
        x = np.fft.irfft2(rhs / denom, s=(ph, pw))
        gv, gh = d_v(x), d_h(x)
        zv = soft(gv + uv, kappa)
        zh = soft(gh + uh, kappa)
        uv = uv + gv - zv
        uh = uh + gh - zh
        estimate = x[:h, :w]
        res = float(np.linalg.norm(convolve_fft(estimate, plane_psf) - b))
        if not np.isfinite(res) or res > 1e6 * res0:
            raise NumericalError(
                f"ADMM diverged: residual {res:.3e} vs initial {res0:.3e}")
        residuals.append(res)
    return AdmmResult(image=x[:h, :w], residuals=residuals)


def admm_reconstruct(b: np.ndarray, psf: Psf, cfg: AdmmConfig) -> AdmmResult:
    """Iterative baseline; returns the final iterate and the residual history."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 2:
        return _admm_plane(b, psf.channel(0), psf, cfg)
    if b.ndim == 3:
        images = []
        residuals = None
        for c in range(b.shape[2]):
            result = _admm_plane(b[:, :, c], psf.channel(c), psf, cfg)
            images.append(result.image)
            residuals = result.residuals if residuals is None else \
                [a + b2 for a, b2 in zip(residuals, result.residuals)]
        return AdmmResult(image=np.stack(images, axis=2), residuals=residuals)
    raise ValueError(f"admm_reconstruct: expected [H,W] or [H,W,C], got {b.shape}")


def crop_roi(image: np.ndarray, roi, offset=None) -> np.ndarray:
    """Central (or explicitly offset) crop to roi = (height, width)."""
    image = np.asarray(image)
    rh, rw = int(roi[0]), int(roi[1])
    h, w = image.shape[:2]
    if rh > h or rw > w:
        raise ValueError(f"crop_roi: roi {rh}x{rw} exceeds image {h}x{w}")
    if offset is None:
        oy, ox = (h - rh) // 2, (w - rw) // 2
    else:
        oy, ox = int(offset[0]), int(offset[1])
        if oy < 0 or ox < 0 or oy + rh > h or ox + rw > w:
            raise ValueError(
                f"crop_roi: offset ({oy},{ox}) + roi {rh}x{rw} exceeds image {h}x{w}")
    return image[oy:oy + rh, ox:ox + rw]
