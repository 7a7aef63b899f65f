"""Lensless forward model: PSF convolution at sensor geometry, plus Bayer.

The measurement operator is *linear* (zero-padded) convolution, not circular:
scene and PSF are padded to (H+Hp-1, W+Wp-1), multiplied in the frequency
domain, and the result is cropped back to the sensor grid with the PSF center
pinned so a centered delta PSF is the identity.  Simulation and reconstruction
must share this convention; both sides of this package import it from here.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .llt1 import read_llt1


@dataclass
class Psf:
    """Calibrated point-spread function, unit sum per channel after load."""

    data: np.ndarray            # [H, W] or [H, W, C]
    pitch_mm: float | None = None

    @classmethod
    def from_array(cls, array: np.ndarray, pitch_mm: float | None = None) -> "Psf":
        array = np.asarray(array, dtype=np.float64)
        if array.size == 0:
            raise ValueError("Psf: empty array")
        if array.ndim not in (2, 3):
            raise ValueError(f"Psf: expected 2-d or 3-d array, got shape {array.shape}")
        if np.any(array < 0):
            raise ValueError("Psf: negative entries")
        sums = array.sum(axis=(0, 1))
        if np.any(np.atleast_1d(sums) <= 0):
            raise ValueError("Psf: zero total energy")
        return cls(data=array / sums, pitch_mm=pitch_mm)

    @classmethod
    def load(cls, path, pitch_mm: float | None = None) -> "Psf":
        path = Path(path)
        if path.suffix.lower() == ".llt1":
            return cls.from_array(read_llt1(path), pitch_mm)
        from PIL import Image
        arr = np.asarray(Image.open(path)).astype(np.float64)
        return cls.from_array(arr, pitch_mm)

    @property
    def spatial_shape(self):
        return self.data.shape[:2]

    def channel(self, c: int) -> np.ndarray:
        if self.data.ndim == 2:
            return self.data
        return self.data[:, :, min(c, self.data.shape[2] - 1)]

    def flipped(self) -> "Psf":
        return Psf(data=self.data[::-1, ::-1].copy(), pitch_mm=self.pitch_mm)


def _pad_shapes(img_shape, psf_shape):
    h, w = img_shape
    hp, wp = psf_shape
    return h + hp - 1, w + wp - 1, (hp - 1) // 2, (wp - 1) // 2


def _otf(psf_plane: np.ndarray, full: tuple) -> np.ndarray:
    hp, wp = psf_plane.shape
    padded = np.zeros(full)
    padded[:hp, :wp] = psf_plane
    return np.fft.rfft2(padded)


def _conv_plane(x: np.ndarray, psf_plane: np.ndarray) -> np.ndarray:
    h, w = x.shape
    ph, pw, oy, ox = _pad_shapes(x.shape, psf_plane.shape)
    xp = np.zeros((ph, pw))
    xp[:h, :w] = x
    full = np.fft.irfft2(np.fft.rfft2(xp) * _otf(psf_plane, (ph, pw)), s=(ph, pw))
    return full[oy:oy + h, ox:ox + w]


def _adjoint_plane(y: np.ndarray, psf_plane: np.ndarray) -> np.ndarray:
    h, w = y.shape
    ph, pw, oy, ox = _pad_shapes(y.shape, psf_plane.shape)
    emb = np.zeros((ph, pw))
    emb[oy:oy + h, ox:ox + w] = y
    full = np.fft.irfft2(np.fft.rfft2(emb) * np.conj(_otf(psf_plane, (ph, pw))), s=(ph, pw))
    return full[:h, :w]


def _per_channel(image: np.ndarray, psf: Psf, op) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return op(image, psf.channel(0))
    if image.ndim == 3:
        out = np.empty_like(image)
        for c in range(image.shape[2]):
            out[:, :, c] = op(image[:, :, c], psf.channel(c))
        return out
    raise ValueError(f"expected [H,W] or [H,W,C] image, got shape {image.shape}")


def convolve_fft(x: np.ndarray, psf: Psf) -> np.ndarray:
    """Measurement b = H x: linear convolution cropped to the sensor extent."""
    if psf.data.size == 0:
        raise ValueError("convolve_fft: empty PSF")
    return _per_channel(x, psf, _conv_plane)


def adjoint_apply(b: np.ndarray, psf: Psf) -> np.ndarray:
    """H^T b: correlation adjoint satisfying <Hx, y> == <x, H^T y>."""
    if psf.data.size == 0:
        raise ValueError("adjoint_apply: empty PSF")
    return _per_channel(b, psf, _adjoint_plane)


# ---------------------------------------------------------------------------
# Bayer mosaic (RGGB)


@dataclass
class BayerMosaic:
    """Four half-resolution planes in (R, Gr, B, Gb) order."""

    planes: np.ndarray          # [4, H/2, W/2]
    height: int
    width: int

    def __post_init__(self):
        if self.planes.shape != (4, self.height // 2, self.width // 2):
            raise ValueError(
                f"BayerMosaic: planes {self.planes.shape} inconsistent with "
                f"mosaic {self.height}x{self.width}")


def mosaic(rgb: np.ndarray) -> BayerMosaic:
    """Sample an RGB image onto an RGGB grid: rows (R G), (Gb B)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"mosaic: expected [H,W,3], got shape {rgb.shape}")
    h, w = rgb.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic: dims must be even, got {h}x{w}")
    planes = np.stack([
        rgb[0::2, 0::2, 0],   # R
        rgb[0::2, 1::2, 1],   # Gr
        rgb[1::2, 1::2, 2],   # B
        rgb[1::2, 0::2, 1],   # Gb
    ])
    return BayerMosaic(planes=planes, height=h, width=w)


_KERN_G = np.array([[0., 1., 0.], [1., 4., 1.], [0., 1., 0.]]) / 4.0
_KERN_RB = np.array([[1., 2., 1.], [2., 4., 2.], [1., 2., 1.]]) / 4.0


def _conv3(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1)
    out = np.zeros_like(img)
    for u in range(3):
        for v in range(3):
            if kern[u, v]:
                out += kern[u, v] * padded[u:u + img.shape[0], v:v + img.shape[1]]
    return out


def demosaic(m: BayerMosaic) -> np.ndarray:
    """Bilinear interpolation of the missing sites, edges renormalized."""
    h, w = m.height, m.width
    grid = np.zeros((h, w))
    rgb = np.empty((h, w, 3))
    site_masks = {
        0: (slice(0, None, 2), slice(0, None, 2)),   # R
        1: (slice(0, None, 2), slice(1, None, 2)),   # Gr
        2: (slice(1, None, 2), slice(1, None, 2)),   # B
        3: (slice(1, None, 2), slice(0, None, 2)),   # Gb
    }
    for channel, plane_ids, kern in ((0, (0,), _KERN_RB),
                                     (1, (1, 3), _KERN_G),
                                     (2, (2,), _KERN_RB)):
        values = grid.copy()
        mask = grid.copy()
        for pid in plane_ids:
            sl = site_masks[pid]
            values[sl] = m.planes[pid]
            mask[sl] = 1.0
        rgb[:, :, channel] = _conv3(values, kern) / _conv3(mask, kern)
    return rgb
