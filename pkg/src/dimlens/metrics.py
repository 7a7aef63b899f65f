"""Image quality metrics and report aggregation.

SSIM follows the windowed reference formulation: 11x11 Gaussian window with
sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0, statistics over the valid
region, mean over channels for color inputs.  Images smaller than the window
shrink it to the largest odd size that fits.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .imageio import load_image

PSNR_INF = float("inf")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(peak * peak / err))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kern = np.outer(g, g)
    return kern / kern.sum()


def _window_filter(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # valid-mode correlation with a small separable-size window
    kh, kw = window.shape
    h, w = img.shape
    out = np.zeros((h - kh + 1, w - kw + 1))
    for u in range(kh):
        for v in range(kw):
            out += window[u, v] * img[u:u + out.shape[0], v:v + out.shape[1]]
    return out


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         peak: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([ssim(a[:, :, c], b[:, :, c], window_size, sigma,
                                   k1, k2, peak) for c in range(a.shape[2])]))
    size = min(window_size, a.shape[0], a.shape[1])
    if size % 2 == 0:
        size -= 1
    if size < 1:
        raise ValueError(f"ssim: image {a.shape} too small")
    window = _gaussian_window(size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _window_filter(a, window)
    mu_b = _window_filter(b, window)
    var_a = _window_filter(a * a, window) - mu_a ** 2
    var_b = _window_filter(b * b, window) - mu_b ** 2
    cov = _window_filter(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    per_image: list = field(default_factory=list)
    mean_mse: float = 0.0
    mean_psnr: float = 0.0
    mean_ssim: float = 0.0
    count: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_mse": self.mean_mse,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "per_image": self.per_image,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def evaluate_arrays(pairs, config: dict | None = None) -> EvalReport:
    """pairs: iterable of (id, reference, prediction) arrays in [0, 1]."""
    rows = []
    for item_id, ref, pred in sorted(pairs, key=lambda p: str(p[0])):
        rows.append({
            "id": str(item_id),
            "mse": mse(pred, ref),
            "psnr": psnr(pred, ref),
            "ssim": ssim(pred, ref),
        })
    if not rows:
        raise DataError("evaluate: no pairs to score")
    report = EvalReport(
        per_image=rows,
        mean_mse=float(np.mean([r["mse"] for r in rows])),
        mean_psnr=float(np.mean([r["psnr"] for r in rows])),
        mean_ssim=float(np.mean([r["ssim"] for r in rows])),
        count=len(rows),
        config=dict(config or {}),
    )
    return report


def evaluate_pairs(manifest: dict, pred_dir, config: dict | None = None) -> EvalReport:
    """Score reconstructions in pred_dir against manifest ground-truth scenes."""
    pred_dir = Path(pred_dir)
    pairs = []
    for item in manifest.get("items", []):
        ref_path = Path(item["scene"])
        if not ref_path.exists():
            raise DataError(f"missing ground truth: {ref_path}")
        pred_path = None
        for suffix in (".png", ".llt1"):
            cand = pred_dir / f"{item['id']}{suffix}"
            if cand.exists():
                pred_path = cand
                break
        if pred_path is None:
            raise DataError(f"missing prediction for item {item['id']} in {pred_dir}")
        pairs.append((item["id"], load_image(ref_path), load_image(pred_path)))
    return evaluate_arrays(pairs, config)
