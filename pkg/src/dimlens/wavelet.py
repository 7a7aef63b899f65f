"""Orthonormal 2D Haar analysis/synthesis with multi-level recursion.

Per 2x2 block [a, b; c, d]:

    LL = (a+b+c+d)/2   LH = (a+b-c-d)/2   HL = (a-b+c-d)/2   HH = (a-b-c+d)/2

The 1/2 normalization makes the transform orthonormal, so energy is preserved
exactly (Parseval) and reconstruction is the transposed arithmetic.  Works on
[H,W] and [H,W,C] arrays; odd extents are symmetric-padded by one row/column
and the pad flags travel with the subbands so synthesis can crop back.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .llt1 import read_llt1, write_llt1


@dataclass
class SubbandSet:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    level: int = 1
    pad: tuple = (0, 0)

    def bands(self):
        return self.ll, self.lh, self.hl, self.hh

    def energy(self) -> float:
        return float(sum(np.sum(b * b) for b in self.bands()))


def dwt2(x: np.ndarray, level: int = 1) -> SubbandSet:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("dwt2: empty input")
    pad_h, pad_w = x.shape[0] % 2, x.shape[1] % 2
    if pad_h or pad_w:
        widths = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (x.ndim - 2)
        x = np.pad(x, widths, mode="symmetric")
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    return SubbandSet(
        ll=(a + b + c + d) / 2.0,
        lh=(a + b - c - d) / 2.0,
        hl=(a - b + c - d) / 2.0,
        hh=(a - b - c + d) / 2.0,
        level=level,
        pad=(pad_h, pad_w),
    )


def idwt2(s: SubbandSet) -> np.ndarray:
    shapes = {band.shape for band in s.bands()}
    if len(shapes) != 1:
        raise ValueError(f"idwt2: subband shapes disagree: {sorted(shapes)}")
    ll, lh, hl, hh = s.bands()
    h2, w2 = ll.shape[0], ll.shape[1]
    out = np.empty((2 * h2, 2 * w2) + ll.shape[2:], dtype=np.float64)
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    pad_h, pad_w = s.pad
    if pad_h:
        out = out[:-1]
    if pad_w:
        out = out[:, :-1]
    return out


def dwt2_multi(x: np.ndarray, levels: int = 2) -> list:
    """Recursive analysis on LL; element k holds the level-(k+1) subbands."""
    if levels < 1:
        raise ValueError(f"dwt2_multi: levels must be >= 1, got {levels}")
    pyramid = []
    current = np.asarray(x, dtype=np.float64)
    for lvl in range(1, levels + 1):
        bands = dwt2(current, level=lvl)
        pyramid.append(bands)
        current = bands.ll
    return pyramid


def idwt2_multi(pyramid: list) -> np.ndarray:
    """Exact inverse of dwt2_multi (deepest LL folded back up)."""
    if not pyramid:
        raise ValueError("idwt2_multi: empty pyramid")
    current = None
    for bands in reversed(pyramid):
        if current is not None:
            bands = SubbandSet(ll=current, lh=bands.lh, hl=bands.hl,
                               hh=bands.hh, level=bands.level, pad=bands.pad)
        current = idwt2(bands)
    return current


def save_subbands(s: SubbandSet, stem) -> None:
    """LLT1 per band plus a JSON sidecar with level/pad metadata."""
    stem = Path(stem)
    for name, band in zip(("ll", "lh", "hl", "hh"), s.bands()):
        write_llt1(stem.with_suffix(f".{name}.llt1"), band)
    meta = {"level": s.level, "pad": list(s.pad)}
    stem.with_suffix(".meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_subbands(stem) -> SubbandSet:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".meta.json").read_text())
    bands = [read_llt1(stem.with_suffix(f".{name}.llt1"))
             for name in ("ll", "lh", "hl", "hh")]
    return SubbandSet(*bands, level=int(meta["level"]), pad=tuple(meta["pad"]))
