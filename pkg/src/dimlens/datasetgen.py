"""Paired low-light lensless dataset synthesis.

Ground-truth scenes are darkened by a linear exposure factor, pushed through
the optical forward model, then through the sensor noise chain (noise
injection is explicit and can be disabled per run, in which case the chain
collapses to its expectation).  Every item records its derived seed so any
measurement regenerates bit-exactly from (scene, seed, params).

Exposure is modeled as a multiplicative factor on the photon budget:
an exposure time t maps to the scale t / exposure_ref.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .imageio import load_image, save_png_raw
from .llt1 import write_llt1
from .optics import Psf, convolve_fft
from .rng import Rng
from .sensor import SensorParams, digitize, photon_flux, quantize, simulate_capture

EXPOSURE_REF = 0.7


@dataclass
class DatasetManifest:
    version: int = 1
    items: list = field(default_factory=list)
    sensor: dict = field(default_factory=dict)
    psf_path: str = ""

    def to_json(self) -> str:
        payload = {"version": self.version, "items": self.items,
                   "sensor": self.sensor, "psf": self.psf_path}
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(version=raw["version"], items=raw["items"],
                   sensor=raw["sensor"], psf_path=raw["psf"])

    def validate(self, base: Path | None = None) -> None:
        ids = [item["id"] for item in self.items]
        if len(set(ids)) != len(ids):
            raise DataError("manifest ids are not unique")
        for item in self.items:
            for key in ("scene", "measurement"):
                path = Path(item[key])
                if base is not None and not path.is_absolute():
                    path = base / path
                if not path.exists():
                    raise DataError(f"manifest references missing file {path}")


def darken(scene: np.ndarray, factor: float) -> np.ndarray:
    """Linear exposure scaling; factor in (0, 1]."""
    if not 0.0 < factor <= 1.0:
        raise ValueError(f"darken: factor must be in (0, 1], got {factor}")
    return np.asarray(scene, dtype=np.float64) * factor


def exposure_factor(exposure_time: float, reference: float = EXPOSURE_REF) -> float:
    return float(exposure_time) / float(reference)


def synthesize_pair(scene: np.ndarray, psf: Psf, params: SensorParams,
                    exposure: float, seed: int, add_noise: bool = True):
    """One (measurement, record) pair; bit-reproducible from the record."""
    factor = exposure_factor(exposure)
    dark = darken(scene, factor)
    optical = np.clip(convolve_fft(dark, psf), 0.0, 1.0)
    if add_noise:
        measurement = simulate_capture(optical, params, Rng(seed))
    else:
        electrons = params.quantum_efficiency * photon_flux(optical, params)
        measurement = quantize(digitize(electrons, params), params)
    record = {
        "exposure": float(exposure),
        "exposure_factor": factor,
        "seed": int(seed),
        "noise": bool(add_noise),
    }
    return measurement, record


def _split_hash(item_id: str) -> int:
    return int.from_bytes(hashlib.sha256(item_id.encode()).digest()[:8], "big")


def split_ids(ids, train_ratio: int, test_ratio: int):
    """Deterministic split by sorted-id hash, exact by proportion."""
    ids = sorted(ids)
    n_test = len(ids) * test_ratio // (train_ratio + test_ratio)
    ordered = sorted(ids, key=lambda i: (_split_hash(i), i))
    test = set(ordered[:n_test])
    return [i for i in ids if i not in test], [i for i in ids if i in test]


def build_dataset(src_dir, out_dir, psf: Psf, params: SensorParams,
                  exposure: float = EXPOSURE_REF, seed: int = 42,
                  split=(9, 1), add_noise: bool = True,
                  psf_path: str = "") -> DatasetManifest:
    """Synthesize measurements for every scene image in src_dir."""
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    scene_files = sorted(p for p in src_dir.iterdir()
                         if p.suffix.lower() in (".png", ".llt1"))
    if not scene_files:
        raise DataError(f"no scene images (.png/.llt1) in {src_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "measurements").mkdir(exist_ok=True)
    (out_dir / "scenes").mkdir(exist_ok=True)

    master = Rng(seed)
    train_ids, test_ids = split_ids([p.stem for p in scene_files], *split)
    split_of = {i: "train" for i in train_ids}
    split_of.update({i: "test" for i in test_ids})

    manifest = DatasetManifest(sensor=sensor_dict(params), psf_path=str(psf_path))
    for index, path in enumerate(scene_files):
        scene = np.clip(load_image(path), 0.0, 1.0)
        item_seed = master.derive_seed(index)
        measurement, record = synthesize_pair(scene, psf, params, exposure,
                                              item_seed, add_noise)
        scene_out = out_dir / "scenes" / f"{path.stem}.llt1"
        meas_out = out_dir / "measurements" / f"{path.stem}.png"
        write_llt1(scene_out, scene)
        save_png_raw(meas_out, measurement, params.bit_depth)
        record.update({
            "id": path.stem,
            "scene": str(scene_out),
            "measurement": str(meas_out),
            "split": split_of[path.stem],
        })
        manifest.items.append(record)
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def sensor_dict(params: SensorParams) -> dict:
    return {
        "k": params.photon_scale,
        "qe": params.quantum_efficiency,
        "read_std": params.read_noise_std,
        "adu": params.adc_gain,
        "baseline": params.adc_baseline,
        "bits": params.bit_depth,
        "poisson_crossover": params.poisson_crossover,
    }


def sensor_from_dict(raw: dict) -> SensorParams:
    return SensorParams(
        photon_scale=raw.get("k", 1000.0),
        quantum_efficiency=raw.get("qe", 0.7),
        read_noise_std=raw.get("read_std", 2.63),
        adc_gain=raw.get("adu", 0.23),
        adc_baseline=raw.get("baseline", 4.48),
        bit_depth=int(raw.get("bits", 8)),
        poisson_crossover=raw.get("poisson_crossover", 30.0),
    )


def build_toy_dataset(out_dir, n_train: int = 200, n_test: int = 20,
                      size: int = 16, exposures=(0.3, 0.5, 0.7),
                      seed: int = 123, psf: Psf = None,
                      params: SensorParams = None) -> DatasetManifest:
    """Toy corpus: every scene captured at every exposure, split by scene."""
    out_dir = Path(out_dir)
    (out_dir / "scenes").mkdir(parents=True, exist_ok=True)
    (out_dir / "measurements").mkdir(exist_ok=True)
    psf = psf or make_toy_psf()
    params = params or SensorParams()
    psf_path = out_dir / "psf.llt1"
    write_llt1(psf_path, psf.data)

    scenes = make_toy_scenes(n_train + n_test, size=size, seed=seed)
    master = Rng(seed)
    manifest = DatasetManifest(sensor=sensor_dict(params), psf_path=str(psf_path))
    for i, scene in enumerate(scenes):
        split = "train" if i < n_train else "test"
        scene_path = out_dir / "scenes" / f"scene{i:04d}.llt1"
        write_llt1(scene_path, scene)
        for expo in exposures:
            item_id = f"scene{i:04d}_e{int(round(expo * 100)):03d}"
            item_seed = master.derive_seed(i * 1009 + int(round(expo * 100)))
            measurement, record = synthesize_pair(scene, psf, params, expo,
                                                  item_seed)
            meas_path = out_dir / "measurements" / f"{item_id}.png"
            save_png_raw(meas_path, measurement, params.bit_depth)
            record.update({"id": item_id, "scene": str(scene_path),
                           "measurement": str(meas_path), "split": split})
            manifest.items.append(record)
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


# ---------------------------------------------------------------------------
# toy corpus


def make_toy_scenes(count: int, size: int = 16, seed: int = 0) -> list:
    """Linear-gradient + Gaussian-blob color scenes in [0, 1]."""
    rng = Rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    scenes = []
    for _ in range(count):
        scene = np.zeros((size, size, 3))
        for c in range(3):
            gx, gy = rng.uniform(2) * 2.0 - 1.0
            offset = 0.35 + 0.3 * float(rng.uniform(1)[0])
            scene[:, :, c] = offset + 0.3 * (gx * xx + gy * yy)
        n_blobs = 1 + int(rng.uniform(1)[0] * 3)
        for _ in range(n_blobs):
            cy, cx = rng.uniform(2)
            sig = 0.08 + 0.15 * float(rng.uniform(1)[0])
            amp = (rng.uniform(3) * 0.8 - 0.25)
            bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))
            scene += amp[None, None, :] * bump[:, :, None]
        scenes.append(np.clip(scene, 0.0, 1.0))
    return scenes


def make_toy_psf(size: int = 7, seed: int = 5) -> Psf:
    """Small random-mask PSF smoothed enough to keep the OTF well conditioned."""
    rng = Rng(seed)
    mask = (rng.uniform((size, size)) > 0.5).astype(np.float64)
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    taper = np.exp(-(yy ** 2 + xx ** 2) / (2.0 * (size / 3.5) ** 2))
    base = np.exp(-(yy ** 2 + xx ** 2) / (2.0 * 1.1 ** 2))
    return Psf.from_array(0.6 * base + 0.4 * mask * taper)
