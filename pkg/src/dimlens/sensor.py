"""Low-light measurement chain: intensity -> photons -> electrons -> digits.

The chain is photon scaling, Poisson shot noise with quantum-efficiency
scaling applied *after* the draw, additive Gaussian read noise, linear ADC,
and clamped integer quantization.  Note the QE placement: a physical sensor
thins the Poisson process (Poisson(eta*K*x)); here eta deliberately scales
the sampled counts instead, so the electron variance is eta^2 * lambda rather
than eta * lambda.

Poisson sampling uses Knuth multiplication below `poisson_crossover` and a
rounded, zero-clamped N(lambda, lambda) approximation above it; the crossover
is part of the config so captures are reproducible across runs.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class SensorParams:
    """Noise-chain constants; defaults follow the calibrated camera values."""

    photon_scale: float = 1000.0       # K, photons per unit intensity
    quantum_efficiency: float = 0.7    # eta
    read_noise_std: float = 2.63       # sigma, electrons
    adc_gain: float = 0.23             # d, digital units per electron
    adc_baseline: float = 4.48         # b_l, digital units
    bit_depth: int = 8
    poisson_crossover: float = 30.0

    def __post_init__(self):
        if self.photon_scale <= 0:
            raise ValueError(f"photon_scale must be > 0, got {self.photon_scale}")
        if not 0 < self.quantum_efficiency <= 1:
            raise ValueError(
                f"quantum_efficiency must be in (0, 1], got {self.quantum_efficiency}")
        if self.read_noise_std < 0:
            raise ValueError(f"read_noise_std must be >= 0, got {self.read_noise_std}")
        if self.adc_gain <= 0:
            raise ValueError(f"adc_gain must be > 0, got {self.adc_gain}")
        if self.adc_baseline < 0:
            raise ValueError(f"adc_baseline must be >= 0, got {self.adc_baseline}")
        if not 1 <= self.bit_depth <= 16:
            raise ValueError(f"bit_depth must be in [1, 16], got {self.bit_depth}")

    @property
    def max_digital(self) -> int:
        return (1 << self.bit_depth) - 1


def photon_flux(x: np.ndarray, params: SensorParams) -> np.ndarray:
    """Mean photon count per pixel for scene intensity x in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("photon_flux: empty scene")
    lo, hi = x.min(), x.max()
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"photon_flux: intensity out of [0, 1] (range [{lo}, {hi}])")
    return params.photon_scale * x


def capture_electrons(b_p: np.ndarray, params: SensorParams, rng: Rng) -> np.ndarray:
    """Shot-noise draw: eta * Poisson(b_p), sampled independently per pixel."""
    b_p = np.asarray(b_p, dtype=np.float64)
    if np.any(b_p < 0):
        raise ValueError("capture_electrons: negative photon mean")
    counts = rng.poisson(b_p, crossover=params.poisson_crossover)
    return params.quantum_efficiency * counts.astype(np.float64)


def add_read_noise(b_e: np.ndarray, params: SensorParams, rng: Rng) -> np.ndarray:
    b_e = np.asarray(b_e, dtype=np.float64)
    if params.read_noise_std == 0.0:
        return b_e.copy()
    return b_e + params.read_noise_std * rng.normal(b_e.shape)


def digitize(b_r: np.ndarray, params: SensorParams) -> np.ndarray:
    return params.adc_gain * np.asarray(b_r, dtype=np.float64) + params.adc_baseline


def quantize(b_a: np.ndarray, params: SensorParams) -> np.ndarray:
    """Round half away from zero, clamp to [0, 2^bits - 1]; integer-valued output."""
    b_a = np.asarray(b_a, dtype=np.float64)
    rounded = np.where(b_a >= 0, np.floor(b_a + 0.5), np.ceil(b_a - 0.5))
    return np.clip(rounded, 0, params.max_digital).astype(np.int64)


def simulate_capture(x: np.ndarray, params: SensorParams, rng: Rng) -> np.ndarray:
    """Full chain from scene intensity to quantized capture."""
    b_p = photon_flux(x, params)
    b_e = capture_electrons(b_p, params, rng)
    b_r = add_read_noise(b_e, params, rng)
    return quantize(digitize(b_r, params), params)
