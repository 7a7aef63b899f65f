"""dimlens: low-light lensless imaging simulation and two-stage reconstruction.

Modules: `sensor` (noise chain), `optics` (forward model), `recon1`
(Wiener/ADMM stage 1), `wavelet` (Haar subbands), `diffusion` (conditional
DDPM/implicit sampling + training), `enhance` (stage-2 assembly and losses),
`metrics`, `datasetgen`, `pipeline`, `cli`.  Hot kernels run through numba
when available; set DIMLENS_DISABLE_NUMBA=1 for the pure-numpy fallback.
"""

from .backend import active_backend

__version__ = "0.1.0"
__all__ = ["active_backend", "__version__"]
