"""Stochastic beta-plane equation in the large-beta limit: resonances, effective dynamics,
SDE ensembles and action-law statistics."""

__version__ = "0.1.0"

from .lattice import (  # noqa: E402
    ActionSample,
    Lattice,
    ModelParams,
    NoiseSpec,
    SpectralState,
    WaveVector,
    actions_of,
    damping,
    dispersion,
    sobolev_norm,
)
