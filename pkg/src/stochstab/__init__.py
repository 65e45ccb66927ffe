"""Random perturbations of non-uniformly expanding interval maps.

Subpackages are plain modules: :mod:`maps` (the map models), :mod:`noise`
(perturbation kernels), :mod:`deterministic`, :mod:`orbits`,
:mod:`stationary`, :mod:`inducing`, :mod:`estimators` and :mod:`cli`.
"""

__version__ = "0.1.0"

from .maps import (DomainError, Logistic, MapModel, OffsetLogistic, PowerUnimodal,
                   ScaleError, Tent, chebyshev, map_from_dict)
from .noise import NoiseModel, TransitionKernel, ValidityError, check_regularity

__all__ = [
    "DomainError", "Logistic", "MapModel", "NoiseModel", "OffsetLogistic", "PowerUnimodal",
    "ScaleError", "Tent", "TransitionKernel", "ValidityError", "check_regularity",
    "chebyshev", "map_from_dict", "__version__",
]
