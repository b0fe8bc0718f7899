"""Simulation and numerical-analysis toolkit for the weak isotropic 4-wave
kinetic equation with model interaction kernels.

The package provides three coordinated views of the same dynamics:

* a stochastic instantaneous coagulation-fragmentation particle system
  (``fourwave.particle``), simulated exactly in law by majorant thinning;
* a deterministic measure-valued solver for the kinetic equation and its
  truncated auxiliary form (``fourwave.solver``), including the Picard
  existence scheme and a positivity-preserving integrating-factor stepper;
* a validation layer (``fourwave.analysis``) that turns trajectories into
  conservation, convergence and scaling verdicts.

Everything is atomic: measures are finite lists of weighted point masses,
optionally constrained to a dyadic frequency grid on which the interaction
``omega1 + omega2 - omega3`` is closed, making the conservation laws exact.
"""

__version__ = "0.1.0"

from .kernels import Kernel, WeightFunction, parse_kernel, parse_weight
from .measures import DiscreteMeasure

__all__ = [
    "__version__",
    "Kernel",
    "WeightFunction",
    "parse_kernel",
    "parse_weight",
    "DiscreteMeasure",
]
