"""tetherplan: risk-aware trajectory optimization and simulation for a
winch-tethered underwater vehicle suspended from a surface vessel.

The planar plant couples a submerged vehicle (polar coordinates around the
surface-vessel anchor) to the vessel itself through a taut tether whose paid
length tracks the polar radius. Planning happens over sampled plant/obstacle
uncertainty with a CVaR collision constraint, optionally wrapping each sample
in a PD correction toward a shared nominal trajectory.
"""

__version__ = "0.1.0"

from . import model
from . import control
from . import stochastic
from . import optimizer
from . import baselines
from . import evaluation
from . import config

__all__ = [
    "model",
    "control",
    "stochastic",
    "optimizer",
    "baselines",
    "evaluation",
    "config",
    "__version__",
]
