"""branchlab: numerical lab for 1D branched transport with weak boundary penalty."""

__version__ = "0.1.0"

from . import errors
from .measures import (
    AtomicMeasure,
    BlockMeasure,
    MollifiedMeasure,
    ball_mass,
    canonicalize,
    canonicalize_blocks,
    lebesgue,
    mollify_eval,
    pushforward,
)

__all__ = [
    "__version__",
    "errors",
    "AtomicMeasure",
    "BlockMeasure",
    "MollifiedMeasure",
    "ball_mass",
    "canonicalize",
    "canonicalize_blocks",
    "lebesgue",
    "mollify_eval",
    "pushforward",
]
