"""Exception types shared across the package."""


class BranchLabError(Exception):
    """Base class for all branchlab errors."""


class EmptyMeasure(BranchLabError):
    """A measure was built from, or reduced to, an empty atom/block list."""


class InvalidMass(BranchLabError):
    """A nonpositive mass was supplied."""


class InvalidScale(BranchLabError):
    """A mollification scale outside (0, 1/2) was supplied."""


class OverlappingBlocks(BranchLabError):
    """Block intervals overlap on the torus."""


class NotCentered(BranchLabError):
    """A spectral operation requires a centered measure (zero mean coefficient)."""


class TruncationMismatch(BranchLabError):
    """Two spectra with different truncation orders were combined."""


class InfiniteNorm(BranchLabError):
    """A norm that must be finite for the requested operation diverges."""


class UnbalancedMeasures(BranchLabError):
    """Transport between measures of different total mass was requested."""


class NotMonotone(BranchLabError):
    """A plan or pattern required to be order-preserving is not."""


class TimeOutOfRange(BranchLabError):
    """A slice or restriction time lies outside the pattern's time interval."""


class NodeNotFound(BranchLabError):
    """An unknown node id was referenced."""


class DivergentBoundaryNorm(BranchLabError):
    """Atomic boundary penalty requested at an exponent where it diverges."""


class InvalidDelta(BranchLabError):
    """Dyadic refinement ratio outside the (1/4, 1/2) convergence window."""


class NoSeeds(BranchLabError):
    """Optimization started without any seed construction."""


class OutOfValidity(BranchLabError):
    """An exponent formula was evaluated outside its validity window."""


class StaleInput(BranchLabError):
    """An experiment step received an unconverged or otherwise stale input."""


class ConfigError(BranchLabError):
    """Experiment configuration could not be parsed or validated."""
