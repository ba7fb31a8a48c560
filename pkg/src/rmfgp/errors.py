"""Exception hierarchy shared by every rmfgp module."""


class RmfgpError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(RmfgpError, ValueError):
    pass


class NonFiniteValue(RmfgpError, ValueError):
    pass


class SingularCovariance(RmfgpError, ValueError):
    pass


class NotPositiveDefinite(RmfgpError, ValueError):
    pass


class OptimizerFailure(RmfgpError, RuntimeError):
    pass


class NotNested(RmfgpError, ValueError):
    pass


class TooFewPoints(RmfgpError, ValueError):
    pass


class TooFewDistinct(RmfgpError, ValueError):
    pass


class SliceTooSmall(RmfgpError, ValueError):
    pass


class InvalidEigenvalue(RmfgpError, ValueError):
    pass


class RankDeficient(RmfgpError, ValueError):
    pass


class EmptyPool(RmfgpError, ValueError):
    pass


class NotOrthogonal(RmfgpError, ValueError):
    pass


class DimensionOrder(RmfgpError, ValueError):
    """Raised when the reduced dimension does not satisfy d < s < p."""


class NonPositiveCoefficient(RmfgpError, ValueError):
    pass


class ZeroNorm(RmfgpError, ValueError):
    pass


class ConfigError(RmfgpError, ValueError):
    """Experiment configuration failed schema or consistency validation."""
