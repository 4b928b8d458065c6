"""Exception types raised by the numerical routines."""


class IndexFormsError(Exception):
    """Base class for all library errors."""


class KernelGapError(IndexFormsError):
    """An operator expected to be invertible has an eigenvalue inside the gap tolerance."""


class FitDivergenceError(IndexFormsError):
    """A least-squares asymptotic fit exceeded its residual or conditioning budget."""


class MethodsDisagreeError(IndexFormsError):
    """Two independent evaluation routes returned incompatible results."""


class NotRelativelySmoothingError(IndexFormsError):
    """A projection difference fails the high-mode decay test."""


class RankJumpError(IndexFormsError):
    """The kernel dimension of a family changes across the base."""


class ExtrapolationError(IndexFormsError):
    """An observed convergence rate is too far from the expected one."""


class DegenerateBCError(IndexFormsError):
    """A boundary condition is too close to a non-Fredholm one."""


class IdentityViolationError(IndexFormsError):
    """An exact integer identity failed."""


class RootFinderStallError(IndexFormsError):
    """Eigenvalue root finding did not converge or missed roots."""


class CutoffError(IndexFormsError):
    """A spectral truncation does not meet the requested tail bound."""


class ConfigError(IndexFormsError):
    """An experiment configuration is invalid."""
