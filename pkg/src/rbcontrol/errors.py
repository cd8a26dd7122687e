"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: configuration problems
exit with 2, non-convergence with 3, numerical failures with 4.
"""


class ConfigError(ValueError):
    """Invalid mesh, run, or grid configuration."""


class ParameterDomainError(ValueError):
    """Parameter vector lies outside its admissible box."""


class FullSolveError(RuntimeError):
    """Full-order KKT solve failed (singular factorization or bad residual)."""


class ReducedSolveError(RuntimeError):
    """Reduced system is numerically singular for this parameter.

    This is an observable outcome for unstabilized bases, not a bug;
    callers such as the greedy loop treat it as an infinite error
    indicator rather than aborting.
    """


class EigenSolveError(RuntimeError):
    """Dense (generalized) eigenvalue computation failed."""


class FingerprintError(RuntimeError):
    """Serialized artifact was built on a different discretization."""
