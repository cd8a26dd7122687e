"""Benchmark problems, parameter boxes, and parameter vectors."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ParameterDomainError


class Problem(str, Enum):
    """The two benchmark control problems."""

    DIFFUSION = "diffusion"
    GRAETZ = "graetz"


class Formulation(str, Enum):
    GALERKIN = "galerkin"
    PETROV_GALERKIN = "petrov-galerkin"


class BasisKind(str, Enum):
    NAIVE = "naive"
    SUPREMIZER = "supremizer"
    AGGREGATION = "aggregation"


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned admissible parameter region."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        if len(self.lows) != len(self.highs):
            raise ConfigError("parameter box bounds have mismatched lengths")
        if any(lo >= hi for lo, hi in zip(self.lows, self.highs)):
            raise ConfigError("parameter box has empty sides")

    @property
    def dim(self):
        return len(self.lows)

    def contains(self, values) -> bool:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.dim,):
            return False
        return bool(
            np.all(values >= np.asarray(self.lows))
            and np.all(values <= np.asarray(self.highs))
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n points, i.i.d. uniform per coordinate."""
        return rng.uniform(self.lows, self.highs, size=(n, self.dim))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lows) + np.asarray(self.highs))


def parameter_box(problem: Problem, n_subdomains: int) -> ParameterBox:
    """Admissible box for a benchmark problem.

    Diffusion: one diffusivity per horizontal strip, each in [0.01, 1].
    Graetz: (diffusivity, target value on lower strip, target value on
    upper strip) in [1/20, 1/3] x [0.5, 1.5] x [1.5, 2.5].
    """
    if problem is Problem.DIFFUSION:
        return ParameterBox((0.01,) * n_subdomains, (1.0,) * n_subdomains)
    return ParameterBox((1.0 / 20.0, 0.5, 1.5), (1.0 / 3.0, 1.5, 2.5))


@dataclass(frozen=True)
class ParameterVector:
    """A parameter point checked against its box on construction."""

    values: np.ndarray
    box: ParameterBox

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.box.contains(values):
            raise ParameterDomainError(
                f"parameter {values.tolist()} outside box "
                f"{list(self.box.lows)}..{list(self.box.highs)}"
            )

    @property
    def dim(self):
        return self.values.shape[0]

    def __iter__(self):
        return iter(self.values)
