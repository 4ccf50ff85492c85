"""Two-component Gaussian scenarios with tunable difficulty, plus a Monte-Carlo
total-variation-distance estimator for comparing difficulty across dimensions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset
from .model import GmmComponent, GmmParams, score

__all__ = [
    "SimulationError",
    "MixtureScenario",
    "TvdEstimate",
    "generate",
    "oracle_scores",
    "estimate_tvd",
    "isotropic_component",
]


class SimulationError(ValueError):
    """Raised for invalid scenarios or estimator inputs."""


@dataclass(frozen=True)
class MixtureScenario:
    """A two-component isotropic Gaussian mixture with one difficulty knob.

    The centers sit ``separation`` apart along a seeded random direction in
    the plane of the first two coordinates (all other coordinates zero), so
    difficulty is controlled by a single number per dimension/variance pair.
    """

    d: int
    separation: float
    variance: float
    n: int
    weights: tuple[float, float] = (0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise SimulationError("scenario dimension must be at least 2")
        if self.separation < 0:
            raise SimulationError("separation must be non-negative")
        if not self.variance > 0:
            raise SimulationError("variance must be positive")
        if self.n < 1:
            raise SimulationError("n must be at least 1")
        w = tuple(float(x) for x in self.weights)
        if len(w) != 2 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
            raise SimulationError("weights must be two non-negative numbers summing to 1")
        object.__setattr__(self, "weights", w)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "separation": self.separation,
            "variance": self.variance,
            "n": self.n,
            "weights": list(self.weights),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MixtureScenario":
        return cls(
            d=int(payload["d"]),
            separation=float(payload["separation"]),
            variance=float(payload["variance"]),
            n=int(payload["n"]),
            weights=tuple(payload.get("weights", (0.5, 0.5))),
            seed=int(payload.get("seed", 0)),
        )


def _oracle_params(scenario: MixtureScenario, rng: np.random.Generator) -> GmmParams:
    angle = rng.uniform(0.0, 2.0 * math.pi)
    direction = np.zeros(scenario.d)
    direction[0] = math.cos(angle)
    direction[1] = math.sin(angle)
    half = scenario.separation / 2.0
    cov = scenario.variance * np.eye(scenario.d)
    return GmmParams(
        (
            GmmComponent(half * direction, cov, scenario.weights[0]),
            GmmComponent(-half * direction, cov, scenario.weights[1]),
        )
    )


def generate(scenario: MixtureScenario) -> tuple[LabeledDataset, GmmParams]:
    """Draw a labeled sample from the scenario and return it with the true parameters.

    Labels follow the mixture weights; features are ``N(mean_label,
    variance * I)``.  The random direction, labels, and features all come
    from one generator seeded by ``scenario.seed``, so equal scenarios give
    identical data.
    """
    rng = np.random.default_rng(scenario.seed)
    params = _oracle_params(scenario, rng)
    labels = rng.choice(np.array([1, 2]), size=scenario.n, p=np.array(scenario.weights))
    noise = math.sqrt(scenario.variance) * rng.standard_normal((scenario.n, scenario.d))
    features = params.means[labels - 1] + noise
    return LabeledDataset(features, labels, 2), params


def oracle_scores(true_params: GmmParams, X) -> np.ndarray:
    """Log-likelihood scores under the generating parameters.

    Same contract as fitted scoring; named separately so experiments can run
    fitted-vs-true curve pairs side by side.
    """
    return score(true_params, X)


def isotropic_component(
    mean, variance: float, weight: float = 1.0
) -> GmmComponent:
    """Convenience constructor for a spherical Gaussian component."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    return GmmComponent(mean, float(variance) * np.eye(mean.shape[0]), weight)


@dataclass(frozen=True)
class TvdEstimate:
    """Monte-Carlo total variation distance with its standard error.

    ``raw_expectation`` is the sampled mean of ``|f(x)/g(x) - 1|`` under g,
    which integrates to twice the total variation distance; ``estimate`` is
    the halved value matching ``(1/2) int |f - g|``.
    """

    estimate: float
    std_error: float
    raw_expectation: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "raw_expectation": self.raw_expectation,
            "n_samples": self.n_samples,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def estimate_tvd(
    f: GmmComponent, g: GmmComponent, n_samples: int, seed: int = 0
) -> TvdEstimate:
    """Estimate the total variation distance between two Gaussian densities.

    Samples ``x ~ g`` and averages ``|f(x)/g(x) - 1|`` entirely in the log
    domain, then halves the mean so the reported quantity matches the
    integral definition.  Identical components give exactly 0.
    """
    if f.d != g.d:
        raise SimulationError(f"densities disagree on dimension ({f.d} vs {g.d})")
    if n_samples < 1:
        raise SimulationError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, g.d))
    x = g.mean + z @ g.cholesky.T
    with np.errstate(over="ignore"):
        vals = np.abs(np.expm1(f.log_density(x) - g.log_density(x)))
    raw = float(vals.mean())
    if n_samples > 1:
        raw_se = float(vals.std(ddof=1) / math.sqrt(n_samples))
    else:
        raw_se = math.nan
    return TvdEstimate(raw / 2.0, raw_se / 2.0, raw, int(n_samples))
