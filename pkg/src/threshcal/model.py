"""Supervised Gaussian mixture estimation and stable per-class log-likelihood scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.linalg import solve_triangular

from .dataset import LabeledDataset

__all__ = [
    "ModelError",
    "GmmComponent",
    "GmmParams",
    "Scorer",
    "fit_gmm",
    "score",
    "classify_map",
    "check_scores",
    "params_to_dict",
    "params_from_dict",
    "save_params",
    "load_params",
]

LOG_2PI = float(np.log(2.0 * np.pi))


class ModelError(ValueError):
    """Raised for invalid model parameters, scores, or fitting failures."""


@dataclass(frozen=True)
class GmmComponent:
    """One mixture component: mean, covariance, and mixture weight.

    The covariance must be symmetric positive-definite; its Cholesky factor
    and log-determinant are computed once at construction and reused by every
    scoring call.
    """

    mean: np.ndarray
    covariance: np.ndarray
    weight: float
    cholesky: np.ndarray = field(init=False, repr=False, compare=False)
    log_det: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ModelError(f"covariance must be {d}x{d}, got {cov.shape}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ModelError("component parameters must be finite")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ModelError("covariance is not symmetric")
        if not 0.0 <= self.weight <= 1.0:
            raise ModelError(f"weight must lie in [0, 1], got {self.weight}")
        cov = (cov + cov.T) / 2.0
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ModelError("covariance is not positive-definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "cholesky", chol)
        object.__setattr__(self, "log_det", float(2.0 * np.log(np.diag(chol)).sum()))

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def log_density(self, X: np.ndarray) -> np.ndarray:
        """Gaussian log-density of each row of X (mixture weight excluded)."""
        X = np.asarray(X, dtype=float)
        sol = solve_triangular(self.cholesky, (X - self.mean).T, lower=True)
        quad = np.einsum("ij,ij->j", sol, sol)
        return -0.5 * (self.d * LOG_2PI + self.log_det + quad)


@dataclass(frozen=True)
class GmmParams:
    """Fitted (or oracle) Gaussian mixture classifier parameters."""

    components: tuple[GmmComponent, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ModelError("mixture needs at least one component")
        d = comps[0].d
        if any(c.d != d for c in comps):
            raise ModelError("components disagree on dimension")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ModelError(f"weights must sum to 1 (got {total!r})")
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return self.components[0].d

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    def score(self, X: np.ndarray) -> np.ndarray:
        return score(self, X)


@runtime_checkable
class Scorer(Protocol):
    """Anything that turns a feature matrix into an n x k score matrix.

    Higher score means more confidence in that label; scoring must be
    deterministic given fitted state.
    """

    def score(self, X: np.ndarray) -> np.ndarray: ...


def fit_gmm(
    train: LabeledDataset,
    ridge: float = 1e-6,
    *,
    center: bool = True,
    diagonal: bool = False,
) -> GmmParams:
    """Maximum-likelihood fit of a supervised Gaussian mixture.

    Per class j: the mean is the class sample mean, the covariance is the
    centered sample covariance with denominator ``n_j - 1`` plus a
    scale-aware ridge ``ridge * trace(cov)/d`` on the diagonal, and the
    weight is the exact count fraction ``n_j / n``.

    Parameters
    ----------
    train : LabeledDataset
        Training rows; every class 1..k needs at least two rows and label 0
        must not appear.
    ridge : float
        Relative diagonal regularization.  When a class has zero spread the
        scale factor falls back to 1 so the ridge is applied absolutely.
    center : bool
        Subtract the class mean before forming the covariance.  Disable only
        for replication studies of the uncentered estimator.
    diagonal : bool
        Keep only the diagonal of each covariance before regularizing.
    """
    if ridge < 0:
        raise ModelError("ridge must be non-negative")
    labels = train.labels
    if train.n == 0:
        raise ModelError("cannot fit on an empty dataset")
    if np.any(labels == 0):
        raise ModelError("label 0 (abstain) cannot appear in training data")
    d = train.d
    comps = []
    for j in range(1, train.k + 1):
        rows = train.features[labels == j]
        n_j = rows.shape[0]
        if n_j < 2:
            raise ModelError(f"class {j} has {n_j} training rows; at least 2 required")
        mu = rows.mean(axis=0)
        y = rows - mu if center else rows
        cov = (y.T @ y) / (n_j - 1)
        if diagonal:
            cov = np.diag(np.diag(cov))
        if ridge > 0:
            scale = float(np.trace(cov)) / d
            if scale <= 0.0:
                scale = 1.0
            cov = cov + (ridge * scale) * np.eye(d)
        cov = (cov + cov.T) / 2.0
        try:
            comps.append(GmmComponent(mu, cov, n_j / train.n))
        except ModelError as exc:
            raise ModelError(f"component {j}: {exc}") from None
    return GmmParams(tuple(comps))


def score(params: GmmParams, X: np.ndarray) -> np.ndarray:
    """Per-class log-likelihood scores ``log w_j + log N(x | mean_j, cov_j)``.

    Evaluated via each component's cached Cholesky factor: the log-determinant
    comes from the factor diagonal and the quadratic form from a triangular
    solve.  A zero-weight component scores -inf for every row.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ModelError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[1] != params.d:
        raise ModelError(f"dimension mismatch: model is {params.d}-dimensional, data has {X.shape[1]} columns")
    out = np.empty((X.shape[0], params.k))
    for j, comp in enumerate(params.components):
        if comp.weight == 0.0:
            out[:, j] = -np.inf
        else:
            out[:, j] = np.log(comp.weight) + comp.log_density(X)
    return out


def check_scores(scores: np.ndarray, *, min_classes: int = 1) -> np.ndarray:
    """Validate a score matrix: 2-D, no NaN/+inf, every row has a finite max."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2:
        raise ModelError(f"score matrix must be 2-D, got shape {s.shape}")
    if s.shape[1] < min_classes:
        raise ModelError(f"need at least {min_classes} classes, got {s.shape[1]}")
    if np.isnan(s).any():
        raise ModelError("score matrix contains NaN")
    if np.isposinf(s).any():
        raise ModelError("score matrix contains +inf")
    if s.shape[0] and not np.all(np.isfinite(s.max(axis=1))):
        raise ModelError("a score row is entirely -inf")
    return s


def classify_map(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-score labels per row, with a per-row flag for tied maxima.

    Ties are broken by the lowest class index.  Returns ``(labels, ties)``
    with labels in 1..k.
    """
    s = check_scores(scores)
    labels = s.argmax(axis=1).astype(np.int64) + 1
    ties = (s == s.max(axis=1, keepdims=True)).sum(axis=1) > 1
    return labels, ties


def params_to_dict(params: GmmParams) -> dict:
    return {
        "components": [
            {
                "mean": c.mean.tolist(),
                "covariance": c.covariance.tolist(),
                "weight": c.weight,
            }
            for c in params.components
        ]
    }


def params_from_dict(payload: dict) -> GmmParams:
    try:
        comps = tuple(
            GmmComponent(np.array(c["mean"]), np.array(c["covariance"]), float(c["weight"]))
            for c in payload["components"]
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model payload: {exc}") from None
    return GmmParams(comps)


def save_params(params: GmmParams, path: str | Path) -> None:
    """Write the mixture to a JSON file (component list of mean/covariance/weight)."""
    Path(path).write_text(json.dumps(params_to_dict(params), indent=2) + "\n")


def load_params(path: str | Path) -> GmmParams:
    return params_from_dict(json.loads(Path(path).read_text()))
