"""Threshold sweeps on the top-two score gap: metric curves, selection, application.

The calibration layer is classifier-agnostic: it consumes an n x k score
matrix (higher = more confident), abstains on points whose top-two score gap
falls below a threshold t, and traces two metric families along a grid of
thresholds — misclassification proportion (mcp) with probability of
assignment (pa), and, for the softmax formulation with scale ``s = 1/t``,
multinomial loss (mcl) with average entropy (ae).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import check_scores

__all__ = [
    "CalibrationError",
    "CalibrationCurve",
    "CurveRecord",
    "ThresholdSelection",
    "AssignmentResult",
    "top_two_gap",
    "map_labels_and_gaps",
    "build_grid",
    "sweep",
    "evaluate_at",
    "softmax_probs",
    "softmax_log_probs",
    "mcl",
    "average_entropy",
    "select_threshold",
    "apply_threshold",
]

DEFAULT_EPSILON = 1e-12


class CalibrationError(ValueError):
    """Raised for invalid thresholds, grids, or metric inputs."""


# ---------------------------------------------------------------------------
# gaps and grids


def top_two_gap(score_row) -> tuple[int, float]:
    """Winning class (1-based) and the gap between the two highest scores.

    The gap is computed over the multiset of scores, so duplicated maxima give
    gap 0; a finite maximum over a -inf runner-up gives gap +inf.
    """
    row = np.asarray(score_row, dtype=float).reshape(-1)
    if row.shape[0] < 2:
        raise CalibrationError("top_two_gap needs at least two classes")
    check_scores(row[None, :], min_classes=2)
    j = int(row.argmax())
    second = np.partition(row, -2)[-2]
    return j + 1, float(row[j] - second)


def map_labels_and_gaps(scores) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized argmax labels (1-based) and top-two gaps for every row."""
    s = check_scores(scores, min_classes=2)
    labels = s.argmax(axis=1).astype(np.int64) + 1
    if s.shape[0] == 0:
        return labels, np.empty(0)
    k = s.shape[1]
    part = np.partition(s, (k - 2, k - 1), axis=1)
    gaps = part[:, k - 1] - part[:, k - 2]
    return labels, gaps


def build_grid(scores, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Threshold grid enumerated from the distinct gaps of a score matrix.

    Returns the strictly increasing array ``{epsilon} U {finite gaps >= epsilon}
    U {+inf}``: epsilon is the laxest setting (every point with a real gap is
    assigned; exact ties stay out), +inf the strictest (nothing assigned).
    Each interior value is a gap at which some point leaves the assigned set.
    """
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise CalibrationError("epsilon must be a positive finite real")
    _, gaps = map_labels_and_gaps(scores)
    finite = np.unique(gaps[np.isfinite(gaps)])
    finite = finite[finite > epsilon]
    return np.concatenate(([epsilon], finite, [np.inf]))


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float).reshape(-1)
    if g.shape[0] < 2:
        raise CalibrationError("grid needs at least 2 thresholds")
    if np.isnan(g).any() or g[0] < 0 or not np.isinf(g[-1]):
        raise CalibrationError("grid must be non-negative with last entry +inf")
    if np.any(np.diff(g) <= 0):
        raise CalibrationError("grid must be strictly increasing")
    return g


def _check_truth(truth, n: int, k: int) -> np.ndarray:
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    if t.shape[0] != n:
        raise CalibrationError(f"expected {n} true labels, got {t.shape[0]}")
    if t.size and (t.min() < 1 or t.max() > k):
        raise CalibrationError(f"true labels must lie in 1..{k} (0 never labels truth)")
    return t


def _assigned_mask(gaps: np.ndarray, t: float) -> np.ndarray:
    # t = +inf assigns nothing, by construction of the grid; for finite t the
    # rule is gap >= t so a point sitting exactly on a grid value stays in.
    if np.isinf(t):
        return np.zeros(gaps.shape[0], dtype=bool)
    return gaps >= t


# ---------------------------------------------------------------------------
# softmax formulation


def softmax_log_probs(scores, t: float) -> np.ndarray:
    """Log of the softmax threshold probabilities at scale ``s = 1/t``.

    Computed in the log domain with the row max subtracted before
    exponentiation, so extreme scores neither overflow nor lose the
    normalization.  ``t = +inf`` (s = 0) gives the uniform distribution.
    """
    s = check_scores(scores)
    if not t > 0:
        raise CalibrationError(f"threshold must be positive, got {t}")
    if np.isinf(t):
        return np.full(s.shape, -math.log(s.shape[1]))
    z = s / t
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    return z - lse


def softmax_probs(score_row, t: float) -> np.ndarray:
    """Softmax threshold probabilities for one score row or a whole matrix."""
    row = np.asarray(score_row, dtype=float)
    squeeze = row.ndim == 1
    logp = softmax_log_probs(row[None, :] if squeeze else row, t)
    p = np.exp(logp)
    return p[0] if squeeze else p


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 2:
        raise CalibrationError(f"probabilities must be 2-D, got shape {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or np.isnan(p).any():
        raise CalibrationError("probabilities must lie in [0, 1]")
    return p


def mcl(probs, truth) -> float:
    """Multinomial classification loss: minus the summed log true-class probability."""
    p = _check_probs(probs)
    t = _check_truth(truth, p.shape[0], p.shape[1])
    with np.errstate(divide="ignore"):
        logs = np.log(p[np.arange(p.shape[0]), t - 1])
    return float(-logs.sum())


def _entropy_rows(logp: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    safe = np.where(np.isfinite(logp), logp, 0.0)  # 0 log 0 = 0
    return -(p * safe).sum(axis=1)


def average_entropy(probs, *, unweighted: bool = False) -> float:
    """Mean per-point Shannon entropy of the probability rows.

    Rows must sum to 1.  The value lies in [0, log k] and attains log k at the
    uniform distribution.  ``unweighted=True`` instead computes
    ``-sum(log p)/n``, the unweighted variant, for comparison studies.
    """
    p = _check_probs(probs)
    if p.shape[0] == 0:
        raise CalibrationError("need at least one probability row")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-8):
        raise CalibrationError("probability rows must sum to 1")
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    if unweighted:
        return float(-logp.sum() / p.shape[0])
    return float(_entropy_rows(logp).mean())


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class CurveRecord:
    """One calibration-curve row: the metrics at a single threshold."""

    t: float
    mcp: float
    pa: float
    n_assigned: int
    mcl: float
    ae: float

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "mcp": self.mcp,
            "pa": self.pa,
            "n_assigned": self.n_assigned,
            "mcl": self.mcl,
            "ae": self.ae,
        }


@dataclass(frozen=True)
class CalibrationCurve:
    """Per-threshold metric vectors traced over a grid.

    ``mcp`` is defined as 0 when nothing is assigned (a vacuous record,
    detectable via ``n_assigned == 0``).  ``pa`` equals ``n_assigned / n``
    exactly; it is non-increasing and ``ae`` non-decreasing along the grid.
    """

    thresholds: np.ndarray
    mcp: np.ndarray
    pa: np.ndarray
    n_assigned: np.ndarray
    mcl: np.ndarray
    ae: np.ndarray
    n: int

    def __post_init__(self):
        g = _check_grid(self.thresholds)
        m = g.shape[0]
        arrays = {}
        for name in ("mcp", "pa", "mcl", "ae"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if a.shape[0] != m:
                raise CalibrationError(f"{name} must have {m} entries")
            arrays[name] = a
        counts = np.asarray(self.n_assigned, dtype=np.int64).reshape(-1)
        if counts.shape[0] != m:
            raise CalibrationError(f"n_assigned must have {m} entries")
        if self.n < 1:
            raise CalibrationError("curve needs n >= 1")
        if not np.array_equal(arrays["pa"], counts / self.n):
            raise CalibrationError("pa must equal n_assigned / n exactly")
        if np.any(np.diff(arrays["pa"]) > 0):
            raise CalibrationError("pa must be non-increasing along the grid")
        if np.any(np.diff(arrays["ae"]) < -1e-12):
            raise CalibrationError("ae must be non-decreasing along the grid")
        object.__setattr__(self, "thresholds", g)
        object.__setattr__(self, "n_assigned", counts)
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.thresholds.shape[0]

    def record(self, i: int) -> CurveRecord:
        return CurveRecord(
            t=float(self.thresholds[i]),
            mcp=float(self.mcp[i]),
            pa=float(self.pa[i]),
            n_assigned=int(self.n_assigned[i]),
            mcl=float(self.mcl[i]),
            ae=float(self.ae[i]),
        )

    def to_csv(self, path: str | Path) -> None:
        """Write ``t,mcp,pa,n_assigned,mcl,ae`` rows; infinities render as ``inf``."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mcp", "pa", "n_assigned", "mcl", "ae"])
            for i in range(len(self)):
                r = self.record(i)
                writer.writerow(
                    [format(r.t, ".17g"), format(r.mcp, ".17g"), format(r.pa, ".17g"),
                     str(r.n_assigned), format(r.mcl, ".17g"), format(r.ae, ".17g")]
                )

    @classmethod
    def from_csv(cls, path: str | Path, n: int) -> "CalibrationCurve":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            thresholds=np.array([float(r["t"]) for r in rows]),
            mcp=np.array([float(r["mcp"]) for r in rows]),
            pa=np.array([float(r["pa"]) for r in rows]),
            n_assigned=np.array([int(r["n_assigned"]) for r in rows]),
            mcl=np.array([float(r["mcl"]) for r in rows]),
            ae=np.array([float(r["ae"]) for r in rows]),
            n=n,
        )


def evaluate_at(scores, truth, t: float) -> CurveRecord:
    """All four metrics of a scored, labeled set at one threshold.

    This is the single-threshold form of :func:`sweep`, used to report what a
    previously selected threshold achieves on fresh data.
    """
    t = float(t)
    if math.isnan(t) or t <= 0:
        raise CalibrationError(f"threshold must be positive or +inf, got {t}")
    s = check_scores(scores, min_classes=2)
    n = s.shape[0]
    if n < 1:
        raise CalibrationError("need at least one scored point")
    labels, gaps = map_labels_and_gaps(s)
    truth_arr = _check_truth(truth, n, s.shape[1])
    assigned = _assigned_mask(gaps, t)
    n_assigned = int(assigned.sum())
    bad = int(((labels != truth_arr) & assigned).sum())
    logp = softmax_log_probs(s, t)
    return CurveRecord(
        t=t,
        mcp=bad / n_assigned if n_assigned else 0.0,
        pa=n_assigned / n,
        n_assigned=n_assigned,
        mcl=float(-logp[np.arange(n), truth_arr - 1].sum()),
        ae=float(_entropy_rows(logp).mean()),
    )


def sweep(scores, truth, grid) -> CalibrationCurve:
    """Trace the full calibration curve over a threshold grid.

    For each t the assigned set is ``C = {i : gap_i >= t}`` (empty at +inf);
    mcp is the misclassified fraction within C (0 when C is empty), pa is
    |C|/n, and mcl/ae come from the softmax probabilities at scale 1/t over
    all points.  Rows are sorted by gap once so the mcp/pa pass costs
    O(n log n) regardless of grid size.
    """
    s = check_scores(scores, min_classes=2)
    g = _check_grid(grid)
    n = s.shape[0]
    if n < 1:
        raise CalibrationError("sweep needs at least one scored point")
    labels, gaps = map_labels_and_gaps(s)
    t_arr = _check_truth(truth, n, s.shape[1])
    wrong = labels != t_arr

    order = np.argsort(gaps)
    sorted_gaps = gaps[order]
    sorted_wrong = wrong[order]
    # suffix_wrong[i] = number of misclassified points among gaps[i:]
    suffix_wrong = np.concatenate((np.cumsum(sorted_wrong[::-1])[::-1], [0]))

    m = g.shape[0]
    mcp = np.zeros(m)
    pa = np.zeros(m)
    counts = np.zeros(m, dtype=np.int64)
    mcl_vals = np.zeros(m)
    ae_vals = np.zeros(m)
    rows = np.arange(n)
    for i, t in enumerate(g):
        if np.isinf(t):
            assigned = 0
            bad = 0
        else:
            first = int(np.searchsorted(sorted_gaps, t, side="left"))
            assigned = n - first
            bad = int(suffix_wrong[first])
        counts[i] = assigned
        pa[i] = assigned / n
        mcp[i] = bad / assigned if assigned else 0.0
        logp = softmax_log_probs(s, float(t))
        mcl_vals[i] = float(-logp[rows, t_arr - 1].sum())
        ae_vals[i] = float(_entropy_rows(logp).mean())
    return CalibrationCurve(g, mcp, pa, counts, mcl_vals, ae_vals, n)


# ---------------------------------------------------------------------------
# selection and application


@dataclass(frozen=True)
class ThresholdSelection:
    """The chosen threshold, its target, and the hold-out record it achieves.

    When no grid entry meets the target, ``feasible`` is False, ``t_star`` is
    +inf, and ``achieved`` is the (vacuous) record at +inf.
    """

    t_star: float
    target_kind: str
    target_value: float
    achieved: CurveRecord
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "target_kind": self.target_kind,
            "target_value": self.target_value,
            "feasible": self.feasible,
            "achieved": self.achieved.as_dict(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdSelection":
        payload = json.loads(Path(path).read_text())
        return cls(
            t_star=float(payload["t_star"]),
            target_kind=str(payload["target_kind"]),
            target_value=float(payload["target_value"]),
            achieved=CurveRecord(**payload["achieved"]),
            feasible=bool(payload["feasible"]),
        )


def select_threshold(curve: CalibrationCurve, target_kind: str, target_value: float) -> ThresholdSelection:
    """Pick the threshold meeting a metric target with maximal assignment.

    The feasible set holds every grid entry whose metric (mcp or mcl) is at
    most the target.  Among those the selection maximizes pa, breaking ties
    by the largest metric still within target, then by the smallest t.
    Infeasibility is reported, never raised.
    """
    kind = str(target_kind).lower()
    if kind not in ("mcp", "mcl"):
        raise CalibrationError(f"target_kind must be 'mcp' or 'mcl', got {target_kind!r}")
    target = float(target_value)
    metric = curve.mcp if kind == "mcp" else curve.mcl
    feasible_idx = np.flatnonzero(metric <= target)
    if feasible_idx.size == 0:
        return ThresholdSelection(math.inf, kind, target, curve.record(len(curve) - 1), False)
    order = np.lexsort(
        (curve.thresholds[feasible_idx], -metric[feasible_idx], -curve.pa[feasible_idx])
    )
    best = int(feasible_idx[order[0]])
    return ThresholdSelection(float(curve.thresholds[best]), kind, target, curve.record(best), True)


@dataclass(frozen=True)
class AssignmentResult:
    """Labels (0 = abstained) and the audit gaps that produced them.

    For finite thresholds ``labels[i] == 0`` iff ``gaps[i] < t_star``; at
    t_star = +inf every point abstains.
    """

    labels: np.ndarray
    gaps: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "gap"])
            for lab, gap in zip(self.labels, self.gaps):
                writer.writerow([str(int(lab)), format(gap, ".17g")])


def apply_threshold(scores, t_star: float) -> AssignmentResult:
    """Classify rows whose gap clears ``t_star``; give the rest label 0."""
    t = float(t_star)
    if math.isnan(t) or t < 0:
        raise CalibrationError(f"threshold must be non-negative or +inf, got {t_star}")
    labels, gaps = map_labels_and_gaps(scores)
    assigned = _assigned_mask(gaps, t)
    return AssignmentResult(np.where(assigned, labels, 0), gaps)
