"""Experiment runners: calibration pipelines, simulation studies, the naive
baseline comparison, and resample averaging onto a common reference grid."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import calibrate, dataset, model, simulate

__all__ = [
    "BenchError",
    "RunConfig",
    "RunOutcome",
    "ArmReport",
    "ExperimentReport",
    "AveragedCurve",
    "run_once",
    "run_calibration_pipeline",
    "run_separation_study",
    "run_dimension_study",
    "compare_naive",
    "resample_average",
    "average_curves",
    "curve_values_at",
    "run_ionosphere_study",
    "run_ozone_study",
    "IONOSPHERE_SCHEMA",
    "OZONE_SCHEMA",
    "SEPARATION_LEVELS",
    "DIMENSION_LEVELS",
]


class BenchError(ValueError):
    """Raised for invalid experiment configurations."""


# Raw-file schemas for the two UCI benchmarks: ionosphere has 34 numeric
# pulses then a g/b label; the one-hour ozone file has a leading date column,
# 72 numeric readings with '?' for missing, then a 0/1 label.
IONOSPHERE_SCHEMA = dataset.CsvSchema(label_column=34, label_map={"g": 1, "b": 2})
OZONE_SCHEMA = dataset.CsvSchema(
    label_column=73,
    label_map={"1": 1, "0": 2},
    missing_token="?",
    drop_missing=True,
    drop_columns=(0,),
)

# Difficulty knobs: center separation at fixed variance .5, and
# (dimension, variance) pairs whose density overlap stays roughly constant.
SEPARATION_LEVELS = {"easy": 4.0, "medium": 2.0, "hard": 0.75}
DIMENSION_LEVELS = {"easy": (10, 0.8), "medium": (20, 0.75), "hard": (100, 0.5)}


def _spawn(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _seq_ints(seq: np.random.SeedSequence, n: int) -> list[int]:
    return [int(x) for x in seq.generate_state(n, dtype=np.uint64)]


@dataclass(frozen=True)
class RunConfig:
    """One calibration-pipeline run: data source, split, target, and flags.

    Exactly one of ``scenario`` or ``data`` must be set.  ``balance``
    optionally rebalances the source before splitting as ``(take_all_class,
    n_other)``; ``screen_top_k`` applies marginal-correlation feature
    screening fitted on the training part only.
    """

    split: dataset.SplitSpec
    target_kind: str = "mcp"
    target_value: float = 0.15
    scenario: simulate.MixtureScenario | None = None
    data: dataset.LabeledDataset | None = None
    epsilon: float = calibrate.DEFAULT_EPSILON
    ridge: float = 1e-6
    n_resamples: int = 1
    seed: int = 0
    oracle: bool = False
    diagonal: bool = False
    pooled_grid: bool = False
    balance: tuple[int, int] | None = None
    screen_top_k: int | None = None
    name: str = "run"

    def __post_init__(self):
        if (self.scenario is None) == (self.data is None):
            raise BenchError("exactly one of scenario or data must be given")
        if self.n_resamples < 1:
            raise BenchError("n_resamples must be at least 1")
        if self.target_kind not in ("mcp", "mcl"):
            raise BenchError(f"target_kind must be 'mcp' or 'mcl', got {self.target_kind!r}")
        if self.oracle and self.scenario is None:
            raise BenchError("oracle curves require a simulation scenario")
        if self.oracle and self.screen_top_k is not None:
            raise BenchError("feature screening cannot be combined with oracle scoring")


@dataclass(frozen=True)
class RunOutcome:
    """One resample: the selection, the curves per part, and what the chosen
    threshold achieved on the test part (None when the test part is empty)."""

    selection: calibrate.ThresholdSelection
    curves: dict[str, calibrate.CalibrationCurve]
    test_record: calibrate.CurveRecord | None


def run_once(
    scorer: model.Scorer,
    train: dataset.LabeledDataset,
    calib: dataset.LabeledDataset,
    test: dataset.LabeledDataset,
    *,
    target_kind: str = "mcp",
    target_value: float = 0.15,
    epsilon: float = calibrate.DEFAULT_EPSILON,
    pooled_grid: bool = False,
) -> RunOutcome:
    """Score, sweep, select on the calibration part, and apply to the test part.

    The threshold grid is enumerated from the calibration scores (or from all
    scores when ``pooled_grid``); the selection never sees test labels.
    """
    if calib.n < 1:
        raise BenchError("calibration part must not be empty")
    train_scores = scorer.score(train.features)
    calib_scores = scorer.score(calib.features)
    test_scores = scorer.score(test.features) if test.n else None
    if pooled_grid:
        pooled = [train_scores, calib_scores] + ([test_scores] if test_scores is not None else [])
        grid = calibrate.build_grid(np.vstack(pooled), epsilon)
    else:
        grid = calibrate.build_grid(calib_scores, epsilon)
    curves = {
        "train": calibrate.sweep(train_scores, train.labels, grid),
        "calib": calibrate.sweep(calib_scores, calib.labels, grid),
    }
    if test_scores is not None:
        curves["test"] = calibrate.sweep(test_scores, test.labels, grid)
    selection = calibrate.select_threshold(curves["calib"], target_kind, target_value)
    test_record = None
    if test_scores is not None:
        test_record = calibrate.evaluate_at(test_scores, test.labels, selection.t_star)
    return RunOutcome(selection, curves, test_record)


# ---------------------------------------------------------------------------
# resample averaging


@dataclass(frozen=True)
class AveragedCurve:
    """Pointwise mean and standard deviation of metric curves on a reference grid."""

    thresholds: np.ndarray
    mcp_mean: np.ndarray
    mcp_std: np.ndarray
    pa_mean: np.ndarray
    pa_std: np.ndarray
    mcl_mean: np.ndarray
    mcl_std: np.ndarray
    ae_mean: np.ndarray
    ae_std: np.ndarray
    n_resamples: int

    def to_csv(self, path: str | Path) -> None:
        names = ["t", "mcp_mean", "mcp_std", "pa_mean", "pa_std",
                 "mcl_mean", "mcl_std", "ae_mean", "ae_std"]
        cols = [self.thresholds, self.mcp_mean, self.mcp_std, self.pa_mean, self.pa_std,
                self.mcl_mean, self.mcl_std, self.ae_mean, self.ae_std]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in zip(*cols):
                writer.writerow([format(v, ".17g") for v in row])


def curve_values_at(curve: calibrate.CalibrationCurve, thresholds) -> dict[str, np.ndarray]:
    """Step-curve lookup: the curve record whose grid entry is the first >= t.

    Between consecutive grid values the assigned set is constant, so this
    reproduces the metric the sweep would report at any threshold.
    """
    ts = np.asarray(thresholds, dtype=float)
    idx = np.searchsorted(curve.thresholds, ts, side="left")
    idx = np.minimum(idx, len(curve) - 1)
    return {
        "mcp": curve.mcp[idx],
        "pa": curve.pa[idx],
        "mcl": curve.mcl[idx],
        "ae": curve.ae[idx],
    }


def _reference_grid(curves, n_reference: int) -> np.ndarray:
    finite = np.concatenate([c.thresholds[np.isfinite(c.thresholds)] for c in curves])
    if finite.size:
        ref = np.unique(np.quantile(finite, np.linspace(0.0, 1.0, n_reference)))
    else:
        ref = np.empty(0)
    return np.concatenate((ref, [np.inf]))


def average_curves(curves, n_reference: int = 200) -> AveragedCurve:
    """Average step curves pointwise on a quantile reference grid.

    The reference thresholds are ``n_reference`` quantiles of all finite grid
    values pooled across the curves, plus +inf; each curve is evaluated there
    by right-continuous lookup before the per-point mean and standard
    deviation are taken.
    """
    curves = list(curves)
    if not curves:
        raise BenchError("nothing to average")
    ref = _reference_grid(curves, n_reference)
    stacked = {key: [] for key in ("mcp", "pa", "mcl", "ae")}
    for c in curves:
        vals = curve_values_at(c, ref)
        for key in stacked:
            stacked[key].append(vals[key])
    out = {}
    for key, rows in stacked.items():
        block = np.stack(rows)
        out[f"{key}_mean"] = block.mean(axis=0)
        out[f"{key}_std"] = block.std(axis=0)
    return AveragedCurve(thresholds=ref, n_resamples=len(curves), **out)


def resample_average(run, n_resamples: int, seed: int = 0, n_reference: int = 200) -> AveragedCurve:
    """Average the curves of ``run(seed_i)`` over per-resample seeds.

    ``run`` must be a callable taking an integer seed and returning a
    :class:`~threshcal.calibrate.CalibrationCurve`; it is responsible for
    re-drawing its hold-out/test subsets from that seed.
    """
    if n_resamples < 1:
        raise BenchError("n_resamples must be at least 1")
    seeds = [_seq_ints(child, 1)[0] for child in _spawn(seed, n_resamples)]
    return average_curves([run(s) for s in seeds], n_reference)


# ---------------------------------------------------------------------------
# reports


_SUMMARY_FIELDS = [
    "name", "target_kind", "target_value", "t_star", "feasible_fraction",
    "holdout_metric", "holdout_pa_or_ae", "test_metric", "test_pa_or_ae",
    "n_resamples",
]


@dataclass
class ArmReport:
    """Aggregated results of one experiment arm across its resamples.

    Summary fields are means over resamples (equal to the single run when
    ``n_resamples == 1``); ``per_resample`` keeps the raw per-split values
    for auditing.  ``curves`` holds the first resample's curves and
    ``averaged`` the reference-grid averages.
    """

    name: str
    target_kind: str
    target_value: float
    n_resamples: int
    t_star: float
    feasible_fraction: float
    holdout_metric: float
    holdout_pa_or_ae: float
    test_metric: float
    test_pa_or_ae: float
    per_resample: dict[str, np.ndarray]
    curves: dict[str, calibrate.CalibrationCurve]
    averaged: dict[str, AveragedCurve]
    tvd: simulate.TvdEstimate | None = None

    def row(self) -> dict:
        return {name: getattr(self, name) for name in _SUMMARY_FIELDS}

    def to_dict(self) -> dict:
        payload = self.row()
        payload["per_resample"] = {k: v.tolist() for k, v in self.per_resample.items()}
        if self.tvd is not None:
            payload["tvd"] = self.tvd.to_dict()
        return payload


def _arm_from_outcomes(
    name: str,
    target_kind: str,
    target_value: float,
    outcomes: list[RunOutcome],
    tvd: simulate.TvdEstimate | None = None,
) -> ArmReport:
    per = {
        "t_star": np.array([o.selection.t_star for o in outcomes]),
        "feasible": np.array([float(o.selection.feasible) for o in outcomes]),
    }
    for part, getter in (
        ("holdout", lambda o: o.selection.achieved),
        ("test", lambda o: o.test_record),
    ):
        for metric in ("mcp", "pa", "mcl", "ae"):
            vals = [
                getattr(getter(o), metric) if getter(o) is not None else math.nan
                for o in outcomes
            ]
            per[f"{part}_{metric}"] = np.array(vals)
    metric_key = target_kind
    aux_key = "pa" if target_kind == "mcp" else "ae"
    parts = outcomes[0].curves.keys()
    averaged = {p: average_curves([o.curves[p] for o in outcomes]) for p in parts}
    return ArmReport(
        name=name,
        target_kind=target_kind,
        target_value=target_value,
        n_resamples=len(outcomes),
        t_star=float(per["t_star"].mean()),
        feasible_fraction=float(per["feasible"].mean()),
        holdout_metric=float(per[f"holdout_{metric_key}"].mean()),
        holdout_pa_or_ae=float(per[f"holdout_{aux_key}"].mean()),
        test_metric=float(per[f"test_{metric_key}"].mean()),
        test_pa_or_ae=float(per[f"test_{aux_key}"].mean()),
        per_resample=per,
        curves=outcomes[0].curves,
        averaged=averaged,
        tvd=tvd,
    )


@dataclass
class ExperimentReport:
    """A named collection of experiment arms, writable as CSV + JSON."""

    name: str
    arms: list[ArmReport] = field(default_factory=list)

    def arm(self, name: str) -> ArmReport:
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"name": self.name, "arms": [a.to_dict() for a in self.arms]}

    def write(self, output_dir: str | Path) -> None:
        """Write table.csv, summary.json, and per-arm curve CSVs."""
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "table.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
            writer.writeheader()
            for arm in self.arms:
                writer.writerow(arm.row())
        (out / "summary.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        for arm in self.arms:
            for part, curve in arm.curves.items():
                curve.to_csv(out / f"{arm.name}_{part}_curve.csv")
            for part, avg in arm.averaged.items():
                avg.to_csv(out / f"{arm.name}_{part}_avg.csv")


# ---------------------------------------------------------------------------
# pipelines


def _resample_datasets(config: RunConfig, source: dataset.LabeledDataset, child):
    """Draw the (train, calib, test) parts for one resample seed."""
    sub_seed, split_seed = _seq_ints(child, 2)
    ds = source
    if config.balance is not None:
        take_all, n_other = config.balance
        ds = dataset.subsample_balanced(ds, take_all, n_other, sub_seed)
    spec = replace(config.split, seed=split_seed)
    train, calib, test = dataset.split(ds, spec)
    if config.screen_top_k is not None:
        (train, calib, test), _ = dataset.screen_features(
            train, [calib, test], config.screen_top_k
        )
    return train, calib, test


def run_calibration_pipeline(config: RunConfig) -> ExperimentReport:
    """Fit, calibrate on the hold-out part, and report test metrics at t*.

    Resamples re-draw the subsample and split with per-resample seeds derived
    from ``config.seed``.  With ``config.oracle`` a parallel arm scores with
    the true generating parameters on the same splits.
    """
    if config.scenario is not None:
        source, oracle_params = simulate.generate(config.scenario)
    else:
        source, oracle_params = config.data, None
    fitted, oracle = [], []
    for child in _spawn(config.seed, config.n_resamples):
        train, calib, test = _resample_datasets(config, source, child)
        params = model.fit_gmm(train, config.ridge, diagonal=config.diagonal)
        kwargs = dict(
            target_kind=config.target_kind,
            target_value=config.target_value,
            epsilon=config.epsilon,
            pooled_grid=config.pooled_grid,
        )
        fitted.append(run_once(params, train, calib, test, **kwargs))
        if config.oracle:
            oracle.append(run_once(oracle_params, train, calib, test, **kwargs))
    arms = [_arm_from_outcomes(config.name, config.target_kind, config.target_value, fitted)]
    if oracle:
        arms.append(
            _arm_from_outcomes(
                f"{config.name}-oracle", config.target_kind, config.target_value, oracle
            )
        )
    return ExperimentReport(config.name, arms)


def run_separation_study(
    q: float = 0.25,
    *,
    d: int = 30,
    variance: float = 0.5,
    n_resamples: int = 20,
    seed: int = 0,
    levels: dict[str, float] | None = None,
    epsilon: float = calibrate.DEFAULT_EPSILON,
    ridge: float = 1e-6,
) -> ExperimentReport:
    """Easy/medium/hard center-separation arms with fitted and oracle scoring.

    Each arm draws ``n = 5 d`` points split 3d/d/d (90/30/30 at the default
    d = 30) and targets hold-out mcp <= q.
    """
    levels = dict(levels or SEPARATION_LEVELS)
    report = ExperimentReport("separation")
    for (name, sep), child in zip(levels.items(), _spawn(seed, len(levels))):
        scen_seed, run_seed = _seq_ints(child, 2)
        scenario = simulate.MixtureScenario(
            d=d, separation=sep, variance=variance, n=5 * d, seed=scen_seed
        )
        config = RunConfig(
            split=dataset.SplitSpec(3 * d, d, d, seed=0),
            target_kind="mcp",
            target_value=q,
            scenario=scenario,
            epsilon=epsilon,
            ridge=ridge,
            n_resamples=n_resamples,
            seed=run_seed,
            oracle=True,
            name=name,
        )
        report.arms.extend(run_calibration_pipeline(config).arms)
    return report


def run_dimension_study(
    q: float = 0.2,
    *,
    separation: float = 2.0,
    n: int = 500,
    split_sizes: tuple[int, int, int] = (300, 100, 100),
    n_resamples: int = 20,
    seed: int = 0,
    tvd_samples: int = 100_000,
    levels: dict[str, tuple[int, float]] | None = None,
    epsilon: float = calibrate.DEFAULT_EPSILON,
    ridge: float = 1e-6,
) -> ExperimentReport:
    """Dimension-difficulty arms (d, variance pairs) with constant-overlap TVD checks.

    All arms share the same centers (same separation and direction seed, the
    extra coordinates being zero); each arm also reports the Monte-Carlo TVD
    between its two generating components.
    """
    levels = dict(levels or DIMENSION_LEVELS)
    report = ExperimentReport("dimension")
    root = _spawn(seed, len(levels) + 1)
    scen_seed = _seq_ints(root[0], 1)[0]
    for (name, (dim, variance)), child in zip(levels.items(), root[1:]):
        run_seed, tvd_seed = _seq_ints(child, 2)
        scenario = simulate.MixtureScenario(
            d=dim, separation=separation, variance=variance, n=n, seed=scen_seed
        )
        config = RunConfig(
            split=dataset.SplitSpec(*split_sizes, seed=0),
            target_kind="mcp",
            target_value=q,
            scenario=scenario,
            epsilon=epsilon,
            ridge=ridge,
            n_resamples=n_resamples,
            seed=run_seed,
            oracle=True,
            name=name,
        )
        arms = run_calibration_pipeline(config).arms
        _, oracle_params = simulate.generate(scenario)
        arms[0].tvd = simulate.estimate_tvd(
            oracle_params.components[0], oracle_params.components[1], tvd_samples, tvd_seed
        )
        report.arms.extend(arms)
    return report


def compare_naive(
    q: float = 0.2,
    *,
    d: int = 15,
    separation: float = 2.0,
    variance: float = 0.5,
    n: int = 75,
    split_sizes: tuple[int, int, int] = (45, 15, 15),
    n_resamples: int = 50,
    seed: int = 0,
    epsilon: float = calibrate.DEFAULT_EPSILON,
    ridge: float = 1e-6,
) -> ExperimentReport:
    """Hold-out thresholding versus the naive fit-on-everything baseline.

    Arm A fits on the training part and selects t* on the hold-out curve.
    Arm B fits on training plus hold-out (same total budget) and selects t*
    on its own training curve; both classify the identical test part.
    Results are averaged over ``n_resamples`` independent re-splits.
    """
    children = _spawn(seed, n_resamples + 1)
    scen_seed = _seq_ints(children[0], 1)[0]
    scenario = simulate.MixtureScenario(
        d=d, separation=separation, variance=variance, n=n, seed=scen_seed
    )
    data, _ = simulate.generate(scenario)
    n_train, n_calib, n_test = split_sizes
    thresh_outcomes, naive_outcomes = [], []
    for child in children[1:]:
        split_seed = _seq_ints(child, 1)[0]
        spec = dataset.SplitSpec(n_train, n_calib, n_test, seed=split_seed)
        train, calib, test = dataset.split(data, spec)
        kwargs = dict(target_kind="mcp", target_value=q, epsilon=epsilon)
        params = model.fit_gmm(train, ridge)
        thresh_outcomes.append(run_once(params, train, calib, test, **kwargs))
        pool = dataset.concatenate([train, calib])
        naive_params = model.fit_gmm(pool, ridge)
        # the naive arm has no hold-out set: it selects on its own training curve
        naive_outcomes.append(run_once(naive_params, pool, pool, test, **kwargs))
    return ExperimentReport(
        "naive-comparison",
        [
            _arm_from_outcomes("thresholding", "mcp", q, thresh_outcomes),
            _arm_from_outcomes("naive", "mcp", q, naive_outcomes),
        ],
    )


# ---------------------------------------------------------------------------
# real-data studies


def run_ionosphere_study(
    path: str | Path,
    *,
    q: float = 0.15,
    r: float = 300.0,
    n_resamples: int = 1,
    seed: int = 0,
    epsilon: float = calibrate.DEFAULT_EPSILON,
    ridge: float = 1e-6,
) -> ExperimentReport:
    """Both formulations on the ionosphere benchmark: mcp target q, mcl target r.

    Splits are 151/100/100 with per-resample seeds; the raw UCI file (34
    numeric columns then a g/b label) is read via ``IONOSPHERE_SCHEMA``.
    """
    data = dataset.load_csv(path, IONOSPHERE_SCHEMA)
    report = ExperimentReport("ionosphere")
    children = _spawn(seed, 2)
    for arm_name, kind, value, child in (
        ("ionosphere-mcp", "mcp", q, children[0]),
        ("ionosphere-mcl", "mcl", r, children[1]),
    ):
        config = RunConfig(
            split=dataset.SplitSpec(151, 100, 100, seed=0),
            target_kind=kind,
            target_value=value,
            data=data,
            epsilon=epsilon,
            ridge=ridge,
            n_resamples=n_resamples,
            seed=_seq_ints(child, 1)[0],
            name=arm_name,
        )
        report.arms.extend(run_calibration_pipeline(config).arms)
    return report


def run_ozone_study(
    path: str | Path,
    *,
    variant: str = "full",
    q: float | None = None,
    n_resamples: int = 1,
    seed: int = 0,
    top_k: int = 20,
    epsilon: float = calibrate.DEFAULT_EPSILON,
    ridge: float = 1e-6,
) -> ExperimentReport:
    """Ozone-day pipelines: the full imbalanced data or the reduced balanced one.

    ``full`` uses all 72 features with stratified 616/616/616 splits and
    targets mcp <= .02.  ``reduced`` rebalances to 200 rows (all 57 ozone
    days plus 143 sampled normal days), splits 100/50/50, screens to the
    ``top_k`` most label-correlated features, and targets mcp <= .2.
    """
    data = dataset.load_csv(path, OZONE_SCHEMA)
    if variant == "full":
        config = RunConfig(
            split=dataset.SplitSpec(616, 616, 616, seed=0, stratified=True),
            target_kind="mcp",
            target_value=0.02 if q is None else q,
            data=data,
            epsilon=epsilon,
            ridge=ridge,
            n_resamples=n_resamples,
            seed=seed,
            name="ozone-full",
        )
    elif variant == "reduced":
        config = RunConfig(
            split=dataset.SplitSpec(100, 50, 50, seed=0),
            target_kind="mcp",
            target_value=0.2 if q is None else q,
            data=data,
            epsilon=epsilon,
            ridge=ridge,
            n_resamples=n_resamples,
            seed=seed,
            balance=(1, 143),
            screen_top_k=top_k,
            name="ozone-reduced",
        )
    else:
        raise BenchError(f"unknown ozone variant {variant!r} (use 'full' or 'reduced')")
    return run_calibration_pipeline(config)
