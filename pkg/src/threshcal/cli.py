"""Command-line interface: simulate, fit, calibrate, apply, study, tvd."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, calibrate, dataset, model, simulate


def _parse_label_map(text: str) -> dict[str, int]:
    out = {}
    for item in text.split(","):
        key, _, value = item.partition("=")
        if not _:
            raise ValueError(f"label-map entries look like TEXT=INT, got {item!r}")
        out[key.strip()] = int(value)
    return out


def _parse_column(text: str) -> int | str:
    try:
        return int(text)
    except ValueError:
        return text


def _add_schema_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--label-column", type=_parse_column, default=-1,
                     help="label column index or header name (default: last column)")
    sub.add_argument("--label-map", type=_parse_label_map, default={"1": 1, "2": 2},
                     help="comma-separated TEXT=INT pairs, e.g. 'g=1,b=2' (default '1=1,2=2')")
    sub.add_argument("--missing-token", default="?")
    sub.add_argument("--drop-missing", action="store_true")
    sub.add_argument("--header", action="store_true", help="the CSV has a header row")


def _schema_from_args(args) -> dataset.CsvSchema:
    return dataset.CsvSchema(
        label_column=args.label_column,
        label_map=args.label_map,
        missing_token=args.missing_token,
        drop_missing=args.drop_missing,
        has_header=args.header,
    )


def _load_component(path: str | Path) -> model.GmmComponent:
    payload = json.loads(Path(path).read_text())
    mean = np.asarray(payload["mean"], dtype=float)
    if "covariance" in payload:
        cov = np.asarray(payload["covariance"], dtype=float)
    elif "variance" in payload:
        cov = float(payload["variance"]) * np.eye(mean.shape[0])
    else:
        raise ValueError(f"{path}: component spec needs 'covariance' or 'variance'")
    return model.GmmComponent(mean, cov, float(payload.get("weight", 1.0)))


def cmd_simulate(args) -> int:
    payload = json.loads(Path(args.scenario).read_text())
    if args.seed is not None:
        payload["seed"] = args.seed
    split_sizes = payload.pop("split", None)
    scenario = simulate.MixtureScenario.from_dict(payload)
    data, oracle = simulate.generate(scenario)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_csv(data, out / "full.csv")
    model.save_params(oracle, out / "oracle_model.json")
    if split_sizes is not None:
        spec = dataset.SplitSpec(*[int(x) for x in split_sizes], seed=scenario.seed)
        parts = dataset.split(data, spec)
        for name, part in zip(("train", "calib", "test"), parts):
            if part.n:
                dataset.save_csv(part, out / f"{name}.csv")
    print(f"wrote scenario data to {out}")
    return 0


def cmd_fit(args) -> int:
    data = dataset.load_csv(args.train, _schema_from_args(args))
    params = model.fit_gmm(data, args.ridge, diagonal=args.diagonal)
    model.save_params(params, args.output)
    print(f"fitted {params.k}-component mixture on {data.n} rows -> {args.output}")
    return 0


def cmd_calibrate(args) -> int:
    if (args.target_q is None) == (args.target_r is None):
        raise ValueError("give exactly one of --target-q or --target-r")
    kind, value = ("mcp", args.target_q) if args.target_q is not None else ("mcl", args.target_r)
    params = model.load_params(args.model)
    calib = dataset.load_csv(args.calib, _schema_from_args(args))
    scores = params.score(calib.features)
    grid = calibrate.build_grid(scores, args.epsilon)
    curve = calibrate.sweep(scores, calib.labels, grid)
    selection = calibrate.select_threshold(curve, kind, value)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "curve.csv")
    selection.save(out / "selection.json")
    status = "feasible" if selection.feasible else "infeasible"
    print(f"selected t* = {selection.t_star:g} ({status}) -> {out}")
    return 0


def cmd_apply(args) -> int:
    params = model.load_params(args.model)
    selection = calibrate.ThresholdSelection.load(args.selection)
    if args.unlabeled:
        features = dataset.load_features_csv(args.test, has_header=args.header)
    else:
        features = dataset.load_csv(args.test, _schema_from_args(args)).features
    result = calibrate.apply_threshold(params.score(features), selection.t_star)
    result.to_csv(args.output)
    n_assigned = int((result.labels != 0).sum())
    print(f"assigned {n_assigned}/{len(result.labels)} points -> {args.output}")
    return 0


def cmd_study(args) -> int:
    common = dict(n_resamples=args.resamples, seed=args.seed,
                  epsilon=args.epsilon, ridge=args.ridge)
    if args.name == "separation":
        report = bench.run_separation_study(
            args.target_q if args.target_q is not None else 0.25, **common
        )
    elif args.name == "dimension":
        report = bench.run_dimension_study(
            args.target_q if args.target_q is not None else 0.2, **common
        )
    elif args.name == "naive":
        report = bench.compare_naive(
            args.target_q if args.target_q is not None else 0.2, **common
        )
    elif args.name == "ionosphere":
        if args.data is None:
            raise ValueError("--data PATH to the ionosphere CSV is required")
        report = bench.run_ionosphere_study(
            args.data,
            q=args.target_q if args.target_q is not None else 0.15,
            r=args.target_r if args.target_r is not None else 300.0,
            **common,
        )
    elif args.name in ("ozone-full", "ozone-reduced"):
        if args.data is None:
            raise ValueError("--data PATH to the ozone CSV is required")
        report = bench.run_ozone_study(
            args.data,
            variant=args.name.removeprefix("ozone-"),
            q=args.target_q,
            top_k=args.top_k,
            **common,
        )
    else:  # unreachable: argparse restricts choices
        raise ValueError(f"unknown study {args.name!r}")
    report.write(args.output_dir)
    print(f"study {args.name}: wrote table.csv and summary.json to {args.output_dir}")
    for arm in report.arms:
        print(
            f"  {arm.name}: holdout {arm.target_kind}={arm.holdout_metric:.4g} "
            f"test {arm.target_kind}={arm.test_metric:.4g}"
        )
    return 0


def cmd_tvd(args) -> int:
    f = _load_component(args.f)
    g = _load_component(args.g)
    estimate = simulate.estimate_tvd(f, g, args.samples, args.seed)
    if args.output:
        estimate.save(args.output)
    print(json.dumps(estimate.to_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threshcal",
        description="Selective-classification calibration via top-two score-gap thresholds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a mixture scenario into CSV files")
    p.add_argument("--scenario", required=True, help="scenario JSON (d, separation, variance, weights, n, split, seed)")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the Gaussian mixture classifier on a training CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--output", required=True, help="model JSON path")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--diagonal", action="store_true", help="fit diagonal covariances")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", help="sweep thresholds on a hold-out CSV and select t*")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--target-q", type=float, default=None, help="misclassification-proportion target")
    p.add_argument("--target-r", type=float, default=None, help="multinomial-loss target")
    p.add_argument("--epsilon", type=float, default=calibrate.DEFAULT_EPSILON)
    p.add_argument("--output-dir", required=True)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("apply", help="classify a test CSV at the selected threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--output", required=True, help="labels CSV (label 0 = abstained)")
    p.add_argument("--unlabeled", action="store_true", help="test CSV has no label column")
    _add_schema_flags(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("study", help="run a named benchmark study")
    p.add_argument("--name", required=True,
                   choices=["separation", "dimension", "naive", "ionosphere", "ozone-full", "ozone-reduced"])
    p.add_argument("--data", default=None, help="CSV path for the real-data studies")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--resamples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-q", type=float, default=None)
    p.add_argument("--target-r", type=float, default=None)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--epsilon", type=float, default=calibrate.DEFAULT_EPSILON)
    p.add_argument("--top-k", type=int, default=20, help="screened feature count for ozone-reduced")
    p.add_argument("--oracle", action="store_true",
                   help="accepted for symmetry; simulation studies always run oracle arms")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("tvd", help="Monte-Carlo total variation distance between two Gaussians")
    p.add_argument("--f", required=True, help="component JSON: mean + covariance (or variance)")
    p.add_argument("--g", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_tvd)

    return parser


_STUDY_DEFAULT_RESAMPLES = {
    "separation": 20,
    "dimension": 20,
    "naive": 50,
    "ionosphere": 1,
    "ozone-full": 1,
    "ozone-reduced": 1,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "resamples", None) is None and hasattr(args, "name"):
        args.resamples = _STUDY_DEFAULT_RESAMPLES[args.name]
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
