"""``conformal-kit`` command line.

Subcommands: ``calibrate``, ``predict``, ``rcps``, ``evaluate``, ``simulate``.
Exit codes: 0 success, 2 bad input, 3 infeasible level under ``--strict``,
4 loss-table contract violation.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from ._runtime import make_rng
from .calibrate import calibrate
from .core import (
    CalibrationArtifact,
    Density,
    Labels,
    LossContractError,
    PixelScores,
    PointScale,
    QuantilePair,
    Softmax,
    ValidationError,
)
from .evaluation import (
    DEFAULT_SIZE_BINS,
    covered_flags,
    coverage_over_splits,
    risk_over_splits,
    set_size,
    size_bin_ids,
    size_report,
    stratified_coverage,
)
from .plots import histogram_svg
from .rcps import (
    PIXEL_PARAMETERIZATION,
    default_lambda_grid,
    fnr_loss_table,
    mask_size_table,
    pixel_threshold_set,
    select_lambda,
)
from .scores import get_family, set_aps, set_bayes, set_cqr, set_lac, set_scalar
from .synth import WorldSpec, sample_dataset, true_risk

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_CONTRACT = 0, 2, 3, 4

WORLDS = {
    "categorical": "categorical_classifier",
    "gaussian": "gaussian_regression",
    "segmentation": "segmentation_blobs",
}
DEFAULT_METHOD = {"categorical": "lac", "gaussian": "cqr", "segmentation": "rcps"}
GAUSSIAN_OUTPUT = {"cqr": "quantile", "scalar": "point_scale", "bayes": "density"}
CONFORMAL_METHODS = ("lac", "aps", "cqr", "scalar", "bayes")

# declared tolerances for simulate's pass/fail checks
COVERAGE_LOWER_TOL = 0.01
COVERAGE_UPPER_TOL = 0.02
APS_UPPER_SLACK = 0.05
VIOLATION_SLACK = 0.06

_SET_BUILDERS = {
    "lac": (Softmax, set_lac),
    "aps": (Softmax, set_aps),
    "bayes": (Density, set_bayes),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _unit_interval(name: str):
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not 0 < v < 1:
            raise argparse.ArgumentTypeError(f"{name} must lie strictly between 0 and 1, got {text}")
        return v

    return parse


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def parse_size_bins(text: str) -> tuple[float, ...]:
    """Parse ``1,2,3+`` into lower bin edges; the trailing ``+`` is optional."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("size bins must not be empty")
    if parts[-1].endswith("+"):
        parts[-1] = parts[-1][:-1]
    if any(p.endswith("+") for p in parts):
        raise argparse.ArgumentTypeError("only the last size bin may be open ('+')")
    try:
        edges = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size bins {text!r}") from None
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise argparse.ArgumentTypeError("size bins must be strictly increasing")
    return edges


def _bin_label(edges: Sequence[float], g: int) -> str:
    lo = io.format_number(edges[g])
    if g == len(edges) - 1:
        return f"{lo}+"
    hi = edges[g + 1]
    if float(edges[g]).is_integer() and float(hi).is_integer() and hi == edges[g] + 1:
        return lo
    return f"[{lo},{io.format_number(hi)})"


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    if args.method == "rcps":
        raise CliError("rcps calibration takes a loss table; use the 'rcps' subcommand")
    if (args.scores is None) == (args.outputs is None):
        raise CliError("give exactly one of --scores or --outputs")
    if args.scores is not None:
        scores, _ = io.read_scores_csv(args.scores)
        source = str(args.scores)
    else:
        kind, outputs, labels, _ = io.read_outputs_csv(args.outputs)
        family = get_family(args.method)
        if kind != family.kind:
            raise CliError(f"method {args.method!r} needs {family.kind} outputs, but the file holds {kind}")
        if labels is None:
            raise CliError(f"{args.outputs}: calibration outputs need a label column")
        scores = family.score(outputs, labels)
        source = str(args.outputs)
    rng = np.random.default_rng(args.seed) if args.jitter else None
    art = calibrate(scores, args.alpha, args.method, jitter=args.jitter, rng=rng)
    if args.strict and math.isinf(art.threshold):
        raise CliError(
            f"n={art.n} is too small for alpha={args.alpha}: "
            f"k={art.metadata['k']} exceeds n, so the threshold is +inf",
            EXIT_INFEASIBLE,
        )
    io.write_artifact(args.out, art)
    print(f"qhat={io.format_number(art.threshold)} n={art.n} k={art.metadata['k']} source={source}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def _parse_grid(text: Optional[str], m: int) -> Optional[np.ndarray]:
    if text is None:
        return None
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"--grid must be 'y_min,y_max', got {text!r}") from None
    if not lo < hi:
        raise CliError("--grid needs y_min < y_max")
    return np.linspace(lo, hi, m)


def _predict_sets(art: CalibrationArtifact, kind: str, outputs: np.ndarray) -> list:
    q = art.threshold
    expected = get_family(art.method).kind
    if kind != expected:
        raise CliError(f"{art.method} artifact needs {expected} outputs, but the file holds {kind}")
    if art.method in _SET_BUILDERS:
        wrap, build = _SET_BUILDERS[art.method]
        return [build(wrap(row), q) for row in outputs]
    if art.method == "cqr":
        return [set_cqr(QuantilePair(float(a), float(b)), q) for a, b in outputs]
    return [set_scalar(PointScale(float(f), float(u)), q) for f, u in outputs]


def cmd_predict(args) -> int:
    art = io.read_artifact(args.artifact)
    if art.method == "rcps":
        if args.pixel_scores is None:
            raise CliError("rcps artifacts predict masks from --pixel-scores")
        scores = io.read_pixel_scores(args.pixel_scores)
        sets = [pixel_threshold_set(PixelScores(s), art.threshold) for s in scores]
        grid = None
    else:
        if args.outputs is None:
            raise CliError("--outputs is required for conformal artifacts")
        kind, outputs, _, _ = io.read_outputs_csv(args.outputs)
        sets = _predict_sets(art, kind, outputs)
        grid = _parse_grid(args.grid, outputs.shape[1]) if art.method == "bayes" else None
        if args.grid is not None and art.method != "bayes":
            raise CliError("--grid only applies to bayes artifacts")
    io.write_sets(args.out, sets, grid)
    sizes = [set_size(s) for s in sets]
    print(f"wrote {len(sets)} sets to {args.out} (mean size {io.format_number(np.mean(sizes))})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rcps
# ---------------------------------------------------------------------------


def cmd_rcps(args) -> int:
    table = io.read_loss_table(args.losses)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        art = select_lambda(table, args.alpha, args.delta, parameterization=args.parameterization)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    io.write_artifact(args.out, art)
    print(
        f"lambda={io.format_number(art.threshold)} n={art.n} "
        f"ucb={io.format_number(float(art.metadata['ucb']))}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _read_truth(path: str, column: str, n_sets: int, sets: list):
    """Labels from a CSV column, or masks from a JSON-lines file."""
    if str(path).endswith(".jsonl"):
        truth = io.read_masks(path)
        return truth, {}
    labels, extra = io.read_labels_csv(path, column)
    if sets and isinstance(sets[0], Labels):
        if np.any(labels != np.round(labels)):
            raise CliError(f"{path}: label sets need integer labels")
        labels = labels.astype(int)
    return list(labels), extra


def _write_stratum_csv(path: Path, header_name: str, names, per: dict, counts: dict) -> float:
    rows = [[name, counts[g], per[g]] for g, name in names if g in per]
    worst = min(per.values())
    rows.append(["min", sum(counts.values()), worst])
    io.write_csv(path, [header_name, "n", "coverage"], rows)
    return worst


def cmd_evaluate(args) -> int:
    sets = io.read_sets(args.sets)
    truth, extra = _read_truth(args.labels, args.label_column, len(sets), sets)
    if len(truth) != len(sets):
        raise CliError(f"alignment mismatch: {len(sets)} sets but {len(truth)} labels")
    if not sets:
        raise CliError("no prediction sets to evaluate")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    covered = covered_flags(truth, sets)
    sizes = np.array([set_size(s) for s in sets])
    target = 1 - args.alpha

    if args.split_column:
        if args.split_column not in extra:
            raise CliError(f"{args.labels}: no {args.split_column!r} column")
        split = extra[args.split_column].astype(int)
    else:
        split = np.zeros(len(sets), dtype=int)
    split_ids = np.unique(split)
    per_split = [(int(s), int(np.sum(split == s)), float(covered[split == s].mean())) for s in split_ids]
    io.write_csv(out / "coverage.csv", ["split", "n", "coverage"], per_split)

    rep = size_report(sizes)
    io.write_csv(
        out / "sizes.csv",
        ["bin_lo", "bin_hi", "count"],
        [[lo, hi, int(c)] for lo, hi, c in zip(rep.bin_edges[:-1], rep.bin_edges[1:], rep.counts)],
    )

    summary = {
        "n": len(sets),
        "alpha": args.alpha,
        "coverage": float(covered.mean()),
        "target": target,
        "n_splits": len(per_split),
        "mean_size": rep.mean,
        "std_size": rep.std,
    }

    if args.groups:
        if args.groups not in extra:
            raise CliError(f"{args.labels}: no {args.groups!r} column")
        groups = extra[args.groups].astype(int)
        per = stratified_coverage(covered, groups)
        counts = {g: int(np.sum(groups == g)) for g in per}
        summary["fsc"] = _write_stratum_csv(
            out / "fsc.csv", "group", [(g, g) for g in sorted(per)], per, counts
        )
        summary["group_coverage"] = {str(g): v for g, v in sorted(per.items())}

    edges = args.size_bins or DEFAULT_SIZE_BINS
    bins = size_bin_ids(sizes, edges)
    per = stratified_coverage(covered, bins)
    counts = {g: int(np.sum(bins == g)) for g in per}
    names = [(g, _bin_label(edges, g)) for g in range(len(edges))]
    summary["ssc"] = _write_stratum_csv(out / "ssc.csv", "size_bin", names, per, counts)
    summary["size_bin_coverage"] = {name: per[g] for g, name in names if g in per}

    cov_values = [c for _, _, c in per_split]
    (out / "coverage.svg").write_text(
        histogram_svg(
            cov_values,
            bins=min(20, max(len(cov_values), 1)),
            title="Coverage per split",
            xlabel="empirical coverage",
            reference=target,
            reference_label=f"1 - alpha = {io.format_number(target)}",
        ),
        encoding="utf-8",
    )
    (out / "sizes.svg").write_text(
        histogram_svg(edges=rep.bin_edges, counts=rep.counts, title="Set sizes", xlabel="set size"),
        encoding="utf-8",
    )
    io.write_json(out / "summary.json", summary)
    print(f"coverage={io.format_number(summary['coverage'])} n={len(sets)} ssc={io.format_number(summary['ssc'])}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _check(name: str, value: float, op: str, bound: float) -> dict:
    ok = value >= bound if op == ">=" else value <= bound
    return {"name": name, "value": value, "op": op, "bound": bound, "pass": bool(ok)}


def _simulate_conformal(args, world: WorldSpec, out: Path) -> dict:
    output = GAUSSIAN_OUTPUT.get(args.method) if world.kind == "gaussian_regression" else None
    family = get_family(args.method)
    N = args.n + args.n_val
    ds = sample_dataset(world, N, output=output)
    if ds.kind != family.kind:
        raise CliError(f"method {args.method!r} does not apply to the {args.world} world")
    io.write_outputs_csv(out / "dataset.csv", ds.kind, ds.outputs, ds.labels, ds.groups)

    report = coverage_over_splits(
        ds, args.method, args.alpha, n_splits=args.splits, seed=args.seed, n_cal=args.n, n_jobs=args.threads
    )
    io.write_csv(
        out / "splits.csv",
        ["split", "threshold", "coverage", "mean_size"],
        zip(range(report.n_splits), report.thresholds, report.per_split_coverage, report.mean_sizes),
    )

    # artifact from the first split, plus its exact (or fresh-sample) risk
    cal = make_rng(args.seed, 0).permutation(N)[: args.n]
    art = calibrate(family.score(ds.outputs[cal], ds.labels[cal]), args.alpha, args.method)
    io.write_artifact(out / "artifact.json", art)
    risk = true_risk(world, art, n_fresh=args.n_fresh)

    target = 1 - args.alpha
    upper = target + 1 / (args.n + 1) + (APS_UPPER_SLACK if args.method == "aps" else 0) + COVERAGE_UPPER_TOL
    checks = [
        _check("mean_coverage_lower", report.mean, ">=", target - COVERAGE_LOWER_TOL),
        _check("mean_coverage_upper", report.mean, "<=", upper),
    ]
    (out / "coverage.svg").write_text(
        histogram_svg(
            report.per_split_coverage,
            bins=20,
            title=f"{args.method} coverage over {report.n_splits} splits",
            xlabel="validation coverage",
            reference=target,
            reference_label=f"1 - alpha = {io.format_number(target)}",
        ),
        encoding="utf-8",
    )
    (out / "sizes.svg").write_text(
        histogram_svg(report.mean_sizes, bins=20, title="Mean set size per split", xlabel="mean set size"),
        encoding="utf-8",
    )
    return {
        "report": report.summary(),
        "artifact": io.artifact_to_dict(art),
        "true_risk": {"value": risk.value, "stderr": risk.stderr, "n_samples": risk.n_samples},
        "checks": checks,
    }


def _simulate_rcps(args, world: WorldSpec, out: Path) -> dict:
    N = args.n + args.n_val
    ds = sample_dataset(world, N)
    lambdas = default_lambda_grid(args.grid_size)
    table = fnr_loss_table(ds.labels, ds.outputs, lambdas)
    sizes = mask_size_table(ds.outputs, lambdas)
    io.write_loss_table(out / "losses.csv", table)
    io.write_masks(out / "masks.jsonl", ds.labels)
    if args.save_pixels:
        io.write_pixel_scores(out / "pixel_scores.jsonl", ds.outputs)

    report = risk_over_splits(
        table, args.alpha, args.delta, n_cal=args.n, n_splits=args.splits, seed=args.seed,
        sizes=sizes, n_jobs=args.threads,
    )
    io.write_csv(
        out / "splits.csv",
        ["split", "lambda", "risk", "mean_size"],
        zip(range(report.n_splits), report.per_split_lambda, report.per_split_risk, report.per_split_size),
    )

    cal = make_rng(args.seed, 0).permutation(N)[: args.n]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        art = select_lambda(table.subset(cal), args.alpha, args.delta, parameterization=PIXEL_PARAMETERIZATION)
    io.write_artifact(out / "artifact.json", art)
    risk = true_risk(world, art, n_fresh=args.n_fresh)

    checks = [
        _check("violation_rate", report.violation_rate, "<=", args.delta + VIOLATION_SLACK),
    ]
    (out / "risk.svg").write_text(
        histogram_svg(
            report.per_split_risk,
            bins=20,
            title=f"Held-out FNR over {report.n_splits} splits",
            xlabel="false negative rate",
            reference=args.alpha,
            reference_label=f"alpha = {io.format_number(args.alpha)}",
        ),
        encoding="utf-8",
    )
    (out / "sizes.svg").write_text(
        histogram_svg(report.per_split_size, bins=20, title="Mean mask size per split", xlabel="pixels"),
        encoding="utf-8",
    )
    return {
        "report": report.summary(),
        "artifact": io.artifact_to_dict(art),
        "true_risk": {"value": risk.value, "stderr": risk.stderr, "n_samples": risk.n_samples},
        "checks": checks,
    }


def cmd_simulate(args) -> int:
    method = args.method or DEFAULT_METHOD[args.world]
    args.method = method
    if args.world == "segmentation" and method != "rcps":
        raise CliError("the segmentation world is calibrated with --method rcps")
    if args.world != "segmentation" and method == "rcps":
        raise CliError("--method rcps needs --world segmentation")
    if args.n_val is None:
        args.n_val = args.n
    params = {}
    if args.adversarial_frac:
        if args.world != "categorical":
            raise CliError("--adversarial-frac applies to the categorical world")
        params["adversarial_frac"] = args.adversarial_frac
    try:
        world = WorldSpec(WORLDS[args.world], knob=args.knob, seed=args.seed, params=params)
    except ValidationError as e:
        raise CliError(str(e)) from None

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = (_simulate_rcps if method == "rcps" else _simulate_conformal)(args, world, out)
    summary = {
        "config": {
            "world": args.world,
            "method": method,
            "knob": args.knob,
            "alpha": args.alpha,
            "delta": args.delta if method == "rcps" else None,
            "n_cal": args.n,
            "n_val": args.n_val,
            "splits": args.splits,
            "seed": args.seed,
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in world.params.items()},
        },
        **body,
        "pass": all(c["pass"] for c in body["checks"]),
    }
    io.write_json(out / "summary.json", summary)
    status = "PASS" if summary["pass"] else "FAIL"
    print(f"{status} {args.world}/{method} knob={args.knob} -> {out / 'summary.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conformal-kit", description="Split conformal calibration and risk control.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="fit a conformal threshold from calibration data")
    c.add_argument("--method", required=True, choices=CONFORMAL_METHODS)
    c.add_argument("--alpha", required=True, type=_unit_interval("alpha"))
    c.add_argument("--scores", help="CSV with a 'score' column")
    c.add_argument("--outputs", help="model-output CSV with labels; scores are computed")
    c.add_argument("--out", required=True)
    c.add_argument("--strict", action="store_true", help="fail (exit 3) when the threshold would be +inf")
    c.add_argument("--jitter", action="store_true", help="break score ties with tiny uniform noise")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("predict", help="turn test outputs into prediction sets")
    r.add_argument("--artifact", required=True)
    r.add_argument("--outputs", help="model-output CSV")
    r.add_argument("--pixel-scores", help="JSON-lines pixel scores (rcps artifacts)")
    r.add_argument("--grid", help="'y_min,y_max' of the density grid; adds real unions to bayes sets")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    k = sub.add_parser("rcps", help="select lambda from a loss table")
    k.add_argument("--losses", required=True)
    k.add_argument("--alpha", required=True, type=_unit_interval("alpha"))
    k.add_argument("--delta", required=True, type=_unit_interval("delta"))
    k.add_argument("--parameterization", default=None, help="free-text note stored with the artifact")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_rcps)

    e = sub.add_parser("evaluate", help="coverage, size and conditional-coverage reports")
    e.add_argument("--sets", required=True)
    e.add_argument("--labels", required=True, help="labels CSV, or masks JSON lines")
    e.add_argument("--label-column", default="label")
    e.add_argument("--groups", help="column of group ids for FSC")
    e.add_argument("--split-column", help="column of split ids for the per-split coverage report")
    e.add_argument("--size-bins", type=parse_size_bins, help="lower edges, e.g. 1,2,3+")
    e.add_argument("--alpha", type=_unit_interval("alpha"), default=0.1)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="run a synthetic repeated-split experiment")
    s.add_argument("--world", required=True, choices=sorted(WORLDS))
    s.add_argument("--method", choices=CONFORMAL_METHODS + ("rcps",))
    s.add_argument("--knob", type=float, default=0.0, help="miscalibration strength")
    s.add_argument("--alpha", type=_unit_interval("alpha"), default=0.1)
    s.add_argument("--delta", type=_unit_interval("delta"), default=0.1)
    s.add_argument("--n", type=_positive_int, default=500, help="calibration size per split")
    s.add_argument("--n-val", type=_positive_int, default=None, help="validation size per split (default: --n)")
    s.add_argument("--splits", type=_positive_int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--adversarial-frac", type=float, default=0.0)
    s.add_argument("--grid-size", type=_positive_int, default=200, help="lambda grid points (rcps)")
    s.add_argument("--n-fresh", type=_positive_int, default=20_000, help="fresh draws for the true-risk estimate")
    s.add_argument("--save-pixels", action="store_true", help="also write pixel scores (rcps)")
    s.add_argument("--threads", type=int, default=None, help="worker threads for splits")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except LossContractError as e:
        where = f" (row {e.row})" if e.row is not None else ""
        print(f"error: loss-table contract violated{where}: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
