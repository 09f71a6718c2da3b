"""Coverage, set-size and conditional-coverage diagnostics.

Stratified metrics (FSC over feature groups, SSC over set-size bins) are
the minimum coverage over non-empty strata. Since pooled coverage is a
weighted average of stratum coverages, both sit at or below it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._runtime import make_rng, parallel_map
from .calibrate import conformal_quantile
from .core import Dataset, Interval, Labels, Mask, ValidationError
from .rcps import LossTable, select_lambda
from .scores import get_family

DEFAULT_SIZE_BINS = (1, 2, 3)


class EmptyStratumWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageReport:
    per_split_coverage: np.ndarray
    n_val: int
    alpha: float
    thresholds: Optional[np.ndarray] = None
    mean_sizes: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.per_split_coverage, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValidationError("coverage report needs at least one split")
        if np.any(c < 0) or np.any(c > 1):
            raise ValidationError("split coverages must lie in [0, 1]")
        object.__setattr__(self, "per_split_coverage", c)

    @property
    def n_splits(self) -> int:
        return self.per_split_coverage.size

    @property
    def mean(self) -> float:
        return float(self.per_split_coverage.mean())

    @property
    def min(self) -> float:
        return float(self.per_split_coverage.min())

    @property
    def max(self) -> float:
        return float(self.per_split_coverage.max())

    def summary(self) -> dict:
        out = {
            "alpha": self.alpha,
            "n_splits": self.n_splits,
            "n_val": self.n_val,
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
        }
        if self.mean_sizes is not None:
            out["mean_size"] = float(np.mean(self.mean_sizes))
        return out


@dataclass(frozen=True)
class SizeReport:
    sizes: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float = field(init=False)
    std: float = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.sizes, dtype=float)
        if np.any(s < 0):
            raise ValidationError("set sizes must be nonnegative")
        object.__setattr__(self, "sizes", s)
        object.__setattr__(self, "mean", float(s.mean()) if s.size else float("nan"))
        object.__setattr__(self, "std", float(s.std()) if s.size else float("nan"))


@dataclass(frozen=True)
class RiskReport:
    """RCPS behaviour over repeated calibration/validation splits."""

    per_split_risk: np.ndarray
    per_split_lambda: np.ndarray
    alpha: float
    delta: float
    n_cal: int
    n_val: int
    per_split_size: Optional[np.ndarray] = None

    @property
    def n_splits(self) -> int:
        return int(np.asarray(self.per_split_risk).size)

    @property
    def violation_rate(self) -> float:
        return float(np.mean(np.asarray(self.per_split_risk) > self.alpha))

    def summary(self) -> dict:
        out = {
            "alpha": self.alpha,
            "delta": self.delta,
            "n_cal": self.n_cal,
            "n_val": self.n_val,
            "n_splits": self.n_splits,
            "mean_risk": float(np.mean(self.per_split_risk)),
            "max_risk": float(np.max(self.per_split_risk)),
            "violation_rate": self.violation_rate,
        }
        if self.per_split_size is not None:
            out["mean_size"] = float(np.mean(self.per_split_size))
        return out


# ---------------------------------------------------------------------------
# Coverage and set size
# ---------------------------------------------------------------------------


def covered_flags(labels: Sequence, sets: Sequence) -> np.ndarray:
    """Element-wise ``label in set``; empty sets never cover."""
    if len(labels) != len(sets):
        raise ValidationError(f"{len(labels)} labels but {len(sets)} sets")
    if len(sets) == 0:
        raise ValidationError("coverage of an empty sample is undefined")
    out = np.empty(len(sets), dtype=bool)
    for i, (y, s) in enumerate(zip(labels, sets)):
        if isinstance(s, Mask):
            out[i] = not np.any(np.asarray(y.pixels if isinstance(y, Mask) else y, bool) & ~s.pixels)
        else:
            out[i] = y in s
    return out


def coverage(labels: Sequence, sets: Sequence) -> float:
    """Fraction of examples whose label lies in its prediction set."""
    return float(covered_flags(labels, sets).mean())


def set_size(pred) -> float:
    """Cardinality of a label set, length of an interval, pixel count of a mask."""
    if isinstance(pred, (Labels, Interval, Mask)):
        return pred.size
    raise TypeError(f"unsupported prediction set {type(pred).__name__}")


def size_report(sizes, bins=None) -> SizeReport:
    """Histogram of set sizes.

    ``bins`` is anything ``np.histogram`` accepts; by default integer sizes
    get one bin per value and real sizes 20 equal-width bins.
    """
    s = np.asarray(sizes, dtype=float)
    if bins is None:
        if s.size and np.all(s == np.round(s)):
            bins = np.arange(s.min(), s.max() + 2) - 0.5
        else:
            bins = 20
    counts, edges = np.histogram(s, bins=bins)
    return SizeReport(sizes=s, bin_edges=edges, counts=counts)


# ---------------------------------------------------------------------------
# Conditional coverage
# ---------------------------------------------------------------------------


def stratified_coverage(covered, strata) -> dict[int, float]:
    """Coverage within each non-empty stratum, keyed by stratum id."""
    covered = np.asarray(covered, dtype=bool)
    strata = np.asarray(strata)
    if covered.shape != strata.shape:
        raise ValidationError("one stratum id per example is required")
    return {int(g): float(covered[strata == g].mean()) for g in np.unique(strata)}


def _min_over_strata(covered, strata, declared: Optional[Sequence[int]] = None) -> float:
    per = stratified_coverage(covered, strata)
    if declared is not None:
        missing = sorted(set(int(g) for g in declared) - set(per))
        if missing:
            warnings.warn(
                f"strata {missing} are empty and were left out of the minimum",
                EmptyStratumWarning,
                stacklevel=3,
            )
    if not per:
        raise ValidationError("no occupied strata")
    return min(per.values())


def fsc(labels, sets, groups, all_groups: Optional[Sequence[int]] = None) -> float:
    """Feature-stratified coverage: the worst per-group coverage.

    Groups listed in ``all_groups`` but absent from the data are skipped
    with an :class:`EmptyStratumWarning`.
    """
    return fsc_from_covered(covered_flags(labels, sets), groups, all_groups)


def fsc_from_covered(covered, groups, all_groups=None) -> float:
    return _min_over_strata(covered, groups, all_groups)


def size_bin_ids(sizes, edges: Sequence[float] = DEFAULT_SIZE_BINS) -> np.ndarray:
    """Bin index of each size given ascending lower edges.

    Bin ``g`` holds sizes in ``[edges[g], edges[g + 1])``; the last bin is
    open above and sizes below ``edges[0]`` fall into the first bin.
    """
    e = np.asarray(edges, dtype=float)
    if e.ndim != 1 or e.size < 1 or np.any(np.diff(e) <= 0):
        raise ValidationError("size bin edges must be strictly increasing")
    ids = np.searchsorted(e, np.asarray(sizes, dtype=float), side="right") - 1
    return np.clip(ids, 0, e.size - 1)


def ssc(labels, sets, edges: Sequence[float] = DEFAULT_SIZE_BINS) -> float:
    """Size-stratified coverage: the worst coverage over set-size bins."""
    sizes = [set_size(s) for s in sets]
    return ssc_from_covered(covered_flags(labels, sets), sizes, edges)


def ssc_from_covered(covered, sizes, edges: Sequence[float] = DEFAULT_SIZE_BINS) -> float:
    return _min_over_strata(covered, size_bin_ids(sizes, edges))


def equal_frequency_bins(values, n_bins: int) -> np.ndarray:
    """Bin a continuous feature into ``n_bins`` groups of (nearly) equal count."""
    v = np.asarray(values, dtype=float)
    if n_bins < 1:
        raise ValidationError("need at least one bin")
    cuts = np.quantile(v, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(cuts, v, side="right")


# ---------------------------------------------------------------------------
# Repeated splits
# ---------------------------------------------------------------------------


def _split(N: int, n_cal: int, rng: np.random.Generator):
    perm = rng.permutation(N)
    return perm[:n_cal], perm[n_cal:]


def _resolve_n_cal(N: int, n_cal: Optional[int], cal_fraction: float) -> int:
    if n_cal is None:
        n_cal = int(round(N * cal_fraction))
    if n_cal < 1 or N - n_cal < 1:
        raise ValidationError(
            f"dataset of {N} examples cannot give non-empty calibration ({n_cal}) "
            "and validation halves"
        )
    return n_cal


def coverage_over_splits(
    dataset: Dataset,
    method: str,
    alpha: float,
    n_splits: int = 100,
    seed: int = 0,
    n_cal: Optional[int] = None,
    cal_fraction: float = 0.5,
    n_jobs: Optional[int] = None,
) -> CoverageReport:
    """Calibrate on a random subset and measure coverage on the rest, repeatedly.

    Split ``j`` draws its permutation from the stream ``(seed, j)``, so the
    report is identical for any ``n_jobs``.
    """
    if n_splits < 1:
        raise ValidationError("need at least one split")
    family = get_family(method)
    if dataset.kind != family.kind:
        raise ValidationError(f"method {method!r} needs {family.kind} outputs, got {dataset.kind}")
    N = len(dataset)
    n_cal = _resolve_n_cal(N, n_cal, cal_fraction)
    scores = family.score(dataset.outputs, dataset.labels)

    def run(j: int):
        cal, val = _split(N, n_cal, make_rng(seed, j))
        qhat = conformal_quantile(scores[cal], alpha)
        outs, labs = dataset.outputs[val], dataset.labels[val]
        cov = family.covered(outs, labs, qhat).mean()
        return cov, qhat, family.size(outs, qhat).mean()

    results = parallel_map(run, range(n_splits), n_jobs)
    cov, qhat, size = (np.array(col, dtype=float) for col in zip(*results))
    return CoverageReport(
        per_split_coverage=cov, n_val=N - n_cal, alpha=alpha, thresholds=qhat, mean_sizes=size
    )


def risk_over_splits(
    table: LossTable,
    alpha: float,
    delta: float,
    n_cal: int,
    n_splits: int = 100,
    seed: int = 0,
    sizes: Optional[np.ndarray] = None,
    n_jobs: Optional[int] = None,
) -> RiskReport:
    """Select lambda on ``n_cal`` random rows; report held-out risk at it.

    ``sizes``, when given, is an (n, len(lambdas)) table of set sizes used
    to report the mean held-out set size at the selected lambda.
    """
    N = table.n
    n_cal = _resolve_n_cal(N, n_cal, 0.5)

    def run(j: int):
        cal, val = _split(N, n_cal, make_rng(seed, j))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            art = select_lambda(table.subset(cal), alpha, delta)
        k = int(art.metadata["index"])
        risk = table.losses[val, k].mean()
        size = np.nan if sizes is None else sizes[val, k].mean()
        return risk, art.threshold, size

    results = parallel_map(run, range(n_splits), n_jobs)
    risk, lam, size = (np.array(col, dtype=float) for col in zip(*results))
    return RiskReport(
        per_split_risk=risk,
        per_split_lambda=lam,
        alpha=alpha,
        delta=delta,
        n_cal=n_cal,
        n_val=N - n_cal,
        per_split_size=None if sizes is None else size,
    )
