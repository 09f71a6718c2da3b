"""Conformal scores and thresholded prediction sets for five score families.

Each family comes in two forms: per-example functions that take the
``core`` model-output types, and batch kernels over numpy arrays used by
the evaluation pipelines. The per-example functions are thin wrappers over
the batch kernels so the two can never drift apart.

Inclusion conventions (``q`` is the calibrated threshold):

========  ==========================================  ==========
family    set                                          strictness
========  ==========================================  ==========
lac       ``{y : p_y > 1 - q}``                         strict
aps       first ``k`` sorted classes, ``k`` the first   --
          prefix whose mass reaches ``q``
cqr       ``[t_lo - q, t_hi + q]``                      closed
scalar    ``[f - u q, f + u q]``                        closed
bayes     ``{y : d_y > -q}``                            strict
========  ==========================================  ==========
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    DegenerateScaleError,
    Density,
    Interval,
    LabelIndexError,
    Labels,
    PointScale,
    QuantilePair,
    Softmax,
    ValidationError,
)


class CrossedQuantileWarning(UserWarning):
    pass


def _check_index(index, size: int, what: str = "class") -> int:
    i = int(index)
    if i != index or not 0 <= i < size:
        raise LabelIndexError(f"{what} index {index!r} outside [0, {size})")
    return i


def _label_column(labels, n_rows: int, n_cols: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n_rows,):
        raise ValidationError("one label per row is required")
    yi = y.astype(np.int64)
    if np.any(yi != y) or np.any(yi < 0) or np.any(yi >= n_cols):
        raise LabelIndexError(f"label indices must be integers in [0, {n_cols})")
    return yi


# ---------------------------------------------------------------------------
# Sorted softmax
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SortedSoftmax:
    """Softmax values in descending order with the permutation back to classes.

    Ties are broken by ascending class index.
    """

    probs: np.ndarray
    perm: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> "SortedSoftmax":
        p = np.asarray(probs, dtype=float)
        perm = np.argsort(-p, kind="stable")
        return cls(probs=p[perm], perm=perm)


def sort_softmax(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise descending sort; returns ``(perm, sorted_probs)``."""
    perm = np.argsort(-probs, axis=1, kind="stable")
    return perm, np.take_along_axis(probs, perm, axis=1)


# ---------------------------------------------------------------------------
# Batch kernels
# ---------------------------------------------------------------------------


def lac_scores(probs: np.ndarray, labels) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    y = _label_column(labels, *probs.shape)
    return 1.0 - probs[np.arange(probs.shape[0]), y]


def lac_sets(probs: np.ndarray, qhat: float) -> np.ndarray:
    """Boolean membership matrix of the LAC sets."""
    return np.asarray(probs, dtype=float) > 1.0 - qhat


def aps_scores(probs: np.ndarray, labels) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    y = _label_column(labels, *probs.shape)
    perm, sorted_p = sort_softmax(probs)
    cum = np.cumsum(sorted_p, axis=1)
    rank = np.argmax(perm == y[:, None], axis=1)
    return cum[np.arange(probs.shape[0]), rank]


def aps_sets(probs: np.ndarray, qhat: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    n, K = probs.shape
    perm, sorted_p = sort_softmax(probs)
    # prefix sums over 0..K classes; the empty prefix has mass 0
    prefix = np.zeros((n, K + 1))
    np.cumsum(sorted_p, axis=1, out=prefix[:, 1:])
    reached = prefix >= qhat
    k = np.where(reached.any(axis=1), np.argmax(reached, axis=1), K)
    in_sorted = np.arange(K)[None, :] < k[:, None]
    member = np.zeros((n, K), dtype=bool)
    np.put_along_axis(member, perm, in_sorted, axis=1)
    return member


def _warn_crossed(t_lo, t_hi) -> None:
    crossed = int(np.count_nonzero(np.asarray(t_lo) > np.asarray(t_hi)))
    if crossed:
        warnings.warn(
            f"{crossed} quantile pair(s) have t_lo > t_hi", CrossedQuantileWarning, stacklevel=3
        )


def cqr_scores(quantiles: np.ndarray, y) -> np.ndarray:
    q = np.asarray(quantiles, dtype=float)
    y = np.asarray(y, dtype=float)
    _warn_crossed(q[:, 0], q[:, 1])
    return np.maximum(q[:, 0] - y, y - q[:, 1])


def cqr_bounds(quantiles: np.ndarray, qhat: float) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(quantiles, dtype=float)
    return q[:, 0] - qhat, q[:, 1] + qhat


def _check_scale(u: np.ndarray) -> None:
    if np.any(u <= 0):
        raise DegenerateScaleError("uncertainty scalar must be > 0")


def scalar_scores(point_scale: np.ndarray, y) -> np.ndarray:
    ps = np.asarray(point_scale, dtype=float)
    _check_scale(ps[:, 1])
    return np.abs(np.asarray(y, dtype=float) - ps[:, 0]) / ps[:, 1]


def scalar_bounds(point_scale: np.ndarray, qhat: float) -> tuple[np.ndarray, np.ndarray]:
    ps = np.asarray(point_scale, dtype=float)
    _check_scale(ps[:, 1])
    half = ps[:, 1] * qhat
    return ps[:, 0] - half, ps[:, 0] + half


def bayes_scores(density: np.ndarray, y_index) -> np.ndarray:
    d = np.asarray(density, dtype=float)
    idx = _label_column(y_index, *d.shape)
    return -d[np.arange(d.shape[0]), idx]


def bayes_sets(density: np.ndarray, qhat: float) -> np.ndarray:
    return np.asarray(density, dtype=float) > -qhat


# ---------------------------------------------------------------------------
# Per-example operations
# ---------------------------------------------------------------------------


def score_lac(output: Softmax, true_class: int) -> float:
    """One minus the softmax value of the true class."""
    y = _check_index(true_class, output.n_classes)
    return float(lac_scores(output.probs[None, :], [y])[0])


def set_lac(output: Softmax, qhat: float) -> Labels:
    """Classes whose softmax value strictly exceeds ``1 - qhat``."""
    member = lac_sets(output.probs[None, :], qhat)[0]
    return Labels(tuple(np.flatnonzero(member)), n_classes=output.n_classes)


def score_aps(output: Softmax, true_class: int) -> float:
    """Cumulative sorted mass up to and including the true class."""
    y = _check_index(true_class, output.n_classes)
    return float(aps_scores(output.probs[None, :], [y])[0])


def set_aps(output: Softmax, qhat: float) -> Labels:
    """Shortest prefix of the sorted classes whose mass is at least ``qhat``.

    ``qhat <= 0`` is met by the empty prefix; a ``qhat`` above the total
    mass is never met and yields every class.
    """
    member = aps_sets(output.probs[None, :], qhat)[0]
    return Labels(tuple(np.flatnonzero(member)), n_classes=output.n_classes)


def score_cqr(output: QuantilePair, y: float) -> float:
    """Signed distance from ``y`` to the band ``[t_lo, t_hi]``; negative inside."""
    q = np.array([[output.t_lo, output.t_hi]])
    return float(cqr_scores(q, [y])[0])


def set_cqr(output: QuantilePair, qhat: float) -> Interval:
    lo, hi = cqr_bounds(np.array([[output.t_lo, output.t_hi]]), qhat)
    return Interval(float(lo[0]), float(hi[0]))


def score_scalar(output: PointScale, y: float) -> float:
    """Absolute residual in units of the uncertainty scalar."""
    return float(scalar_scores(np.array([[output.f, output.u]]), [y])[0])


def set_scalar(output: PointScale, qhat: float) -> Interval:
    lo, hi = scalar_bounds(np.array([[output.f, output.u]]), qhat)
    return Interval(float(lo[0]), float(hi[0]))


def score_bayes(output: Density, y_index: int) -> float:
    i = _check_index(y_index, output.values.size, what="grid")
    return float(bayes_scores(output.values[None, :], [i])[0])


def set_bayes(output: Density, qhat: float) -> Labels:
    """Grid indices whose density strictly exceeds ``-qhat``."""
    member = bayes_sets(output.values[None, :], qhat)[0]
    return Labels(tuple(np.flatnonzero(member)), n_classes=output.values.size)


# ---------------------------------------------------------------------------
# Family registry for batch pipelines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreFamily:
    """Batch view of one score family.

    ``covered`` reports set membership of each example's own label, and
    ``size`` the set cardinality (label sets) or length (intervals).
    """

    name: str
    kind: str
    score: Callable[[np.ndarray, np.ndarray], np.ndarray]
    covered: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    size: Callable[[np.ndarray, float], np.ndarray]


def _label_set_family(name, kind, score, sets) -> ScoreFamily:
    def covered(outputs, labels, qhat):
        member = sets(outputs, qhat)
        y = _label_column(labels, *member.shape)
        return member[np.arange(member.shape[0]), y]

    def size(outputs, qhat):
        return sets(outputs, qhat).sum(axis=1).astype(float)

    return ScoreFamily(name, kind, score, covered, size)


def _interval_family(name, kind, score, bounds) -> ScoreFamily:
    def covered(outputs, y, qhat):
        lo, hi = bounds(outputs, qhat)
        y = np.asarray(y, dtype=float)
        return (lo <= y) & (y <= hi)

    def size(outputs, qhat):
        lo, hi = bounds(outputs, qhat)
        with np.errstate(invalid="ignore"):
            return np.where(lo > hi, 0.0, hi - lo)

    return ScoreFamily(name, kind, score, covered, size)


FAMILIES: dict[str, ScoreFamily] = {
    "lac": _label_set_family("lac", "softmax", lac_scores, lac_sets),
    "aps": _label_set_family("aps", "softmax", aps_scores, aps_sets),
    "cqr": _interval_family("cqr", "quantile", cqr_scores, cqr_bounds),
    "scalar": _interval_family("scalar", "point_scale", scalar_scores, scalar_bounds),
    "bayes": _label_set_family("bayes", "density", bayes_scores, bayes_sets),
}


def get_family(method: str) -> ScoreFamily:
    try:
        return FAMILIES[method]
    except KeyError:
        raise ValidationError(
            f"no score family {method!r}; expected one of {sorted(FAMILIES)}"
        ) from None
