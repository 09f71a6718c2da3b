"""Risk-controlling prediction sets.

Set families are indexed so that a larger ``lambda`` gives a larger set.
For pixel scores, the mask for ``lambda`` keeps pixels whose score is at
least ``1 - lambda``, so ``lambda = 1`` keeps every pixel and has zero
false-negative loss.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    CalibrationArtifact,
    Interval,
    Labels,
    LossContractError,
    Mask,
    MonotonicityError,
    PixelScores,
    RiskCurve,
    ValidationError,
)
from .scores import set_lac

DEFAULT_GRID_SIZE = 200
PIXEL_PARAMETERIZATION = "lambda = 1 - raw pixel threshold"
_MONOTONE_TOL = 1e-12


class LambdaFallbackWarning(UserWarning):
    """Even the largest set's bound misses the risk target."""


@dataclass(frozen=True)
class LossTable:
    """Per-example losses over an ascending lambda grid.

    ``losses[i, j]`` is the loss of example ``i`` under the set for
    ``lambdas[j]``. Rows must be non-increasing and the last column (the
    largest set) must be all zeros.
    """

    lambdas: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lambdas, dtype=float)
        L = np.array(self.losses, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise ValidationError("lambda grid must be non-empty")
        if np.any(np.isnan(lam)) or np.any(np.diff(lam) <= 0):
            raise ValidationError("lambda grid must be strictly increasing")
        if L.ndim != 2 or L.shape[1] != lam.size or L.shape[0] < 1:
            raise ValidationError(
                f"losses must have shape (n, {lam.size}), got {L.shape}"
            )
        if np.any(np.isnan(L)) or np.any(L < 0) or np.any(L > 1):
            raise ValidationError("losses must lie in [0, 1]")
        bad = np.flatnonzero(np.any(np.diff(L, axis=1) > _MONOTONE_TOL, axis=1))
        if bad.size:
            row = int(bad[0])
            raise MonotonicityError(
                f"loss row {row} increases with lambda; the loss or the set "
                "parameterization is not monotone",
                row=row,
            )
        nonzero = np.flatnonzero(L[:, -1] != 0)
        if nonzero.size:
            row = int(nonzero[0])
            raise LossContractError(
                f"loss at lambda_max must be 0 (row {row} has {L[row, -1]:g}); "
                "add a sentinel lambda that predicts everything",
                row=row,
            )
        lam.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "losses", L)

    @property
    def n(self) -> int:
        return self.losses.shape[0]

    def subset(self, idx) -> "LossTable":
        return LossTable(self.lambdas, self.losses[idx])


def default_lambda_grid(n_points: int = DEFAULT_GRID_SIZE, lam_min=0.0, lam_max=1.0) -> np.ndarray:
    """Uniform grid including both endpoints."""
    if n_points < 2:
        raise ValidationError("grid needs at least 2 points")
    grid = np.linspace(lam_min, lam_max, n_points)
    grid[0], grid[-1] = lam_min, lam_max
    return grid


# ---------------------------------------------------------------------------
# Losses and set families
# ---------------------------------------------------------------------------


def raw_threshold(lam):
    """Map a nesting-order lambda to the raw pixel threshold."""
    return 1.0 - np.asarray(lam, dtype=float)


def pixel_threshold_set(output: PixelScores, lam: float) -> Mask:
    return Mask(output.values >= raw_threshold(lam))


def lac_threshold_set(output, lam: float) -> Labels:
    """LAC sets indexed by the threshold itself (``+inf`` keeps every class)."""
    return set_lac(output, lam)


def loss_fnr(truth: Mask, pred: Mask) -> float:
    """Fraction of positive truth pixels missing from ``pred``.

    An empty truth mask has nothing to miss and scores 0.
    """
    if truth.shape != pred.shape:
        raise ValidationError(f"mask shapes differ: {truth.shape} vs {pred.shape}")
    positives = int(truth.pixels.sum())
    if positives == 0:
        return 0.0
    hit = int(np.logical_and(truth.pixels, pred.pixels).sum())
    return (positives - hit) / positives


def loss_miscoverage(truth, pred) -> float:
    """0 if ``truth`` lies in ``pred``, else 1."""
    if isinstance(pred, Mask):
        if not isinstance(truth, Mask):
            raise TypeError("a mask prediction needs a mask truth")
        return 0.0 if not np.any(truth.pixels & ~pred.pixels) else 1.0
    if isinstance(pred, Labels):
        if isinstance(truth, (float, np.floating)) and not float(truth).is_integer():
            raise TypeError("label sets need an integer truth")
        return 0.0 if truth in pred else 1.0
    if isinstance(pred, Interval):
        if isinstance(truth, Mask):
            raise TypeError("an interval prediction needs a real truth")
        return 0.0 if truth in pred else 1.0
    raise TypeError(f"unsupported prediction set {type(pred).__name__}")


def build_loss_table(
    truths: Sequence,
    outputs: Sequence,
    lambdas,
    loss: Callable = loss_fnr,
    family: Callable = pixel_threshold_set,
) -> LossTable:
    """Evaluate ``loss(truth, family(output, lam))`` over the grid.

    This is the generic, per-example path. For large pixel batches use
    :func:`fnr_loss_table`.
    """
    if len(truths) != len(outputs):
        raise ValidationError("truths and outputs differ in length")
    lam = np.asarray(lambdas, dtype=float)
    rows = np.empty((len(truths), lam.size))
    for i, (truth, out) in enumerate(zip(truths, outputs)):
        for j, l in enumerate(lam):
            rows[i, j] = loss(truth, family(out, l))
    return LossTable(lam, rows)


def fnr_loss_table(masks: np.ndarray, scores: np.ndarray, lambdas) -> LossTable:
    """Vectorized FNR table for pixel-threshold sets.

    ``masks`` is (n, d1, d2) boolean truth, ``scores`` (n, d1, d2) in [0, 1].
    """
    masks = np.asarray(masks, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    if masks.shape != scores.shape or masks.ndim != 3:
        raise ValidationError("masks and scores must share an (n, d1, d2) shape")
    lam = np.asarray(lambdas, dtype=float)
    thresholds = raw_threshold(lam)
    n = masks.shape[0]
    flat_m = masks.reshape(n, -1)
    flat_s = scores.reshape(n, -1)
    losses = np.zeros((n, lam.size))
    for i in range(n):
        pos = np.sort(flat_s[i][flat_m[i]])
        if pos.size == 0:
            continue
        missed = np.searchsorted(pos, thresholds, side="left")
        losses[i] = missed / pos.size
    return LossTable(lam, losses)


def mask_size_table(scores: np.ndarray, lambdas) -> np.ndarray:
    """Pixel count of each thresholded mask, shape (n, len(lambdas))."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    flat = np.sort(scores.reshape(n, -1), axis=1)
    thresholds = raw_threshold(lambdas)
    d = flat.shape[1]
    return np.stack([d - np.searchsorted(row, thresholds, side="left") for row in flat]).astype(float)


# ---------------------------------------------------------------------------
# Upper confidence bound and lambda selection
# ---------------------------------------------------------------------------


def hoeffding_slack(n: int, delta: float) -> float:
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0 < delta < 1:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(math.log(1.0 / delta) / (2.0 * n))


def hoeffding_ucb(mean_loss, n: int, delta: float):
    """Empirical mean plus the Hoeffding slack ``sqrt(log(1/delta) / 2n)``.

    Not clamped to 1; only comparisons against ``alpha`` use it.
    """
    m = np.asarray(mean_loss, dtype=float)
    if np.any(m < 0) or np.any(m > 1):
        raise ValidationError("mean loss must lie in [0, 1]")
    out = m + hoeffding_slack(n, delta)
    return float(out) if out.ndim == 0 else out


def risk_curve(table: LossTable, delta: float) -> RiskCurve:
    risk = table.losses.mean(axis=0)
    ucb = hoeffding_ucb(risk, table.n, delta)
    return RiskCurve(
        lambdas=table.lambdas,
        empirical_risk=risk,
        ucb=np.atleast_1d(ucb),
        lambda_max_included=bool(np.all(table.losses[:, -1] == 0)),
    )


def scan_ucb(ucb, alpha: float) -> tuple[int, bool]:
    """Leftmost index of the rightmost run of ``ucb < alpha``.

    Returns ``(index, ok)``. When even the last entry fails, ``ok`` is
    False and the last index is returned.
    """
    u = np.asarray(ucb, dtype=float)
    if u.size == 0:
        raise ValidationError("empty lambda grid")
    j = u.size - 1
    if not u[j] < alpha:
        return j, False
    while j > 0 and u[j - 1] < alpha:
        j -= 1
    return j, True


def select_lambda(
    table: LossTable,
    alpha: float,
    delta: float,
    parameterization: Optional[str] = None,
) -> CalibrationArtifact:
    """Smallest grid lambda whose UCB, and every larger one's, is below ``alpha``."""
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    curve = risk_curve(table, delta)
    j, ok = scan_ucb(curve.ucb, alpha)
    meta = {
        "index": str(j),
        "ucb": repr(float(curve.ucb[j])),
        "empirical_risk": repr(float(curve.empirical_risk[j])),
        "grid_size": str(table.lambdas.size),
    }
    if parameterization:
        meta["parameterization"] = parameterization
    if not ok:
        meta["lambda_max_fallback"] = "true"
        warnings.warn(
            f"Hoeffding slack {hoeffding_slack(table.n, delta):.4g} leaves no lambda "
            f"with UCB below alpha={alpha}; returning lambda_max",
            LambdaFallbackWarning,
            stacklevel=2,
        )
    return CalibrationArtifact(
        method="rcps",
        alpha=alpha,
        delta=delta,
        n=table.n,
        threshold=float(table.lambdas[j]),
        metadata=meta,
    )
