"""Domain types shared across the toolkit.

Every type validates its invariants on construction and is immutable
afterwards; numpy payloads are copied and marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

SOFTMAX_TOL = 1e-6

METHODS = ("lac", "aps", "cqr", "scalar", "bayes", "rcps")


class ValidationError(ValueError):
    """A value violates a documented invariant."""


class DegenerateScaleError(ValidationError):
    """An uncertainty scalar of zero makes the normalized score undefined."""


class LabelIndexError(ValidationError, IndexError):
    """A class or grid index lies outside the label space."""


class LossContractError(ValidationError):
    """A loss table breaks an assumption the risk guarantee depends on."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class MonotonicityError(LossContractError):
    """A loss row increases as the prediction sets grow."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Label spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelSpace:
    """Classification (``n_classes``), a uniform 1-D grid, or pixel dims.

    Exactly one of the three descriptions must be given.
    """

    n_classes: Optional[int] = None
    grid: Optional[tuple[float, float, int]] = None
    shape: Optional[tuple[int, int]] = None

    def __post_init__(self):
        given = [x is not None for x in (self.n_classes, self.grid, self.shape)]
        if sum(given) != 1:
            raise ValidationError("LabelSpace needs exactly one of n_classes, grid, shape")
        if self.n_classes is not None and self.n_classes < 1:
            raise ValidationError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.grid is not None:
            y_min, y_max, m = self.grid
            if not y_min < y_max:
                raise ValidationError("grid needs y_min < y_max")
            if m < 2:
                raise ValidationError("grid needs at least 2 points")
        if self.shape is not None and min(self.shape) < 1:
            raise ValidationError("pixel dimensions must be >= 1")

    def grid_points(self) -> np.ndarray:
        if self.grid is None:
            raise ValidationError("not a grid label space")
        y_min, y_max, m = self.grid
        return np.linspace(y_min, y_max, int(m))


# ---------------------------------------------------------------------------
# Model outputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Softmax:
    """Class probabilities for one example.

    Vectors whose sum is within ``SOFTMAX_TOL`` of one are renormalized;
    anything further off is rejected.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValidationError("softmax must be a non-empty 1-D vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValidationError("softmax entries must lie in [0, 1]")
        total = p.sum()
        if abs(total - 1.0) > SOFTMAX_TOL:
            raise ValidationError(f"softmax sums to {total!r}, not 1")
        if total != 1.0:
            p = p / total
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def n_classes(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class QuantilePair:
    """Lower and upper fitted quantiles. Crossed pairs are allowed."""

    t_lo: float
    t_hi: float

    def __post_init__(self):
        if math.isnan(self.t_lo) or math.isnan(self.t_hi):
            raise ValidationError("quantiles must not be NaN")


@dataclass(frozen=True)
class PointScale:
    """Point prediction ``f`` with a nonnegative uncertainty scalar ``u``."""

    f: float
    u: float

    def __post_init__(self):
        if not math.isfinite(self.f):
            raise ValidationError("point prediction must be finite")
        if not self.u >= 0 or not math.isfinite(self.u):
            raise ValidationError(f"uncertainty scalar must be finite and >= 0, got {self.u}")


@dataclass(frozen=True)
class Density:
    """Nonnegative predictive density values on a fixed grid."""

    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.values, dtype=float)
        if d.ndim != 1 or d.size < 2:
            raise ValidationError("density needs at least 2 grid values")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValidationError("density values must be finite and nonnegative")
        object.__setattr__(self, "values", _frozen(d))


@dataclass(frozen=True)
class PixelScores:
    """Per-pixel scores in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or min(v.shape) < 1:
            raise ValidationError("pixel scores must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ValidationError("pixel scores must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))


ModelOutput = Union[Softmax, QuantilePair, PointScale, Density, PixelScores]


# ---------------------------------------------------------------------------
# Calibration records and prediction sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRecord:
    score: float
    group: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValidationError(f"score must be finite, got {self.score!r}")


@dataclass(frozen=True)
class Labels:
    """A discrete label set, stored as sorted unique class indices.

    ``n_classes`` only validates the indices; two sets with the same
    indices compare equal.
    """

    indices: tuple[int, ...]
    n_classes: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValidationError("label indices must be unique")
        if idx and idx[0] < 0:
            raise ValidationError("label indices must be >= 0")
        if self.n_classes is not None and idx and idx[-1] >= self.n_classes:
            raise ValidationError(f"label index {idx[-1]} outside [0, {self.n_classes})")
        object.__setattr__(self, "indices", idx)

    def __contains__(self, y) -> bool:
        return int(y) in self.indices

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def size(self) -> float:
        return float(len(self.indices))


@dataclass(frozen=True)
class Interval:
    """A closed real interval; empty when ``lo > hi``."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValidationError("interval endpoints must not be NaN")

    @property
    def empty(self) -> bool:
        return self.lo > self.hi

    def __contains__(self, y) -> bool:
        return self.lo <= y <= self.hi

    @property
    def size(self) -> float:
        return 0.0 if self.empty else self.hi - self.lo


@dataclass(frozen=True)
class Mask:
    """Binary pixel mask."""

    pixels: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.pixels)
        if m.ndim != 2 or min(m.shape) < 1:
            raise ValidationError("mask must be a non-empty 2-D matrix")
        if m.dtype != bool:
            if not np.all((m == 0) | (m == 1)):
                raise ValidationError("mask entries must be 0 or 1")
        object.__setattr__(self, "pixels", _frozen(m, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def size(self) -> float:
        return float(self.pixels.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


PredictionSet = Union[Labels, Interval, Mask]


# ---------------------------------------------------------------------------
# Calibration products
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationArtifact:
    """Fitted threshold plus the settings that produced it.

    ``threshold`` is the conformal quantile for conformal methods and the
    selected lambda for ``rcps``; it may be ``+inf`` or ``-inf``.
    """

    method: str
    alpha: float
    n: int
    threshold: float
    delta: Optional[float] = None
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.method == "rcps":
            if self.delta is None or not 0 < self.delta < 1:
                raise ValidationError("rcps artifacts need delta in (0, 1)")
        elif self.delta is not None and not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n}")
        if math.isnan(self.threshold):
            raise ValidationError("threshold must not be NaN")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "metadata", dict(self.metadata))


@dataclass(frozen=True)
class RiskCurve:
    lambdas: np.ndarray
    empirical_risk: np.ndarray
    ucb: np.ndarray
    lambda_max_included: bool

    def __post_init__(self):
        lam = _frozen(self.lambdas)
        risk = _frozen(self.empirical_risk)
        ucb = _frozen(self.ucb)
        if lam.ndim != 1 or lam.size < 1:
            raise ValidationError("lambda grid must be a non-empty 1-D array")
        if np.any(np.diff(lam) <= 0):
            raise ValidationError("lambda grid must be strictly increasing")
        if risk.shape != lam.shape or ucb.shape != lam.shape:
            raise ValidationError("risk and ucb must match the lambda grid")
        slack = ucb - risk
        if np.any(slack <= 0) or not np.allclose(slack, slack[0], rtol=0, atol=1e-12):
            raise ValidationError("ucb slack must be positive and constant across the grid")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "empirical_risk", risk)
        object.__setattr__(self, "ucb", ucb)


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

OUTPUT_KINDS = ("softmax", "quantile", "point_scale", "density", "pixel")


@dataclass(frozen=True)
class Dataset:
    """A batch of model outputs with their ground truth.

    ``outputs`` layout by ``kind``: softmax (n, K); quantile (n, 2) as
    ``t_lo, t_hi``; point_scale (n, 2) as ``f, u``; density (n, m);
    pixel (n, d1, d2). ``labels`` holds class indices, real targets,
    grid indices, or (n, d1, d2) boolean masks respectively.
    """

    kind: str
    outputs: np.ndarray
    labels: np.ndarray
    groups: Optional[np.ndarray] = None
    grid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in OUTPUT_KINDS:
            raise ValidationError(f"unknown output kind {self.kind!r}")
        outputs = _frozen(self.outputs)
        labels = np.array(self.labels, copy=True)
        labels.setflags(write=False)
        if outputs.shape[0] != labels.shape[0]:
            raise ValidationError("outputs and labels differ in length")
        if self.groups is not None:
            groups = _frozen(self.groups, dtype=int)
            if groups.shape != (outputs.shape[0],):
                raise ValidationError("one group id per example is required")
            object.__setattr__(self, "groups", groups)
        if self.grid is not None:
            object.__setattr__(self, "grid", _frozen(self.grid))
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.outputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            kind=self.kind,
            outputs=self.outputs[idx],
            labels=self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
            grid=self.grid,
        )
