"""Split-conformal calibration."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import CalibrationArtifact, ScoreRecord, ValidationError

JITTER_SCALE = 1e-9


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")


def quantile_index(n: int, alpha: float) -> int:
    """1-based order-statistic index ``ceil((n + 1)(1 - alpha))``.

    ``alpha`` is read through its shortest decimal repr, so ``alpha=0.3``
    means exactly 3/10 and float noise cannot push the ceiling up by one.
    """
    _check_alpha(alpha)
    if n < 1:
        raise ValidationError("need at least one calibration score")
    level = (n + 1) * (1 - Fraction(repr(float(alpha))))
    return math.ceil(level)


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """The ``k``-th smallest score with ``k = ceil((n + 1)(1 - alpha))``.

    No interpolation is done. When ``k > n`` the requested level cannot be
    certified with this many scores and ``+inf`` is returned, which makes
    every downstream set maximal.

    Parameters
    ----------
    scores : array-like of shape (n,)
        Finite calibration scores.
    alpha : float
        Target miscoverage in (0, 1).

    Returns
    -------
    float
        The threshold, possibly ``inf``.

    Examples
    --------
    >>> conformal_quantile([0.1, 0.3, 0.5, 0.7, 0.9], alpha=0.5)
    0.5
    >>> conformal_quantile([0.4], alpha=0.1)
    inf
    """
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValidationError("need at least one calibration score")
    if not np.all(np.isfinite(s)):
        raise ValidationError("calibration scores must be finite")
    k = quantile_index(s.size, alpha)
    if k > s.size:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


def calibrate(
    records: Iterable[ScoreRecord] | Sequence[float] | np.ndarray,
    alpha: float,
    method: str,
    jitter: bool = False,
    rng: Optional[np.random.Generator] = None,
    metadata: Optional[dict] = None,
) -> CalibrationArtifact:
    """Fit the conformal threshold and wrap it in an artifact.

    ``records`` may be ``ScoreRecord`` objects or plain scores. With
    ``jitter=True`` each score receives uniform noise of magnitude
    ``JITTER_SCALE`` to break ties (``rng`` is then required).
    """
    scores = np.array(
        [r.score if isinstance(r, ScoreRecord) else r for r in records], dtype=float
    )
    if jitter:
        if rng is None:
            raise ValidationError("jitter needs an explicit rng")
        scores = scores + rng.uniform(-JITTER_SCALE, JITTER_SCALE, size=scores.shape)
    qhat = conformal_quantile(scores, alpha)
    meta = {"k": str(quantile_index(scores.size, alpha))}
    if math.isinf(qhat):
        meta["vacuous"] = "true"
    if metadata:
        meta.update({str(k): str(v) for k, v in metadata.items()})
    return CalibrationArtifact(
        method=method, alpha=alpha, n=int(scores.size), threshold=qhat, metadata=meta
    )
