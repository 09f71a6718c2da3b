"""Synthetic worlds with known ground truth.

Three worlds stand in for trained models:

``categorical_classifier``
    Random logits with per-example difficulty; the model reports the true
    class probabilities passed through temperature ``exp(knob)``.
``gaussian_regression``
    ``Y | x ~ N(slope x + intercept, (noise (1 + hetero x))^2)`` with
    ``x ~ U(0, 1)``. The model's quantiles, scale and density are pulled
    toward the conditional mean by the factor ``exp(-knob)``.
``segmentation_blobs``
    Disk-shaped objects on a small image; pixel scores are a blurred,
    noisy version of the truth mask, blurrier as ``knob`` grows.

``knob = 0`` always means the model is exactly right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy import integrate, ndimage, special, stats

from ._runtime import make_rng
from .core import (
    CalibrationArtifact,
    Dataset,
    Density,
    Labels,
    Mask,
    PixelScores,
    PointScale,
    QuantilePair,
    Softmax,
    ValidationError,
)
from .rcps import raw_threshold
from .scores import aps_sets, cqr_bounds, get_family, lac_sets, scalar_bounds

KINDS = ("gaussian_regression", "categorical_classifier", "segmentation_blobs")

DEFAULT_PARAMS: dict[str, dict] = {
    "categorical_classifier": {
        "n_classes": 50,
        "scale_lo": 1.0,
        "scale_hi": 3.0,
        "group_probs": (0.5, 0.5),
        # logit scale of group 1 is multiplied by exp(-group_effect)
        "group_effect": 0.0,
        # frequency of an adversarial group whose top class is always wrong
        "adversarial_frac": 0.0,
    },
    "gaussian_regression": {
        "slope": 2.0,
        "intercept": 1.0,
        "noise": 1.0,
        "hetero": 1.0,
        # nominal miscoverage of the model's quantile pair
        "quantile_alpha": 0.1,
        "grid_points": 201,
        "n_groups": 2,
    },
    "segmentation_blobs": {
        "shape": (24, 24),
        "max_blobs": 3,
        "radius_lo": 2.0,
        "radius_hi": 6.0,
        "blur": 1.0,
        "noise": 0.6,
        "contrast_lo": 4.0,
        "contrast_hi": 12.0,
    },
}

DEFAULT_OUTPUT = {
    "categorical_classifier": "softmax",
    "gaussian_regression": "quantile",
    "segmentation_blobs": "pixel",
}

_CHUNK = 5000


@dataclass(frozen=True)
class WorldSpec:
    kind: str
    knob: float = 0.0
    seed: int = 0
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown world {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValidationError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        if not math.isfinite(self.knob):
            raise ValidationError("knob must be finite")
        p = merged
        if self.kind == "categorical_classifier":
            if p["n_classes"] < 2:
                raise ValidationError("need at least 2 classes")
            gp = np.asarray(p["group_probs"], dtype=float)
            if np.any(gp < 0) or abs(gp.sum() - 1) > 1e-9:
                raise ValidationError("group_probs must be a probability vector")
            if not 0 <= p["adversarial_frac"] < 1:
                raise ValidationError("adversarial_frac must lie in [0, 1)")
        elif self.kind == "gaussian_regression":
            if p["noise"] <= 0 or p["hetero"] < 0:
                raise ValidationError("noise must be > 0 and hetero >= 0")
            if not 0 < p["quantile_alpha"] < 1:
                raise ValidationError("quantile_alpha must lie in (0, 1)")
        else:
            if min(p["shape"]) < 1 or p["max_blobs"] < 1:
                raise ValidationError("invalid image shape or blob count")
            if not 0 < p["radius_lo"] <= p["radius_hi"]:
                raise ValidationError("invalid blob radius range")

    @property
    def shrink(self) -> float:
        return math.exp(-self.knob)

    def grid(self) -> np.ndarray:
        """Density grid for the gaussian world."""
        p = self.params
        smax = p["noise"] * (1 + p["hetero"])
        ends = (p["intercept"], p["intercept"] + p["slope"])
        return np.linspace(min(ends) - 5 * smax, max(ends) + 5 * smax, int(p["grid_points"]))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    return special.softmax(logits, axis=1)


def _categorical_latent(world: WorldSpec, n: int, rng: np.random.Generator):
    p = world.params
    K = int(p["n_classes"])
    groups = rng.choice(len(p["group_probs"]), size=n, p=np.asarray(p["group_probs"], float))
    scale = rng.uniform(p["scale_lo"], p["scale_hi"], size=n)
    scale = np.where(groups == 1, scale * math.exp(-p["group_effect"]), scale)
    logits = scale[:, None] * rng.standard_normal((n, K))
    return groups, logits


def _sample_categorical(world: WorldSpec, n: int, rng: np.random.Generator) -> Dataset:
    p = world.params
    K = int(p["n_classes"])
    groups, logits = _categorical_latent(world, n, rng)
    true_p = _softmax(logits)
    u = rng.uniform(size=(n, 1))
    labels = np.minimum((np.cumsum(true_p, axis=1) < u).sum(axis=1), K - 1)
    model = _softmax(logits / math.exp(world.knob))
    if p["adversarial_frac"] > 0:
        adversarial = rng.uniform(size=n) < p["adversarial_frac"]
        groups = adversarial.astype(int)
        # the model's favourite class is the truth in group 0, a wrong class in group 1
        target = np.where(adversarial, (labels + 1) % K, labels)
        peaked = logits.copy()
        peaked[np.arange(n), target] = logits.max(axis=1) + 4.0 * p["scale_hi"]
        model = _softmax(peaked / math.exp(world.knob))
    return Dataset("softmax", model, labels, groups=groups)


def _gaussian_moments(world: WorldSpec, x: np.ndarray):
    p = world.params
    mu = p["slope"] * x + p["intercept"]
    sigma = p["noise"] * (1 + p["hetero"] * x)
    return mu, sigma


def _gaussian_outputs(world: WorldSpec, x: np.ndarray, kind: str, grid: np.ndarray):
    mu, sigma = _gaussian_moments(world, x)
    s = world.shrink * sigma
    if kind == "quantile":
        z = stats.norm.ppf(1 - world.params["quantile_alpha"] / 2)
        return np.column_stack([mu - z * s, mu + z * s])
    if kind == "point_scale":
        return np.column_stack([mu, s])
    if kind == "density":
        return stats.norm.pdf(grid[None, :], loc=mu[:, None], scale=s[:, None])
    raise ValidationError(f"gaussian world has no {kind!r} output")


def grid_index(grid: np.ndarray, y) -> np.ndarray:
    """Index of the nearest grid point (ties go to the lower index)."""
    mids = (grid[1:] + grid[:-1]) / 2
    return np.searchsorted(mids, np.asarray(y, dtype=float), side="left")


def _sample_gaussian(world: WorldSpec, n: int, rng: np.random.Generator, kind: str) -> Dataset:
    x = rng.uniform(size=n)
    eps = rng.standard_normal(n)
    mu, sigma = _gaussian_moments(world, x)
    y = mu + sigma * eps
    grid = world.grid()
    outputs = _gaussian_outputs(world, x, kind, grid)
    groups = np.minimum((x * world.params["n_groups"]).astype(int), world.params["n_groups"] - 1)
    if kind == "density":
        return Dataset("density", outputs, grid_index(grid, y), groups=groups, grid=grid)
    return Dataset(kind, outputs, y, groups=groups)


def gaussian_features(world: WorldSpec, n: int, stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """The raw ``(x, y)`` pairs behind the gaussian world's outputs."""
    rng = make_rng(world.seed, stream)
    x = rng.uniform(size=n)
    eps = rng.standard_normal(n)
    mu, sigma = _gaussian_moments(world, x)
    return x, mu + sigma * eps


def _sample_segmentation_arrays(world: WorldSpec, n: int, rng: np.random.Generator):
    p = world.params
    d1, d2 = (int(v) for v in p["shape"])
    B = int(p["max_blobs"])
    n_blobs = rng.integers(1, B + 1, size=n)
    cy = rng.uniform(0, d1, size=(n, B))
    cx = rng.uniform(0, d2, size=(n, B))
    r = rng.uniform(p["radius_lo"], p["radius_hi"], size=(n, B))
    active = np.arange(B)[None, :] < n_blobs[:, None]
    yy = np.arange(d1)[None, None, :, None] + 0.5
    xx = np.arange(d2)[None, None, None, :] + 0.5
    dist2 = (yy - cy[:, :, None, None]) ** 2 + (xx - cx[:, :, None, None]) ** 2
    inside = (dist2 <= (r ** 2)[:, :, None, None]) & active[:, :, None, None]
    truth = inside.any(axis=1)
    # a blob centre always lands in some pixel
    iy = np.clip(cy[:, 0].astype(int), 0, d1 - 1)
    ix = np.clip(cx[:, 0].astype(int), 0, d2 - 1)
    truth[np.arange(n), iy, ix] = True

    blur = p["blur"] * (1.0 + max(world.knob, 0.0))
    smooth = ndimage.gaussian_filter(truth.astype(float), sigma=(0, blur, blur))
    noise = ndimage.gaussian_filter(rng.standard_normal((n, d1, d2)), sigma=(0, 1.0, 1.0))
    noise *= p["noise"] / max(noise.std(), 1e-12)
    contrast = rng.uniform(p["contrast_lo"], p["contrast_hi"], size=(n, 1, 1))
    scores = special.expit(contrast * (smooth - 0.5) + noise)
    return truth, scores


def sample_dataset(world: WorldSpec, n: int, output: Optional[str] = None, stream: int = 0) -> Dataset:
    """Draw ``n`` i.i.d. examples as a batch.

    ``output`` picks the model-output representation (gaussian world:
    ``quantile``, ``point_scale`` or ``density``). The underlying draws
    depend only on ``(world.seed, stream)``, so different representations
    of the same seed describe the same examples.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    output = output or DEFAULT_OUTPUT[world.kind]
    rng = make_rng(world.seed, stream)
    if world.kind == "categorical_classifier":
        if output != "softmax":
            raise ValidationError("categorical world only produces softmax outputs")
        return _sample_categorical(world, n, rng)
    if world.kind == "gaussian_regression":
        return _sample_gaussian(world, n, rng, output)
    if output != "pixel":
        raise ValidationError("segmentation world only produces pixel outputs")
    truth, scores = _sample_segmentation_arrays(world, n, rng)
    return Dataset("pixel", scores, truth)


def sample(world: WorldSpec, n: int, output: Optional[str] = None, stream: int = 0) -> list:
    """Draw ``n`` examples as ``(ModelOutput, label)`` pairs."""
    ds = sample_dataset(world, n, output, stream)
    wrap = {
        "softmax": lambda o: Softmax(o),
        "quantile": lambda o: QuantilePair(float(o[0]), float(o[1])),
        "point_scale": lambda o: PointScale(float(o[0]), float(o[1])),
        "density": lambda o: Density(o),
        "pixel": lambda o: PixelScores(o),
    }[ds.kind]
    if ds.kind == "pixel":
        return [(wrap(o), Mask(y)) for o, y in zip(ds.outputs, ds.labels)]
    if ds.kind in ("softmax", "density"):
        return [(wrap(o), int(y)) for o, y in zip(ds.outputs, ds.labels)]
    return [(wrap(o), float(y)) for o, y in zip(ds.outputs, ds.labels)]


# ---------------------------------------------------------------------------
# Ground-truth risk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskEstimate:
    """True risk with the standard error of its own estimator (0 if exact)."""

    value: float
    stderr: float
    n_samples: int = 0


def _mc_estimate(chunks) -> RiskEstimate:
    vals = np.concatenate(list(chunks))
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return RiskEstimate(float(vals.mean()), se, int(vals.size))


def _chunks(n: int):
    done = 0
    while done < n:
        size = min(_CHUNK, n - done)
        yield done // _CHUNK, size
        done += size


def true_risk(
    world: WorldSpec,
    artifact: CalibrationArtifact,
    method: Optional[str] = None,
    n_fresh: int = 100_000,
    stream: int = 10_000,
) -> RiskEstimate:
    """Risk of the calibrated predictor on a fresh draw from ``world``.

    Miscoverage for conformal methods, false-negative rate for ``rcps`` on
    the segmentation world. Gaussian-world risks integrate the closed-form
    conditional miscoverage over ``x``; the categorical world averages the
    exact conditional miscoverage over ``n_fresh`` sampled inputs; the
    segmentation world counts pixels on ``n_fresh`` fresh images.
    """
    method = method or artifact.method
    q = artifact.threshold
    if world.kind == "segmentation_blobs":
        if method != "rcps":
            raise ValidationError("segmentation world pairs with rcps artifacts only")
        return _segmentation_risk(world, q, n_fresh, stream)
    if method == "rcps":
        raise ValidationError(f"rcps artifacts need the segmentation world, not {world.kind}")
    family = get_family(method)
    if world.kind == "categorical_classifier":
        if family.kind != "softmax":
            raise ValidationError(f"{method} does not apply to the categorical world")
        return _categorical_risk(world, family, q, n_fresh, stream)
    if method in ("cqr", "scalar"):
        return _interval_risk(world, method, q)
    if method == "bayes":
        return _bayes_risk(world, q)
    raise ValidationError(f"{method} does not apply to the gaussian world")


def _categorical_risk(world, family, q, n_fresh, stream) -> RiskEstimate:
    if world.params["adversarial_frac"] > 0:
        # outputs depend on the label, so fall back to plain Monte Carlo
        def gen():
            for c, size in _chunks(n_fresh):
                ds = sample_dataset(world, size, stream=stream + c)
                yield 1.0 - family.covered(ds.outputs, ds.labels, q)

        return _mc_estimate(gen())

    def gen():
        for c, size in _chunks(n_fresh):
            rng = make_rng(world.seed, stream + c)
            _, logits = _categorical_latent(world, size, rng)
            member = _set_membership(family, _softmax(logits / math.exp(world.knob)), q)
            yield (~member * _softmax(logits)).sum(axis=1)

    return _mc_estimate(gen())


def _set_membership(family, outputs, q) -> np.ndarray:
    return {"lac": lac_sets, "aps": aps_sets}[family.name](outputs, q)


def _interval_risk(world: WorldSpec, method: str, q: float) -> RiskEstimate:
    if math.isinf(q):
        return RiskEstimate(0.0 if q > 0 else 1.0, 0.0)

    kind, bounds = ("quantile", cqr_bounds) if method == "cqr" else ("point_scale", scalar_bounds)

    def miscoverage(x):
        xs = np.atleast_1d(x)
        mu, sigma = _gaussian_moments(world, xs)
        lo, hi = bounds(_gaussian_outputs(world, xs, kind, None), q)
        inside = stats.norm.cdf((hi - mu) / sigma) - stats.norm.cdf((lo - mu) / sigma)
        return float(np.where(lo > hi, 1.0, 1.0 - inside)[0])

    value, err = integrate.quad(miscoverage, 0.0, 1.0, limit=200, epsabs=1e-10)
    return RiskEstimate(float(value), float(err))


def _bayes_risk(world: WorldSpec, q: float, n_x: int = 20_000) -> RiskEstimate:
    grid = world.grid()
    x = (np.arange(n_x) + 0.5) / n_x
    mu, sigma = _gaussian_moments(world, x)
    dens = _gaussian_outputs(world, x, "density", grid)
    member = dens > -q
    mids = (grid[1:] + grid[:-1]) / 2
    edges = np.concatenate([[-np.inf], mids, [np.inf]])
    cdf = stats.norm.cdf((edges[None, :] - mu[:, None]) / sigma[:, None])
    cell_mass = np.diff(cdf, axis=1)
    risk = 1.0 - (cell_mass * member).sum(axis=1)
    # midpoint rule; the error estimate is the gap to the half-resolution rule
    coarse = risk.reshape(-1, 2).mean(axis=1)
    return RiskEstimate(float(risk.mean()), float(abs(risk.mean() - coarse.mean())))


def _segmentation_risk(world: WorldSpec, lam: float, n_fresh: int, stream: int) -> RiskEstimate:
    thr = raw_threshold(lam)

    def gen():
        for c, size in _chunks(n_fresh):
            truth, scores = _sample_segmentation_arrays(world, size, make_rng(world.seed, stream + c))
            pos = truth.sum(axis=(1, 2))
            hit = (truth & (scores >= thr)).sum(axis=(1, 2))
            yield np.where(pos > 0, (pos - hit) / np.maximum(pos, 1), 0.0)

    return _mc_estimate(gen())


def brute_force_fnr(truth: np.ndarray, scores: np.ndarray, lam: float) -> float:
    """Pixel-by-pixel false-negative count, kept deliberately naive."""
    thr = float(raw_threshold(lam))
    positives = missed = 0
    for t, s in zip(np.asarray(truth).ravel(), np.asarray(scores).ravel()):
        if t:
            positives += 1
            if not s >= thr:
                missed += 1
    return missed / positives if positives else 0.0


# ---------------------------------------------------------------------------
# Pinball-loss quantile regression
# ---------------------------------------------------------------------------


def pinball_loss(pred, y, gamma: float) -> float:
    """Mean quantile loss of predictions ``pred`` for targets ``y``."""
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    above = y > pred
    return float(np.mean(np.where(above, (y - pred) * gamma, (pred - y) * (1 - gamma))))


@dataclass(frozen=True)
class QuantileFit:
    slope: float
    intercept: float
    gamma: float
    initial_loss: float
    final_loss: float
    checkpoint_steps: np.ndarray
    checkpoint_losses: np.ndarray
    iterate_losses: np.ndarray

    def predict(self, x) -> np.ndarray:
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_linear_quantile(
    x,
    y,
    gamma: float,
    steps: int = 3000,
    step_size: Optional[float] = None,
    n_checkpoints: int = 20,
) -> QuantileFit:
    """Fit ``y ~ slope * x + intercept`` to the ``gamma`` quantile.

    Full-batch subgradient descent on the mean pinball loss with steps
    ``c / sqrt(t + 1)``; at the kink the left subgradient is used. The
    feature is standardized internally and the fit mapped back.

    Subgradient steps do not decrease the loss monotonically, so the
    lowest-loss iterate seen so far is kept and returned. At evenly spaced
    checkpoints ``checkpoint_losses`` records that incumbent's loss and
    ``iterate_losses`` the loss of the current iterate.

    If every ``x`` is identical the slope is fixed at 0.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size < 2:
        raise ValidationError("need at least 2 paired points")
    if not 0 < gamma < 1:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    if steps < 1:
        raise ValidationError("steps must be >= 1")

    x_mean, x_std = x.mean(), x.std()
    fixed_slope = x_std == 0
    z = np.zeros_like(x) if fixed_slope else (x - x_mean) / x_std
    c = step_size if step_size is not None else max(float(y.std()), 1e-8)

    w = np.zeros(2)  # slope on z, intercept

    def loss(w):
        return pinball_loss(w[0] * z + w[1], y, gamma)

    initial = loss(w)
    best_w, best = w.copy(), initial
    checkpoints = set(np.linspace(0, steps, n_checkpoints + 1).astype(int).tolist())
    ck_steps, ck_best, ck_iter = [], [], []
    for t in range(steps + 1):
        current = loss(w)
        if current < best:
            best, best_w = current, w.copy()
        if t in checkpoints:
            ck_steps.append(t)
            ck_best.append(best)
            ck_iter.append(current)
        if t == steps:
            break
        resid = y - (w[0] * z + w[1])
        g = np.where(resid >= 0, -gamma, 1.0 - gamma)
        grad = np.array([0.0 if fixed_slope else np.mean(g * z), np.mean(g)])
        w = w - c / math.sqrt(t + 1) * grad

    if fixed_slope:
        slope, intercept = 0.0, float(best_w[1])
    else:
        slope = float(best_w[0] / x_std)
        intercept = float(best_w[1] - best_w[0] * x_mean / x_std)
    return QuantileFit(
        slope=slope,
        intercept=intercept,
        gamma=gamma,
        initial_loss=initial,
        final_loss=best,
        checkpoint_steps=np.array(ck_steps),
        checkpoint_losses=np.array(ck_best),
        iterate_losses=np.array(ck_iter),
    )


# ---------------------------------------------------------------------------
# Oracle set rules
# ---------------------------------------------------------------------------


def oracle_aps_set(output: Softmax, alpha: float) -> Labels:
    """Top classes taken greedily until their mass reaches ``1 - alpha``.

    Trusts the model completely; a baseline, not a calibrated procedure.
    """
    order = sorted(range(output.n_classes), key=lambda k: (-output.probs[k], k))
    chosen, mass = [], 0.0
    for k in order:
        if mass >= 1 - alpha:
            break
        chosen.append(k)
        mass += float(output.probs[k])
    return Labels(tuple(chosen), n_classes=output.n_classes)


def oracle_bayes_set(output: Density, grid: np.ndarray, alpha: float) -> Labels:
    """Highest-density grid cells holding ``1 - alpha`` of the mass."""
    d = output.values
    dy = np.gradient(np.asarray(grid, dtype=float))
    order = np.argsort(-d, kind="stable")
    mass = np.cumsum(d[order] * dy[order])
    total = mass[-1]
    k = int(np.searchsorted(mass, (1 - alpha) * total, side="left")) + 1
    return Labels(tuple(order[: min(k, d.size)]), n_classes=d.size)
