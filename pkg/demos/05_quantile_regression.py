"""Fit the quantile predictions that CQR later calibrates.

A straight line fitted to the 0.9 quantile of ``y = 1 + 2x + N(0, 1)``
should have intercept near ``1 + 1.2816``.
"""

from conformal_kit import WorldSpec, fit_linear_quantile
from conformal_kit.synth import gaussian_features

world = WorldSpec("gaussian_regression", seed=12, params={"hetero": 0.0})
x, y = gaussian_features(world, 10_000)
for gamma in (0.1, 0.5, 0.9):
    fit = fit_linear_quantile(x, y, gamma)
    print(f"gamma={gamma}: intercept={fit.intercept:.4f} slope={fit.slope:.4f} "
          f"loss {fit.initial_loss:.3f} -> {fit.final_loss:.4f}")
    print("  best loss at checkpoints:", " ".join(f"{v:.3f}" for v in fit.checkpoint_losses[::5]))
