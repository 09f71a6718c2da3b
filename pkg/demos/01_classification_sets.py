"""Calibrate LAC and APS label sets on a simulated 50-class classifier.

The classifier's softmax is deliberately over- or under-confident
(``knob``). Calibration fixes the coverage either way; only the set size
changes.
"""

import numpy as np

from conformal_kit import Softmax, WorldSpec, calibrate, oracle_aps_set, sample_dataset, set_aps, set_lac, true_risk
from conformal_kit.scores import get_family

ALPHA = 0.1

for knob in (-1.0, 0.0, 1.5):
    world = WorldSpec("categorical_classifier", knob=knob, seed=1)
    cal = sample_dataset(world, 1000)
    test = sample_dataset(world, 5000, stream=1)
    print(f"knob={knob:+.1f}")
    for method in ("lac", "aps"):
        fam = get_family(method)
        art = calibrate(fam.score(cal.outputs, cal.labels), ALPHA, method)
        cov = fam.covered(test.outputs, test.labels, art.threshold).mean()
        size = fam.size(test.outputs, art.threshold).mean()
        risk = true_risk(world, art, n_fresh=20_000)
        print(f"  {method}: qhat={art.threshold:.4f} coverage={cov:.3f} "
              f"(population {1 - risk.value:.3f}) mean size={size:.2f}")

    # Trusting the softmax without calibration: coverage drifts with the knob.
    hits = [int(y) in oracle_aps_set(Softmax(p), ALPHA) for p, y in zip(test.outputs[:2000], test.labels)]
    print(f"  uncalibrated top-mass sets: coverage={np.mean(hits):.3f}")

# A single prediction, built from the per-example constructors.
world = WorldSpec("categorical_classifier", seed=1)
cal = sample_dataset(world, 1000)
art = calibrate(get_family("lac").score(cal.outputs, cal.labels), ALPHA, "lac")
probs = sample_dataset(world, 1, stream=2).outputs[0]
print("LAC set for one input:", set_lac(Softmax(probs), art.threshold).indices)
art = calibrate(get_family("aps").score(cal.outputs, cal.labels), ALPHA, "aps")
print("APS set for one input:", set_aps(Softmax(probs), art.threshold).indices)
