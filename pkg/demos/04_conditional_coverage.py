"""Marginal coverage can hide a group that is never covered.

A tenth of the inputs come from an adversarial group whose top class is
always wrong but confidently predicted. LAC keeps overall coverage near
90% while covering none of that group; the feature-stratified coverage
(FSC) exposes it, the size-stratified coverage (SSC) does not.
"""

from conformal_kit import WorldSpec, calibrate, sample_dataset
from conformal_kit.evaluation import size_bin_ids, stratified_coverage
from conformal_kit.scores import get_family

fam = get_family("lac")
for label, params in (("benign", {}), ("adversarial", {"adversarial_frac": 0.1})):
    world = WorldSpec("categorical_classifier", seed=4, params=params)
    cal = sample_dataset(world, 1000)
    val = sample_dataset(world, 20_000, stream=1)
    art = calibrate(fam.score(cal.outputs, cal.labels), 0.1, "lac")
    covered = fam.covered(val.outputs, val.labels, art.threshold)
    sizes = fam.size(val.outputs, art.threshold)
    by_group = stratified_coverage(covered, val.groups)
    by_size = stratified_coverage(covered, size_bin_ids(sizes))
    print(f"{label}: coverage={covered.mean():.3f}")
    print("  by group:", {g: round(c, 3) for g, c in by_group.items()}, f"FSC={min(by_group.values()):.3f}")
    print("  by size bin:", {b: round(c, 3) for b, c in by_size.items()}, f"SSC={min(by_size.values()):.3f}")
