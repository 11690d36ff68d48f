"""Robustness and degradation metrics.

Classification robustness comes as the fooling ratio (fraction of
correctly classified inputs whose prediction an attack flips) and two
averaged per-example measures: the relative norm of the minimal found
perturbation, and the first-order feasibility bound. Regression
degradation is measured by MSE / PSNR.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from perturbkit.classify import MarginContext, deepfool_style, feasibility_bound
from perturbkit.errors import PerturbkitError, ZeroGradientError
from perturbkit.model import Dataset, Model, predict
from perturbkit.norms import lp_norm


class MetricError(PerturbkitError, ValueError):
    """The effective example set for a metric is empty."""


@dataclass
class RobustnessStat:
    """A dataset mean plus the bookkeeping of what was excluded."""

    value: float
    n_used: int
    exclusions: dict[str, int] = field(default_factory=dict)


def _correct_examples(model: Model, dataset: Dataset):
    if not dataset.has_labels:
        raise MetricError("metric needs a labeled dataset")
    kept, skipped = [], 0
    for ex in dataset:
        if predict(model, ex.x) == ex.label:
            kept.append(ex)
        else:
            skipped += 1
    return kept, skipped


def fooling_ratio(model: Model, dataset: Dataset, attack_fn, base_seed: int = 0) -> float:
    """Fraction of correctly classified inputs the attack misclassifies.

    `attack_fn(model, x, seed)` must return an AttackReport; the per-example
    seed is derived from `base_seed` and the example index.
    """
    from perturbkit.runner import derive_seed

    correct, _ = _correct_examples(model, dataset)
    if not correct:
        raise MetricError("no correctly classified examples; ratio undefined")
    fooled = 0
    for idx, ex in enumerate(correct):
        report = attack_fn(model, ex.x, derive_seed(base_seed, idx))
        if report.predicted_class_after != ex.label:
            fooled += 1
    return fooled / len(correct)


def rho1(
    model: Model, dataset: Dataset, p, attack_fn=None, base_seed: int = 0
) -> RobustnessStat:
    """Mean relative norm of the minimal perturbation an attack finds.

    Defaults to the boundary-walking attack as the minimal-perturbation
    finder. Failed attacks and zero-norm inputs are excluded and counted.
    """
    from perturbkit.runner import derive_seed

    if attack_fn is None:
        def attack_fn(mdl, x, seed):
            return deepfool_style(MarginContext.build(mdl, x), p)

    correct, misclassified = _correct_examples(model, dataset)
    ratios = []
    failed = 0
    zero_input = 0
    for idx, ex in enumerate(correct):
        x_norm = lp_norm(ex.x, p)
        if x_norm == 0.0:
            zero_input += 1
            continue
        report = attack_fn(model, ex.x, derive_seed(base_seed, idx))
        if not report.success:
            failed += 1
            continue
        ratios.append(lp_norm(report.eta, p) / x_norm)
    if not ratios:
        raise MetricError("no successfully attacked examples; rho1 undefined")
    return RobustnessStat(
        value=math.fsum(ratios) / len(ratios),
        n_used=len(ratios),
        exclusions={
            "misclassified": misclassified,
            "attack_failed": failed,
            "zero_norm_input": zero_input,
        },
    )


def rho2(model: Model, dataset: Dataset, p) -> RobustnessStat:
    """Mean feasibility bound over correctly classified examples."""
    correct, misclassified = _correct_examples(model, dataset)
    bounds = []
    zero_grad = 0
    for ex in correct:
        ctx = MarginContext.build(model, ex.x)
        try:
            bounds.append(feasibility_bound(ctx, p))
        except ZeroGradientError:
            zero_grad += 1
    if not bounds:
        raise MetricError("no usable examples; rho2 undefined")
    return RobustnessStat(
        value=math.fsum(bounds) / len(bounds),
        n_used=len(bounds),
        exclusions={"misclassified": misclassified, "zero_gradient": zero_grad},
    )


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d) / a.size


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; equal inputs give +inf."""
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)
