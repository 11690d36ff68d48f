"""Attack registry, deterministic batch execution, sweeps, and summaries.

Everything the CLI does goes through here so tests can drive the same
paths. Per-example seeds derive from (base seed, example index), making
results independent of scheduling or batching.
"""

import math
from typing import Callable

import numpy as np

from perturbkit import classify, regress
from perturbkit.classify import AttackConfig, MarginContext
from perturbkit.errors import PerturbkitError
from perturbkit.metrics import fooling_ratio, psnr, rho1, rho2
from perturbkit.model import Dataset, Example, Model, forward, predict
from perturbkit.norms import lp_norm
from perturbkit.regress import Partition, RegressionContext
from perturbkit.report import AttackReport

ATTACK_KINDS = {
    "gnm": "classification",
    "min-norm": "classification",
    "fgsm": "classification",
    "bim": "classification",
    "pgd": "classification",
    "deepfool": "classification",
    "algo2": "classification",
    "quad-l2": "regression",
    "quad-l1": "regression",
    "quad-linf": "regression",
    "subset-quad": "regression",
    "subset-lin": "regression",
    "multi-subset": "regression",
    "linear": "regression",
    "random": "either",
}

ATTACK_NAMES = sorted(ATTACK_KINDS)

AttackFn = Callable[..., AttackReport]


def derive_seed(base_seed: int, index: int) -> int:
    """Stable per-example seed; identical across platforms and orderings."""
    seq = np.random.SeedSequence([abs(int(base_seed)), int(index)])
    return int(seq.generate_state(1, np.uint32)[0])


def parse_dither(spec, eps: float, t_steps: int) -> tuple[float, ...] | None:
    """Dither schedule from a CLI-style spec.

    Accepts None/"none" (no dither), "first=eps", "first=<x>", "all=<x>",
    or a comma list of T radii.
    """
    if spec is None or spec == "none":
        return None
    if isinstance(spec, (tuple, list)):
        return tuple(float(r) for r in spec)
    spec = str(spec)
    if spec.startswith("first="):
        raw = spec[len("first="):]
        first = eps if raw == "eps" else float(raw)
        return (first,) + (0.0,) * (t_steps - 1)
    if spec.startswith("all="):
        raw = spec[len("all="):]
        value = eps if raw == "eps" else float(raw)
        return (value,) * t_steps
    return tuple(float(r) for r in spec.split(","))


def resolve_kind(name: str, dataset: Dataset | None = None) -> str:
    if name not in ATTACK_KINDS:
        raise PerturbkitError(
            f"unknown attack {name!r}; valid names: {', '.join(ATTACK_NAMES)}"
        )
    kind = ATTACK_KINDS[name]
    if kind != "either":
        return kind
    if dataset is not None and dataset.has_labels:
        return "classification"
    return "regression"


def build_attack(
    name: str,
    *,
    kind: str | None = None,
    p: float = math.inf,
    eps: float = 0.1,
    T: int | None = None,
    dither=None,
    loss: str | None = None,
    target: int | None = None,
    early_stop: bool = True,
    partition: Partition | None = None,
    max_iter: int = 50,
) -> AttackFn:
    """Close an attack name and its parameters over (model, x, seed).

    The returned callable also accepts `target_vec` for regression
    ground truth. Partition-based attacks require `partition`.
    """
    if name not in ATTACK_KINDS:
        raise PerturbkitError(
            f"unknown attack {name!r}; valid names: {', '.join(ATTACK_NAMES)}"
        )
    if kind is None:
        kind = ATTACK_KINDS[name]
        if kind == "either":
            raise PerturbkitError("attack 'random' needs an explicit kind")
    if name in ("subset-quad", "subset-lin", "multi-subset") and partition is None:
        raise PerturbkitError(f"attack {name!r} needs a partition")

    t_steps = T if T is not None else 1

    if kind == "classification":
        def fn(model: Model, x, seed: int, target_vec=None) -> AttackReport:
            if name == "random":
                ctx = MarginContext.build(model, x)
                eta = classify.random_perturbation(model.input_dim, p, eps, seed)
                return classify.evaluate_perturbation(ctx, eta)
            if name == "deepfool":
                ctx = MarginContext.build(model, x)
                return classify.deepfool_style(ctx, p, max_iter=max_iter)
            if name == "min-norm":
                ctx = MarginContext.build(
                    model, x, loss_kind=loss or "margin", target=target
                )
                return classify.min_norm_attack(ctx, p)
            loss_kind = {
                "gnm": loss or "margin",
                "algo2": loss or "simplified",
                "fgsm": "cross_entropy",
                "bim": "cross_entropy",
                "pgd": "cross_entropy",
            }[name]
            steps = {
                "gnm": t_steps,
                "algo2": t_steps,
                "fgsm": 1,
                "bim": T if T is not None else 10,
                "pgd": T if T is not None else 10,
            }[name]
            if name == "pgd":
                radii = parse_dither(dither if dither is not None else "first=eps", eps, steps)
            else:
                radii = parse_dither(dither, eps, steps)
            ctx = MarginContext.build(model, x, loss_kind=loss_kind, target=target)
            config = AttackConfig(
                p=p, eps=eps, T=steps, dither=radii, seed=seed,
                early_stop=early_stop,
            )
            if steps == 1 and radii is None and name in ("gnm", "algo2"):
                return classify.gnm(ctx, p, eps)
            return classify.iterative_attack(ctx, config)

        return fn

    def fn(model: Model, x, seed: int, target_vec=None) -> AttackReport:
        ctx = RegressionContext.build(model, x, y=target_vec)
        if name == "random":
            eta = classify.random_perturbation(model.input_dim, p, eps, seed)
            return regress.evaluate_perturbation(ctx, eta)
        if name == "quad-l2":
            return regress.quadratic_l2(ctx, eps, seed=seed)
        if name == "quad-l1":
            return regress.quadratic_l1(ctx, eps)
        if name == "quad-linf":
            return regress.quadratic_linf_greedy(ctx, eps)
        if name == "subset-quad":
            return regress.subset_attack_quadratic(ctx, partition, eps)
        if name == "subset-lin":
            radius = _scalar_dither(dither, eps, ctx)
            return regress.subset_attack_linear(
                ctx, partition, eps, dither=radius, seed=seed
            )
        if name == "multi-subset":
            return regress.multi_subset_attack(
                ctx, partition, eps, T if T is not None else 1, seed=seed
            )
        # "linear": the iterative driver on the squared output error
        radii = parse_dither(dither, eps, t_steps)
        if radii is None and ctx.use_y_approx:
            radii = parse_dither("first=eps", eps, t_steps)
        config = AttackConfig(p=p, eps=eps, T=t_steps, dither=radii, seed=seed)
        return regress.linear_attack(ctx, config)

    return fn


def _scalar_dither(dither, eps: float, ctx: RegressionContext) -> float:
    if dither is None:
        return eps if ctx.use_y_approx else 0.0
    radii = parse_dither(dither, eps, 1)
    return 0.0 if radii is None else float(radii[0])


def run_attack_over_dataset(
    model: Model,
    dataset: Dataset,
    attack_fn: AttackFn,
    kind: str,
    base_seed: int = 0,
) -> list[AttackReport]:
    """Apply the attack to every example, ordered by index.

    Labeled examples the model already misclassifies are not attacked:
    they yield eta = 0 with success = True, matching fooling-ratio
    bookkeeping.
    """
    reports = []
    for idx, ex in enumerate(dataset):
        seed_i = derive_seed(base_seed, idx)
        if (
            kind == "classification"
            and ex.label is not None
            and predict(model, ex.x) != ex.label
        ):
            ctx = MarginContext.build(model, ex.x)
            rep = classify.evaluate_perturbation(ctx, np.zeros(model.input_dim))
            rep.success = True
            rep.extra["already_misclassified"] = True
        else:
            try:
                rep = attack_fn(model, ex.x, seed_i, target_vec=ex.target)
            except PerturbkitError as exc:
                raise PerturbkitError(f"example {idx}: {exc}") from exc
        reports.append(rep)
    return reports


def report_psnr(model: Model, ex: Example, report: AttackReport, peak: float = 1.0) -> float:
    """Output PSNR of the attacked input against the example's reference.

    The reference is the ground-truth target when present, else the
    clean output.
    """
    ref = ex.target if ex.target is not None else forward(model, ex.x)
    return psnr(forward(model, ex.x + report.eta), ref, peak)


def sweep(
    model: Model,
    dataset: Dataset,
    attack_names: list[str],
    eps_values: list[float],
    *,
    base_seed: int = 0,
    p: float = math.inf,
    T: int | None = None,
    dither=None,
    loss: str | None = None,
    target: int | None = None,
    partition: Partition | None = None,
    peak: float = 1.0,
    max_iter: int = 50,
) -> tuple[str, list[dict]]:
    """(metric name, rows): fooling ratio for labeled data, mean PSNR otherwise."""
    classification = dataset.has_labels
    metric = "fooling_ratio" if classification else "mean_psnr_db"
    rows = []
    for name in attack_names:
        kind = resolve_kind(name, dataset)
        for eps in eps_values:
            fn = build_attack(
                name, kind=kind, p=p, eps=eps, T=T, dither=dither, loss=loss,
                target=target, partition=partition, max_iter=max_iter,
            )
            if classification:
                value = fooling_ratio(model, dataset, fn, base_seed)
            else:
                reports = run_attack_over_dataset(model, dataset, fn, kind, base_seed)
                values = [
                    report_psnr(model, ex, rep, peak)
                    for ex, rep in zip(dataset, reports)
                ]
                value = math.fsum(values) / len(values)
            rows.append({"attack": name, "eps": eps, metric: value})
    return metric, rows


def robustness_summary(
    model: Model,
    dataset: Dataset,
    p: float,
    eps_values: list[float],
    base_seed: int = 0,
    max_iter: int = 50,
) -> dict:
    """rho1, rho2, and the smallest swept eps fooling more than 99%."""
    r1 = rho1(model, dataset, p)
    r2 = rho2(model, dataset, p)
    fn = build_attack("deepfool", kind="classification", p=p, max_iter=max_iter)
    achieved = []
    for idx, ex in enumerate(dataset):
        if predict(model, ex.x) != ex.label:
            continue
        rep = fn(model, ex.x, derive_seed(base_seed, idx))
        achieved.append(lp_norm(rep.eta, p) if rep.success else math.inf)
    min_eps_99 = None
    for eps in sorted(eps_values):
        ratio = sum(1 for a in achieved if a <= eps) / len(achieved)
        if ratio > 0.99:
            min_eps_99 = eps
            break
    return {
        "rho1": r1.value,
        "rho1_used": r1.n_used,
        "rho1_exclusions": r1.exclusions,
        "rho2": r2.value,
        "rho2_used": r2.n_used,
        "rho2_exclusions": r2.exclusions,
        "min_eps_99": min_eps_99,
    }


_BUDGET_FREE = ("deepfool", "min-norm")


def validate_report(
    name: str,
    report: AttackReport,
    *,
    eps: float,
    p: float,
    partition: Partition | None = None,
    T: int | None = None,
) -> None:
    """Re-check module invariants on an emitted record; raises on violation."""
    if report.extra.get("already_misclassified"):
        return
    if name not in _BUDGET_FREE:
        if lp_norm(report.eta, p) > eps + 1e-9:
            raise PerturbkitError(
                f"{name}: ||eta||_{p} = {lp_norm(report.eta, p)} exceeds eps = {eps}"
            )
    if partition is not None and eps > 0 and name in (
        "subset-quad", "subset-lin", "multi-subset"
    ):
        support = partition.mixed_zero_norm(report.eta)
        expected = (T if T is not None else 1) if name == "multi-subset" else 1
        if support != expected:
            raise PerturbkitError(
                f"{name}: perturbation touches {support} subsets, expected {expected}"
            )
        nonzero = report.eta[report.eta != 0]
        if nonzero.size and not np.all(np.abs(nonzero) == eps):
            raise PerturbkitError(f"{name}: nonzero entries must be exactly ±{eps}")
