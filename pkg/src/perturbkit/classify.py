"""Classification attacks: margin machinery, closed forms, iterative drivers.

The central quantity is the margin of the predicted class over its best
competitor; it is negative exactly when the predicted label changed.
Attacks minimize a selectable surrogate (margin, single-score, negative
cross-entropy, or a fixed-target margin) under an lp budget, via the
dual-norm closed form, either in one shot or iteratively with optional
dithering of the linearization point.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from perturbkit.errors import NoCompetitorError, ZeroGradientError
from perturbkit.model import Model, forward, vjp
from perturbkit.norms import dual_exponent, dual_maximizer, lp_norm, sample_lp_ball
from perturbkit.report import AttackReport, norm_triple

LOSS_KINDS = ("margin", "simplified", "cross_entropy", "targeted")

_DITHER_RETRIES = 5


@dataclass(frozen=True)
class MarginContext:
    """A model, an input, the class to defend, and the surrogate to attack."""

    model: Model
    x: np.ndarray
    true_class: int
    loss_kind: str = "margin"
    target: int | None = None

    @classmethod
    def build(cls, model, x, loss_kind="margin", target=None, true_class=None):
        """Construct with true_class defaulting to the model's prediction.

        Passing an explicit `true_class` (e.g. a dataset label) lets the
        margin go negative for inputs the model already misclassifies.
        """
        if model.output_dim < 2:
            raise NoCompetitorError("margin losses need at least 2 classes")
        if loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
        x = np.asarray(x, dtype=np.float64)
        if true_class is None:
            true_class = int(np.argmax(forward(model, x)))
        true_class = int(true_class)
        if loss_kind == "targeted":
            if target is None:
                raise ValueError("targeted loss needs a target class")
            target = int(target)
            if target == true_class:
                raise ValueError("target class must differ from the true class")
            if not 0 <= target < model.output_dim:
                raise ValueError(f"target {target} outside [0, {model.output_dim})")
        return cls(model, x, true_class, loss_kind, target)


def _competitor(scores: np.ndarray, k: int) -> int:
    if scores.shape[0] < 2:
        raise NoCompetitorError("margin losses need at least 2 classes")
    masked = scores.copy()
    masked[k] = -np.inf
    return int(np.argmax(masked))


def margin_loss(ctx: MarginContext, eta) -> float:
    """Score of the defended class minus the best competitor at x + eta."""
    scores = forward(ctx.model, ctx.x + eta)
    return _margin_from_scores(scores, ctx.true_class)


def _margin_from_scores(scores: np.ndarray, k: int) -> float:
    return float(scores[k] - scores[_competitor(scores, k)])


def grad_margin_loss(ctx: MarginContext, eta) -> np.ndarray:
    """Gradient of the margin at x + eta (competitor re-resolved there)."""
    x_eta = ctx.x + eta
    scores = forward(ctx.model, x_eta)
    l_star = _competitor(scores, ctx.true_class)
    u = np.zeros(ctx.model.output_dim)
    u[ctx.true_class] = 1.0
    u[l_star] = -1.0
    return vjp(ctx.model, x_eta, u)


def _loss_from_scores(ctx: MarginContext, scores: np.ndarray) -> float:
    k = ctx.true_class
    kind = ctx.loss_kind
    if kind == "margin":
        return _margin_from_scores(scores, k)
    if kind == "simplified":
        return float(scores[k])
    if kind == "targeted":
        return float(scores[k] - scores[ctx.target])
    # cross_entropy: L is the negative training loss
    if ctx.model.has_softmax_output:
        return float(np.log(max(scores[k], 1e-300)))
    m = float(scores.max())
    lse = m + math.log(float(np.sum(np.exp(scores - m))))
    return float(scores[k] - lse)


def attack_loss(ctx: MarginContext, eta) -> float:
    """Value of the surrogate the attack minimizes, at x + eta."""
    return _loss_from_scores(ctx, forward(ctx.model, ctx.x + eta))


def attack_loss_and_grad(ctx: MarginContext, eta) -> tuple[float, np.ndarray]:
    """Surrogate value and its gradient with respect to eta."""
    x_eta = ctx.x + eta
    scores = forward(ctx.model, x_eta)
    k = ctx.true_class
    kind = ctx.loss_kind
    kdim = ctx.model.output_dim
    u = np.zeros(kdim)
    if kind == "margin":
        u[k] = 1.0
        u[_competitor(scores, k)] -= 1.0
    elif kind == "simplified":
        u[k] = 1.0
    elif kind == "targeted":
        u[k] = 1.0
        u[ctx.target] -= 1.0
    else:  # cross_entropy
        if ctx.model.has_softmax_output:
            u[k] = 1.0 / max(float(scores[k]), 1e-300)
        else:
            e = np.exp(scores - scores.max())
            u = -e / e.sum()
            u[k] += 1.0
    return _loss_from_scores(ctx, scores), vjp(ctx.model, x_eta, u)


def feasibility_bound(ctx: MarginContext, p) -> float:
    """Smallest lp budget at which the linearized surrogate can reach zero.

    Already-negative losses (misclassified inputs) give 0.
    """
    val0, g = attack_loss_and_grad(ctx, np.zeros(ctx.model.input_dim))
    if val0 <= 0.0:
        return 0.0
    if not np.any(g):
        raise ZeroGradientError("gradient vanished; feasibility bound undefined")
    return val0 / lp_norm(g, dual_exponent(p))


def _success(ctx: MarginContext, predicted: int) -> bool:
    if ctx.loss_kind == "targeted":
        return predicted == ctx.target
    return predicted != ctx.true_class


def _finish(
    ctx: MarginContext,
    eta: np.ndarray,
    *,
    t0: float,
    margin_before: float,
    iterations_used: int,
    trajectory: list[float] | None = None,
    extra: dict | None = None,
    success_override: bool | None = None,
) -> AttackReport:
    scores = forward(ctx.model, ctx.x + eta)
    predicted = int(np.argmax(scores))
    success = (
        _success(ctx, predicted) if success_override is None else success_override
    )
    return AttackReport(
        eta=eta,
        success=success,
        norms=norm_triple(eta),
        loss_before=margin_before,
        loss_after=_margin_from_scores(scores, ctx.true_class),
        predicted_class_after=predicted,
        iterations_used=iterations_used,
        loss_trajectory=trajectory or [],
        wall_time=time.perf_counter() - t0,
        extra=extra or {},
    )


def evaluate_perturbation(ctx: MarginContext, eta) -> AttackReport:
    """Report what a given perturbation (e.g. a random baseline) achieves."""
    t0 = time.perf_counter()
    eta = np.asarray(eta, dtype=np.float64)
    margin0 = margin_loss(ctx, np.zeros(ctx.model.input_dim))
    return _finish(ctx, eta, t0=t0, margin_before=margin0, iterations_used=0)


def gnm(ctx: MarginContext, p, eps: float) -> AttackReport:
    """One-shot budget attack: the dual-norm minimizer of the linearized loss."""
    t0 = time.perf_counter()
    zero = np.zeros(ctx.model.input_dim)
    margin0 = margin_loss(ctx, zero)
    if margin0 < 0.0:
        return _finish(
            ctx, zero, t0=t0, margin_before=margin0, iterations_used=0,
            extra={"already_misclassified": True}, success_override=True,
        )
    if eps == 0.0:
        return _finish(ctx, zero, t0=t0, margin_before=margin0, iterations_used=0)
    _, g = attack_loss_and_grad(ctx, zero)
    if not np.any(g):
        raise ZeroGradientError("zero gradient at the clean input; dither and retry")
    eta = dual_maximizer(g, p, eps)
    return _finish(ctx, eta, t0=t0, margin_before=margin0, iterations_used=1)


def min_norm_attack(ctx: MarginContext, p) -> AttackReport:
    """Smallest perturbation whose linearized loss reaches zero.

    Shares the gnm direction; its norm equals the feasibility bound, so
    on exactly-linear models it lands on the decision boundary.
    """
    t0 = time.perf_counter()
    zero = np.zeros(ctx.model.input_dim)
    margin0 = margin_loss(ctx, zero)
    val0, g = attack_loss_and_grad(ctx, zero)
    if val0 < 0.0:
        return _finish(
            ctx, zero, t0=t0, margin_before=margin0, iterations_used=0,
            extra={"already_misclassified": True}, success_override=True,
        )
    if val0 == 0.0:
        return _finish(ctx, zero, t0=t0, margin_before=margin0, iterations_used=0)
    if not np.any(g):
        raise ZeroGradientError("zero gradient at the clean input; dither and retry")
    eta = dual_maximizer(g, p, val0 / lp_norm(g, dual_exponent(p)))
    return _finish(ctx, eta, t0=t0, margin_before=margin0, iterations_used=1)


@dataclass(frozen=True)
class AttackConfig:
    """Budget, iteration, and dithering schedule for the iterative driver."""

    p: float
    eps: float
    T: int = 1
    dither: tuple[float, ...] | None = None  # per-iteration radii, length T
    seed: int = 0
    loss_kind: str | None = None  # None: keep the context's
    target: int | None = None
    early_stop: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        radii = self.dither
        if radii is None:
            radii = (0.0,) * self.T
        else:
            radii = tuple(float(r) for r in radii)
            if len(radii) != self.T:
                raise ValueError(f"dither schedule has {len(radii)} radii, T={self.T}")
        for r in radii:
            if r < 0 or r > self.eps:
                raise ValueError(f"dither radius {r} outside [0, eps={self.eps}]")
        object.__setattr__(self, "dither", radii)

    @classmethod
    def fgsm(cls, eps: float, seed: int = 0) -> "AttackConfig":
        return cls(p=math.inf, eps=eps, T=1, loss_kind="cross_entropy", seed=seed)

    @classmethod
    def bim(cls, eps: float, T: int, seed: int = 0) -> "AttackConfig":
        return cls(p=math.inf, eps=eps, T=T, loss_kind="cross_entropy", seed=seed)

    @classmethod
    def pgd(cls, eps: float, T: int, seed: int = 0) -> "AttackConfig":
        radii = (eps,) + (0.0,) * (T - 1)
        return cls(
            p=math.inf, eps=eps, T=T, dither=radii, loss_kind="cross_entropy", seed=seed
        )


def _effective_ctx(ctx: MarginContext, config: AttackConfig) -> MarginContext:
    if config.loss_kind is None or config.loss_kind == ctx.loss_kind:
        return ctx
    return MarginContext.build(
        ctx.model,
        ctx.x,
        loss_kind=config.loss_kind,
        target=config.target if config.target is not None else ctx.target,
        true_class=ctx.true_class,
    )


def iterative_attack(ctx: MarginContext, config: AttackConfig) -> AttackReport:
    """T dual-norm steps of budget eps/T, each linearized at a dithered point.

    Covers the classic sign-attack family: one plain cross-entropy step,
    repeated steps without dithering, or a dithered first step. Stops
    early once the predicted class flips (unless early_stop is off).
    Budget holds by construction for p=inf; other p get a final radial
    projection onto the eps ball.
    """
    t0 = time.perf_counter()
    ctx = _effective_ctx(ctx, config)
    m = ctx.model.input_dim
    zero = np.zeros(m)
    margin0 = margin_loss(ctx, zero)
    if margin0 < 0.0:
        return _finish(
            ctx, zero, t0=t0, margin_before=margin0, iterations_used=0,
            extra={"already_misclassified": True}, success_override=True,
        )
    if config.eps == 0.0:
        return _finish(ctx, zero, t0=t0, margin_before=margin0, iterations_used=0)
    rng = np.random.default_rng(config.seed)
    eta = zero.copy()
    step_budget = config.eps / config.T
    trajectory: list[float] = []
    used = 0
    extra: dict = {}
    for t in range(config.T):
        radius = config.dither[t]
        attempts = 1 + (_DITHER_RETRIES if radius > 0 else 0)
        g = None
        for _ in range(attempts):
            tilde = eta if radius == 0 else eta + sample_lp_ball(rng, m, config.p, radius)
            _, g_try = attack_loss_and_grad(ctx, tilde)
            if np.any(g_try):
                g = g_try
                break
        if g is None:
            extra["stall_reason"] = f"zero gradient at iteration {t} after retries"
            break
        eta = eta + dual_maximizer(g, config.p, step_budget)
        used = t + 1
        scores = forward(ctx.model, ctx.x + eta)
        trajectory.append(_loss_from_scores(ctx, scores))
        if config.early_stop and _success(ctx, int(np.argmax(scores))):
            break
    if not math.isinf(config.p):
        n = lp_norm(eta, config.p)
        if n > config.eps:
            eta *= config.eps / n
    return _finish(
        ctx, eta, t0=t0, margin_before=margin0, iterations_used=used,
        trajectory=trajectory, extra=extra,
    )


def deepfool_style(
    ctx: MarginContext, p, max_iter: int = 50, overshoot: float = 1e-6
) -> AttackReport:
    """Iteratively step onto the nearest linearized class boundary.

    Each round picks the competitor minimizing |score gap| / dual-norm of
    the gradient gap and applies the min-norm step for that pair, scaled
    by (1 + overshoot) so boundary landings actually flip the argmax.
    No budget applies; the achieved norm is the result.
    """
    t0 = time.perf_counter()
    model, x, k = ctx.model, ctx.x, ctx.true_class
    kdim = model.output_dim
    q = dual_exponent(p)
    zero = np.zeros(model.input_dim)
    margin0 = margin_loss(ctx, zero)
    eta = zero.copy()
    used = 0
    extra: dict = {}
    success_override = None
    for it in range(max_iter):
        x_cur = x + eta
        scores = forward(model, x_cur)
        if int(np.argmax(scores)) != k:
            break
        u = np.zeros(kdim)
        u[k] = 1.0
        grad_k = vjp(model, x_cur, u)
        best = None  # (ratio, gap, grad_gap)
        for l in range(kdim):
            if l == k:
                continue
            u = np.zeros(kdim)
            u[l] = 1.0
            grad_gap = grad_k - vjp(model, x_cur, u)
            denom = lp_norm(grad_gap, q)
            if denom < 1e-300:
                continue
            gap = float(scores[k] - scores[l])
            ratio = abs(gap) / denom
            if best is None or ratio < best[0]:
                best = (ratio, gap, grad_gap)
        if best is None:
            extra["stall_reason"] = f"no usable competitor at iteration {it}"
            break
        if best[1] == 0.0:
            # exactly on a pair boundary: the zero step reaches it
            extra["on_boundary"] = True
            success_override = True
            break
        ratio, _, grad_gap = best
        eta = eta + dual_maximizer(grad_gap, p, (1.0 + overshoot) * ratio)
        used = it + 1
    return _finish(
        ctx, eta, t0=t0, margin_before=margin0, iterations_used=used, extra=extra,
        success_override=success_override,
    )


def random_perturbation(m: int, p, eps: float, seed: int) -> np.ndarray:
    """Baseline noise: ±eps entries for p=inf, eps-scaled Gaussian for p=2."""
    rng = np.random.default_rng(seed)
    if math.isinf(p):
        return eps * (2.0 * rng.integers(0, 2, m) - 1.0)
    if p == 2:
        w = rng.standard_normal(m)
        while not np.any(w):  # pragma: no cover - probability zero
            w = rng.standard_normal(m)
        return eps * w / np.linalg.norm(w)
    raise ValueError(f"random_perturbation supports p in {{2, inf}}, got {p}")
