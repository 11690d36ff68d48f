"""Regression attacks: quadratic closed forms and sparse subset attacks.

Here the attacker maximizes the squared output error. With the working
assumption that the model output approximates the ground truth, the
linearized objective becomes ||J eta||^2: an operator-norm problem with
closed forms for l2 (top singular direction) and l1 (best column), a
greedy ±1 approximation for linf, and subset-restricted variants that
touch one index group (or several, iteratively).
"""

import math
import time
from dataclasses import dataclass
from json import JSONDecodeError, dump, load

import numpy as np

from perturbkit.errors import PartitionError, SizeGuardError, ZeroGradientError
from perturbkit.model import Model, forward, jacobian, jvp, vjp
from perturbkit.norms import (
    col_norms,
    dual_maximizer,
    greedy_sign_vector,
    lp_norm,
    sample_lp_ball,
    signed_combination_sq,
    spectral_norm_power,
)
from perturbkit.report import AttackReport, norm_triple
from perturbkit import backend
from perturbkit.classify import AttackConfig

_DITHER_RETRIES = 5
_EXHAUSTIVE_MAX_Z = 20


@dataclass(frozen=True)
class Partition:
    """Disjoint equal-size index subsets covering [0, size)."""

    subsets: tuple[tuple[int, ...], ...]
    size: int

    def __post_init__(self):
        if not self.subsets:
            raise PartitionError("partition needs at least one subset")
        z = len(self.subsets[0])
        seen: set[int] = set()
        for s, subset in enumerate(self.subsets):
            if len(subset) != z:
                raise PartitionError(
                    f"subset {s} has {len(subset)} indices, expected {z}"
                )
            for i in subset:
                if not 0 <= i < self.size:
                    raise PartitionError(f"index {i} outside [0, {self.size})")
                if i in seen:
                    raise PartitionError(f"index {i} appears in two subsets")
                seen.add(i)
        if len(seen) != self.size:
            raise PartitionError(
                f"subsets cover {len(seen)} of {self.size} indices"
            )

    @classmethod
    def build(cls, subsets, size: int) -> "Partition":
        return cls(tuple(tuple(int(i) for i in s) for s in subsets), int(size))

    @classmethod
    def contiguous(cls, size: int, z: int) -> "Partition":
        """Consecutive blocks of z indices (size must divide evenly)."""
        if size % z:
            raise PartitionError(f"cannot split {size} indices into blocks of {z}")
        return cls.build(
            [range(s, s + z) for s in range(0, size, z)], size
        )

    @property
    def n_subsets(self) -> int:
        return len(self.subsets)

    @property
    def z(self) -> int:
        return len(self.subsets[0])

    def mixed_zero_norm(self, v) -> int:
        """Number of subsets holding at least one nonzero entry of v."""
        v = np.asarray(v)
        return sum(1 for s in self.subsets if np.any(v[list(s)]))


def save_partition(partition: Partition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        dump(
            {"Z": partition.z, "subsets": [list(s) for s in partition.subsets]}, fh
        )
        fh.write("\n")


def load_partition(path, size: int) -> Partition:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = load(fh)
        except JSONDecodeError as exc:
            raise PartitionError(f"{path}: not valid JSON ({exc})") from exc
    try:
        subsets = obj["subsets"]
        z = int(obj["Z"])
    except (KeyError, TypeError) as exc:
        raise PartitionError(f"{path}: missing field {exc}") from exc
    part = Partition.build(subsets, size)
    if part.z != z:
        raise PartitionError(f"{path}: declared Z={z} but subsets have size {part.z}")
    return part


@dataclass(frozen=True)
class RegressionContext:
    """Model, input, and the output the attacker degrades against."""

    model: Model
    x: np.ndarray
    y_ref: np.ndarray
    use_y_approx: bool

    @classmethod
    def build(cls, model, x, y=None) -> "RegressionContext":
        """Without ground truth y, f(x) stands in for it."""
        x = np.asarray(x, dtype=np.float64)
        if y is None:
            return cls(model, x, forward(model, x), True)
        y = np.asarray(y, dtype=np.float64)
        return cls(model, x, y, False)


def output_loss(ctx: RegressionContext, eta) -> float:
    """Squared output error ||f(x + eta) - y||^2."""
    d = forward(ctx.model, ctx.x + eta) - ctx.y_ref
    return float(d @ d)


def output_loss_grad(ctx: RegressionContext, eta) -> np.ndarray:
    x_eta = ctx.x + eta
    d = forward(ctx.model, x_eta) - ctx.y_ref
    return 2.0 * vjp(ctx.model, x_eta, d)


def _finish(
    ctx: RegressionContext,
    eta: np.ndarray,
    *,
    t0: float,
    iterations_used: int,
    trajectory: list[float] | None = None,
    extra: dict | None = None,
) -> AttackReport:
    before = output_loss(ctx, np.zeros(ctx.model.input_dim))
    after = output_loss(ctx, eta)
    return AttackReport(
        eta=eta,
        success=after > before,
        norms=norm_triple(eta),
        loss_before=before,
        loss_after=after,
        predicted_class_after=None,
        iterations_used=iterations_used,
        loss_trajectory=trajectory or [],
        wall_time=time.perf_counter() - t0,
        extra=extra or {},
    )


def evaluate_perturbation(ctx: RegressionContext, eta) -> AttackReport:
    """Report what a given perturbation (e.g. a random baseline) achieves."""
    t0 = time.perf_counter()
    eta = np.asarray(eta, dtype=np.float64)
    return _finish(ctx, eta, t0=t0, iterations_used=0)


def _pick_sign(ctx: RegressionContext, eta: np.ndarray) -> tuple[np.ndarray, dict]:
    """Evaluate the true loss at ±eta and keep the better (tie: +)."""
    plus = output_loss(ctx, eta)
    minus = output_loss(ctx, -eta)
    if minus > plus:
        return -eta, {"sign": -1.0, "loss_plus": plus, "loss_minus": minus}
    return eta, {"sign": 1.0, "loss_plus": plus, "loss_minus": minus}


def quadratic_l2(ctx: RegressionContext, eps: float, seed: int = 0) -> AttackReport:
    """eps times the top right-singular direction of the Jacobian.

    The returned report flags (`eigenvalue_multiplicity`) when a random
    probe direction achieves the same gain, i.e. the top singular value
    looks non-isolated; no uniqueness of the direction is claimed.
    """
    t0 = time.perf_counter()
    sigma, v_max = spectral_norm_power(ctx.model, ctx.x, seed=seed)
    eta, sign_info = _pick_sign(ctx, eps * v_max)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    probe = rng.standard_normal(ctx.model.input_dim)
    probe /= np.linalg.norm(probe)
    probe_gain = float(np.linalg.norm(jvp(ctx.model, ctx.x, probe)))
    extra = {
        "sigma": sigma,
        "eigenvalue_multiplicity": bool(probe_gain >= sigma * (1.0 - 1e-8)),
        **sign_info,
    }
    return _finish(ctx, eta, t0=t0, iterations_used=1, extra=extra)


def quadratic_l1(ctx: RegressionContext, eps: float) -> AttackReport:
    """±eps on the single largest-gain coordinate (lowest index on ties)."""
    t0 = time.perf_counter()
    norms = col_norms(ctx.model, ctx.x)
    k_star = int(np.argmax(norms))
    base = np.zeros(ctx.model.input_dim)
    base[k_star] = eps
    eta, sign_info = _pick_sign(ctx, base)
    extra = {"index": k_star, "column_norm": float(norms[k_star]), **sign_info}
    return _finish(ctx, eta, t0=t0, iterations_used=1, extra=extra)


def quadratic_linf_greedy(
    ctx: RegressionContext, eps: float, max_elems: int | None = None
) -> AttackReport:
    """±eps on every coordinate, signs from the greedy column combination."""
    t0 = time.perf_counter()
    try:
        jac = jacobian(ctx.model, ctx.x, max_elems)
    except SizeGuardError as exc:
        raise SizeGuardError(
            f"{exc}; for large inputs use the subset attack on a partition instead"
        ) from exc
    cols = np.ascontiguousarray(jac.T)  # row z = Jacobian column z
    rho = greedy_sign_vector(cols)
    eta, sign_info = _pick_sign(ctx, eps * rho)
    extra = {"objective": eps * eps * signed_combination_sq(cols, rho), **sign_info}
    return _finish(ctx, eta, t0=t0, iterations_used=1, extra=extra)


def _subset_columns(model: Model, x, subset) -> np.ndarray:
    m = model.input_dim
    cols = np.empty((len(subset), model.output_dim))
    e = np.zeros(m)
    for row, idx in enumerate(subset):
        e[idx] = 1.0
        cols[row] = jvp(model, x, e)
        e[idx] = 0.0
    return cols


def subset_attack_quadratic(
    ctx: RegressionContext, partition: Partition, eps: float
) -> AttackReport:
    """Greedy ±eps pattern per subset, then the best subset by linearized gain."""
    t0 = time.perf_counter()
    if partition.size != ctx.model.input_dim:
        raise PartitionError(
            f"partition covers {partition.size} indices, model input is "
            f"{ctx.model.input_dim}"
        )
    best_val = -math.inf
    best_eta = None
    best_s = -1
    for s, subset in enumerate(partition.subsets):
        cols = _subset_columns(ctx.model, ctx.x, subset)
        rho = greedy_sign_vector(cols)
        eta_s = np.zeros(ctx.model.input_dim)
        eta_s[list(subset)] = eps * rho
        val = float(np.linalg.norm(jvp(ctx.model, ctx.x, eta_s)) ** 2)
        if val > best_val:
            best_val, best_eta, best_s = val, eta_s, s
    eta, sign_info = _pick_sign(ctx, best_eta)
    extra = {"subset": best_s, "objective": best_val, **sign_info}
    return _finish(ctx, eta, t0=t0, iterations_used=1, extra=extra)


def _linear_subset_step(
    ctx: RegressionContext,
    partition: Partition,
    eps: float,
    dither: float,
    rng: np.random.Generator,
    eta_base: np.ndarray,
    allowed: list[int],
) -> tuple[int, np.ndarray, np.ndarray]:
    """One subset selection: returns (s*, subset perturbation, gradient)."""
    m = ctx.model.input_dim
    g = None
    attempts = 1 + (_DITHER_RETRIES if dither > 0 else 0)
    for _ in range(attempts):
        tilde = eta_base if dither == 0 else eta_base + sample_lp_ball(rng, m, math.inf, dither)
        g_try = output_loss_grad(ctx, tilde)
        if np.any(g_try):
            g = g_try
            break
    if g is None:
        raise ZeroGradientError(
            "gradient stayed zero after dither retries; increase the dither radius"
        )
    masses = [float(np.sum(np.abs(g[list(partition.subsets[s])]))) for s in allowed]
    s_star = allowed[int(np.argmax(masses))]
    step = np.zeros(m)
    idx = list(partition.subsets[s_star])
    step[idx] = eps * np.where(g[idx] >= 0, 1.0, -1.0)
    return s_star, step, g


def subset_attack_linear(
    ctx: RegressionContext,
    partition: Partition,
    eps: float,
    dither: float = 0.0,
    seed: int = 0,
) -> AttackReport:
    """±eps on the subset carrying the most gradient l1 mass.

    The gradient is taken at a dithered point when `dither` > 0; with the
    output approximation in place the clean gradient is exactly zero, so
    some dither is required there.
    """
    t0 = time.perf_counter()
    if partition.size != ctx.model.input_dim:
        raise PartitionError(
            f"partition covers {partition.size} indices, model input is "
            f"{ctx.model.input_dim}"
        )
    rng = np.random.default_rng(seed)
    s_star, eta, g = _linear_subset_step(
        ctx, partition, eps, dither, rng, np.zeros(ctx.model.input_dim),
        list(range(partition.n_subsets)),
    )
    mass = float(np.sum(np.abs(g[list(partition.subsets[s_star])])))
    return _finish(
        ctx, eta, t0=t0, iterations_used=1,
        extra={"subset": s_star, "gradient_mass": mass},
    )


def linear_attack(ctx: RegressionContext, config: AttackConfig) -> AttackReport:
    """Iterative dual-norm ascent on the squared output error.

    Same driver shape as the classification loop but maximizing, with no
    early exit (there is no class to flip). Budget contract matches:
    per-step eps/T, final radial projection for finite p.
    """
    t0 = time.perf_counter()
    m = ctx.model.input_dim
    if config.eps == 0.0:
        return _finish(ctx, np.zeros(m), t0=t0, iterations_used=0)
    rng = np.random.default_rng(config.seed)
    eta = np.zeros(m)
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
            g_try = output_loss_grad(ctx, tilde)
            if np.any(g_try):
                g = g_try
                break
        if g is None:
            if t == 0:
                raise ZeroGradientError(
                    "zero gradient at the start (output approximation in use?); "
                    "set a dither radius"
                )
            extra["stall_reason"] = f"zero gradient at iteration {t} after retries"
            break
        eta = eta + dual_maximizer(-g, config.p, step_budget)
        used = t + 1
        trajectory.append(output_loss(ctx, eta))
    if not math.isinf(config.p):
        n = lp_norm(eta, config.p)
        if n > config.eps:
            eta *= config.eps / n
    return _finish(
        ctx, eta, t0=t0, iterations_used=used, trajectory=trajectory, extra=extra
    )


def multi_subset_attack(
    ctx: RegressionContext,
    partition: Partition,
    eps: float,
    T: int,
    seed: int = 0,
    dither: tuple[float, ...] | None = None,
) -> AttackReport:
    """T rounds of the linear subset attack on T distinct subsets.

    Each round re-linearizes at the accumulated perturbation. The default
    dither schedule is (eps, 0, ..., 0): the first gradient vanishes
    under the output approximation, later ones rarely do; rounds that do
    hit a zero gradient re-dither at radius eps before giving up.
    """
    t0 = time.perf_counter()
    if T > partition.n_subsets:
        raise PartitionError(
            f"T={T} exceeds the {partition.n_subsets} available subsets"
        )
    if T < 1:
        raise PartitionError("T must be >= 1")
    if dither is None:
        dither = (eps,) + (0.0,) * (T - 1)
    if len(dither) != T:
        raise ValueError(f"dither schedule has {len(dither)} radii, T={T}")
    rng = np.random.default_rng(seed)
    eta = np.zeros(ctx.model.input_dim)
    remaining = list(range(partition.n_subsets))
    chosen = []
    trajectory: list[float] = []
    for t in range(T):
        radius = dither[t]
        try:
            s_star, step, _ = _linear_subset_step(
                ctx, partition, eps, radius, rng, eta, remaining
            )
        except ZeroGradientError:
            # re-dither at full radius before giving up
            s_star, step, _ = _linear_subset_step(
                ctx, partition, eps, eps, rng, eta, remaining
            )
        eta = eta + step
        remaining.remove(s_star)
        chosen.append(s_star)
        trajectory.append(output_loss(ctx, eta))
    return _finish(
        ctx, eta, t0=t0, iterations_used=T, trajectory=trajectory,
        extra={"subsets": chosen},
    )


def exhaustive_sign_oracle(columns, eps: float) -> tuple[np.ndarray, float]:
    """Exact best ±1 pattern for the quadratic subset objective.

    Enumerates all 2^Z patterns (refused above Z=20); the value is the
    achieved ||J eta||^2 with entries ±eps. This is the test oracle the
    greedy approximation is measured against.
    """
    cols = np.ascontiguousarray(columns, dtype=np.float64)
    if cols.ndim != 2:
        raise ValueError("columns must form a 2-D (Z, K) array")
    if cols.shape[0] > _EXHAUSTIVE_MAX_Z:
        raise ValueError(
            f"Z={cols.shape[0]} needs 2^{cols.shape[0]} evaluations; "
            f"limit is Z={_EXHAUSTIVE_MAX_Z}"
        )
    rho, _ = backend.active().exhaustive_signs(cols)
    return rho, eps * eps * signed_combination_sq(cols, rho)
