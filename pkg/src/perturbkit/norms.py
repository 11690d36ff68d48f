"""Dual-norm machinery and operator-norm solvers.

These closed forms drive every norm-constrained attack: the lp-ball
linear minimizer, the matrix-free spectral norm, per-column Jacobian
norms, and the greedy ±1 sign combination.
"""

import math

import numpy as np

from perturbkit import backend
from perturbkit.errors import DegenerateJacobianError, ZeroGradientError
from perturbkit.model import Model, jvp, vjp

_POWER_RESTARTS = 3
_DEGENERATE_SIGMA = 1e-14


def lp_norm(v, p) -> float:
    """The lp norm for p in [1, inf]; p=inf is max |v_i|."""
    if p < 1:
        raise ValueError(f"lp_norm requires p >= 1, got {p}")
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    a = np.abs(v)
    if math.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.sum())
    if p == 2:
        return float(np.sqrt(a @ a))
    m = float(a.max())
    if m == 0.0:
        return 0.0
    return m * float(np.sum((a / m) ** p)) ** (1.0 / p)


def dual_exponent(p) -> float:
    """q with 1/p + 1/q = 1; dual pairs are (1, inf) and (2, 2)."""
    if p < 1:
        raise ValueError(f"dual_exponent requires p >= 1, got {p}")
    if math.isinf(p):
        return 1.0
    if p == 1:
        return math.inf
    return p / (p - 1.0)


def _sign_plus(v: np.ndarray) -> np.ndarray:
    # sign with sign(0) = +1, the package-wide tie rule
    return np.where(v >= 0.0, 1.0, -1.0)


def dual_maximizer(g, p, eps: float) -> np.ndarray:
    """Minimizer of eta . g over the lp ball of radius eps.

    Returns eta with ||eta||_p = eps and eta . g = -eps ||g||_q. For p=1
    the mass lands on one max-|g| coordinate (lowest index on ties).
    Direction depends only on the direction of g.
    """
    if eps <= 0:
        raise ValueError(f"dual_maximizer requires eps > 0, got {eps}")
    if p < 1:
        raise ValueError(f"dual_maximizer requires p >= 1, got {p}")
    g = np.asarray(g, dtype=np.float64)
    if not np.any(g):
        raise ZeroGradientError("gradient is exactly zero; dither before retrying")
    if math.isinf(p):
        return -eps * _sign_plus(g)
    if p == 1:
        k = int(np.argmax(np.abs(g)))
        eta = np.zeros_like(g)
        eta[k] = -eps * (1.0 if g[k] >= 0 else -1.0)
        return eta
    q = dual_exponent(p)
    t = np.abs(g) / lp_norm(g, q)
    return -eps * _sign_plus(g) * t ** (q - 1.0)


def spectral_norm_power(
    model: Model,
    x,
    iters: int = 500,
    tol: float = 1e-10,
    seed: int = 0,
    sigma_trace: list | None = None,
) -> tuple[float, np.ndarray]:
    """Largest singular value of J_f(x) and its right singular vector.

    Matrix-free power iteration on J^T J through jvp/vjp pairs. The
    sigma estimates are nondecreasing; iteration stops once successive
    estimates differ by less than `tol`. A start vector that stalls
    below 1e-14 is redrawn (counter-derived seed) a few times before the
    Jacobian is declared degenerate.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    for attempt in range(_POWER_RESTARTS):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        v = rng.standard_normal(model.input_dim)
        v /= np.linalg.norm(v)
        prev = -math.inf
        stalled = False
        for _ in range(iters):
            u = jvp(model, x, v)
            sigma = float(np.linalg.norm(u))
            if sigma_trace is not None:
                sigma_trace.append(sigma)
            if sigma < _DEGENERATE_SIGMA:
                stalled = True
                break
            if abs(sigma - prev) < tol:
                return sigma, v
            prev = sigma
            w = vjp(model, x, u)
            nw = float(np.linalg.norm(w))
            if nw < _DEGENERATE_SIGMA:
                stalled = True
                break
            v = w / nw
        if not stalled:
            u = jvp(model, x, v)
            return float(np.linalg.norm(u)), v
    raise DegenerateJacobianError(
        f"spectral estimate stayed below {_DEGENERATE_SIGMA} after "
        f"{_POWER_RESTARTS} restarts; Jacobian is numerically zero"
    )


def col_norms(model: Model, x) -> np.ndarray:
    """l2 norm of each Jacobian column, via one jvp per coordinate."""
    m = model.input_dim
    out = np.empty(m)
    e = np.zeros(m)
    for k in range(m):
        e[k] = 1.0
        out[k] = np.linalg.norm(jvp(model, x, e))
        e[k] = 0.0
    return out


def _as_column_matrix(columns) -> np.ndarray:
    cols = np.ascontiguousarray(columns, dtype=np.float64)
    if cols.ndim != 2:
        raise ValueError("columns must form a 2-D (Z, K) array")
    return cols


def greedy_sign_vector(columns) -> np.ndarray:
    """Greedy ±1 signs approximately maximizing ||sum_z rho_z col_z||^2.

    Internally sorts columns by descending l2 norm (stable, so equal
    norms keep their original order), fixes +1 on the largest, then
    signs each next column by its inner product with the running sum
    (sign(0)=+1). The result is returned in the caller's input order.
    """
    cols = _as_column_matrix(columns)
    if cols.shape[0] == 0:
        raise ValueError("greedy_sign_vector needs at least one column")
    norms = np.linalg.norm(cols, axis=1)
    order = np.argsort(-norms, kind="stable")
    rho_sorted = backend.active().greedy_signs(np.ascontiguousarray(cols[order]))
    rho = np.empty_like(rho_sorted)
    rho[order] = rho_sorted
    return rho


def signed_combination_sq(columns, rho) -> float:
    """||sum_z rho_z col_z||^2, the quadratic sign-search objective."""
    cols = _as_column_matrix(columns)
    s = np.asarray(rho, dtype=np.float64) @ cols
    return float(s @ s)


def sample_lp_sphere(rng: np.random.Generator, dim: int, p, radius: float) -> np.ndarray:
    """A point with ||eta||_p == radius (uniform direction for p < inf)."""
    if radius == 0:
        return np.zeros(dim)
    if math.isinf(p):
        return radius * (2.0 * rng.integers(0, 2, dim) - 1.0)
    if p == 2:
        z = rng.standard_normal(dim)
    else:
        # generalized-normal direction: |z_i| ~ Gamma(1/p)^(1/p)
        mag = rng.gamma(1.0 / p, 1.0, dim) ** (1.0 / p)
        z = mag * (2.0 * rng.integers(0, 2, dim) - 1.0)
    n = lp_norm(z, p)
    if n == 0.0:
        z = np.ones(dim)
        n = lp_norm(z, p)
    return radius * z / n


def sample_lp_ball(rng: np.random.Generator, dim: int, p, radius: float) -> np.ndarray:
    """A point drawn uniformly from the lp ball of the given radius."""
    if radius == 0:
        return np.zeros(dim)
    if math.isinf(p):
        return rng.uniform(-radius, radius, dim)
    surface = sample_lp_sphere(rng, dim, p, radius)
    return surface * rng.uniform() ** (1.0 / dim)
