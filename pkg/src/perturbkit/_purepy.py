"""NumPy kernel backend. Same contract as the compiled `_core` module.

All kernels take a packed layer stack: `ws`/`bs` are lists of C-contiguous
float64 weight matrices (out, in) and bias vectors (out,), and
`op_kind`/`op_arg` are parallel int32 arrays describing the op sequence
(dense index or activation code).
"""

import numpy as np

from perturbkit._codes import (
    ACT_IDENTITY,
    ACT_RELU,
    ACT_SIGMOID,
    ACT_SOFTMAX,
    ACT_TANH,
    OP_DENSE,
)
from perturbkit.errors import NumericError

NAME = "python"


def _apply_act(code: int, z: np.ndarray) -> np.ndarray:
    if code == ACT_RELU:
        return np.maximum(z, 0.0)
    if code == ACT_TANH:
        return np.tanh(z)
    if code == ACT_SIGMOID:
        # stable logistic for large |z|
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if code == ACT_SOFTMAX:
        e = np.exp(z - z.max())
        return e / e.sum()
    if code == ACT_IDENTITY:
        return z.copy()
    raise ValueError(f"unknown activation code {code}")


def forward_stages(ws, bs, op_kind, op_arg, x):
    """Run the stack, returning the value entering/leaving every op.

    Result has length n_ops + 1; entry 0 is (a copy of) x and entry i+1
    is the output of op i.
    """
    vals = [np.array(x, dtype=np.float64)]
    cur = vals[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(op_kind)):
            if op_kind[i] == OP_DENSE:
                w = ws[op_arg[i]]
                cur = w @ cur + bs[op_arg[i]]
                if not np.isfinite(cur).all():
                    raise NumericError("non-finite value after dense layer")
            else:
                cur = _apply_act(op_arg[i], cur)
            vals.append(cur)
    return vals


def forward(ws, bs, op_kind, op_arg, x):
    return forward_stages(ws, bs, op_kind, op_arg, x)[-1]


def vjp(ws, bs, op_kind, op_arg, x, u):
    """Pull the cotangent u back through the stack: returns J(x)^T u."""
    vals = forward_stages(ws, bs, op_kind, op_arg, x)
    g = np.array(u, dtype=np.float64)
    for i in range(len(op_kind) - 1, -1, -1):
        if op_kind[i] == OP_DENSE:
            g = ws[op_arg[i]].T @ g
        else:
            code = op_arg[i]
            if code == ACT_RELU:
                g = g * (vals[i] > 0)
            elif code == ACT_TANH:
                g = g * (1.0 - vals[i + 1] ** 2)
            elif code == ACT_SIGMOID:
                a = vals[i + 1]
                g = g * (a * (1.0 - a))
            elif code == ACT_SOFTMAX:
                s = vals[i + 1]
                g = s * (g - float(s @ g))
            # identity: pass through
    return g


def jvp(ws, bs, op_kind, op_arg, x, v):
    """Push the tangent v forward through the stack: returns J(x) v."""
    vals = forward_stages(ws, bs, op_kind, op_arg, x)
    t = np.array(v, dtype=np.float64)
    for i in range(len(op_kind)):
        if op_kind[i] == OP_DENSE:
            t = ws[op_arg[i]] @ t
        else:
            code = op_arg[i]
            if code == ACT_RELU:
                t = t * (vals[i] > 0)
            elif code == ACT_TANH:
                t = t * (1.0 - vals[i + 1] ** 2)
            elif code == ACT_SIGMOID:
                a = vals[i + 1]
                t = t * (a * (1.0 - a))
            elif code == ACT_SOFTMAX:
                s = vals[i + 1]
                t = s * (t - float(s @ t))
    return t


def greedy_signs(cols: np.ndarray) -> np.ndarray:
    """Greedy ±1 signs for rows of `cols` (assumed sorted by caller).

    Row 0 gets +1; row z gets the sign of its inner product with the
    running signed sum (ties resolve to +1).
    """
    z_count = cols.shape[0]
    rho = np.ones(z_count)
    s = cols[0].copy()
    for z in range(1, z_count):
        r = 1.0 if float(s @ cols[z]) >= 0.0 else -1.0
        rho[z] = r
        s += r * cols[z]
    return rho


def exhaustive_signs(cols: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact maximizer of ||sum_z rho_z cols[z]||^2 over rho in {-1,+1}^Z.

    Enumerates patterns in Gray-code order and keeps the first strict
    maximum, matching the compiled kernel's tie behavior.
    """
    z_count, _ = cols.shape
    if z_count > 25:
        raise ValueError(f"exhaustive sign search over 2^{z_count} patterns refused")
    total = 1 << z_count
    shifts = np.arange(z_count, dtype=np.uint64)
    best_val = -np.inf
    best_gray = 0
    chunk = 1 << 14
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        gray = idx ^ (idx >> np.uint64(1))
        signs = 1.0 - 2.0 * ((gray[:, None] >> shifts[None, :]) & np.uint64(1))
        sums = signs @ cols
        vals = np.einsum("ij,ij->i", sums, sums)
        local = int(np.argmax(vals))
        if vals[local] > best_val:
            best_val = float(vals[local])
            best_gray = int(gray[local])
    rho = 1.0 - 2.0 * ((best_gray >> np.arange(z_count)) & 1).astype(np.float64)
    if rho[0] < 0:  # rho and -rho tie; canonicalize on the first entry
        rho = -rho
    # recompute cleanly so equal sign patterns give bit-equal values
    s = rho @ cols
    return rho, float(s @ s)
