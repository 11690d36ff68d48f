# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: fused layer-stack evaluation and sign search.

Mirrors the contract of `perturbkit._purepy`. The layer stack arrives
packed as lists of C-contiguous float64 arrays plus int32 op arrays; all
inner loops run without Python-object traffic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite, tanh

from perturbkit.errors import NumericError

cnp.import_array()

NAME = "compiled"

cdef int OP_DENSE = 0
cdef int ACT_RELU = 0
cdef int ACT_TANH = 1
cdef int ACT_SIGMOID = 2
cdef int ACT_SOFTMAX = 3
cdef int ACT_IDENTITY = 4


cdef object _dense(const double[:, ::1] w, const double[::1] b, const double[::1] v):
    cdef Py_ssize_t n_out = w.shape[0]
    cdef Py_ssize_t n_in = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n_out, dtype=np.float64)
    cdef double[::1] om = out
    cdef Py_ssize_t r, c
    cdef double acc
    for r in range(n_out):
        acc = b[r]
        for c in range(n_in):
            acc += w[r, c] * v[c]
        if not isfinite(acc):
            raise NumericError("non-finite value after dense layer")
        om[r] = acc
    return out


cdef object _dense_t(const double[:, ::1] w, const double[::1] g):
    # w^T g without materializing the transpose
    cdef Py_ssize_t n_out = w.shape[0]
    cdef Py_ssize_t n_in = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n_in, dtype=np.float64)
    cdef double[::1] om = out
    cdef Py_ssize_t r, c
    cdef double gr
    for r in range(n_out):
        gr = g[r]
        for c in range(n_in):
            om[c] += w[r, c] * gr
    return out


cdef object _act(int code, const double[::1] z):
    cdef Py_ssize_t n = z.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] om = out
    cdef Py_ssize_t i
    cdef double m, s, e
    if code == ACT_RELU:
        for i in range(n):
            om[i] = z[i] if z[i] > 0.0 else 0.0
    elif code == ACT_TANH:
        for i in range(n):
            om[i] = tanh(z[i])
    elif code == ACT_SIGMOID:
        for i in range(n):
            if z[i] >= 0.0:
                om[i] = 1.0 / (1.0 + exp(-z[i]))
            else:
                e = exp(z[i])
                om[i] = e / (1.0 + e)
    elif code == ACT_SOFTMAX:
        m = z[0]
        for i in range(1, n):
            if z[i] > m:
                m = z[i]
        s = 0.0
        for i in range(n):
            om[i] = exp(z[i] - m)
            s += om[i]
        for i in range(n):
            om[i] /= s
    else:
        for i in range(n):
            om[i] = z[i]
    return out


cdef list _stages(list ws, list bs, const int[::1] op_kind, const int[::1] op_arg, const double[::1] x):
    cdef list vals = [np.array(x, dtype=np.float64)]
    cdef object cur = vals[0]
    cdef Py_ssize_t i
    for i in range(op_kind.shape[0]):
        if op_kind[i] == OP_DENSE:
            cur = _dense(ws[op_arg[i]], bs[op_arg[i]], cur)
        else:
            cur = _act(op_arg[i], cur)
        vals.append(cur)
    return vals


def forward_stages(list ws, list bs, const int[::1] op_kind, const int[::1] op_arg, const double[::1] x):
    return _stages(ws, bs, op_kind, op_arg, x)


def forward(list ws, list bs, const int[::1] op_kind, const int[::1] op_arg, const double[::1] x):
    cdef list vals = _stages(ws, bs, op_kind, op_arg, x)
    return vals[len(vals) - 1]


cdef void _act_bwd(int code, double[::1] g, const double[::1] z, const double[::1] a):
    # multiply cotangent g in place by the activation derivative
    cdef Py_ssize_t n = g.shape[0]
    cdef Py_ssize_t i
    cdef double dot
    if code == ACT_RELU:
        for i in range(n):
            if z[i] <= 0.0:
                g[i] = 0.0
    elif code == ACT_TANH:
        for i in range(n):
            g[i] *= 1.0 - a[i] * a[i]
    elif code == ACT_SIGMOID:
        for i in range(n):
            g[i] *= a[i] * (1.0 - a[i])
    elif code == ACT_SOFTMAX:
        dot = 0.0
        for i in range(n):
            dot += a[i] * g[i]
        for i in range(n):
            g[i] = a[i] * (g[i] - dot)
    # identity: nothing


def vjp(list ws, list bs, const int[::1] op_kind, const int[::1] op_arg, const double[::1] x, const double[::1] u):
    cdef list vals = _stages(ws, bs, op_kind, op_arg, x)
    cdef object g = np.array(u, dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(op_kind.shape[0] - 1, -1, -1):
        if op_kind[i] == OP_DENSE:
            g = _dense_t(ws[op_arg[i]], g)
        else:
            _act_bwd(op_arg[i], g, vals[i], vals[i + 1])
    return g


def jvp(list ws, list bs, const int[::1] op_kind, const int[::1] op_arg, const double[::1] x, const double[::1] v):
    cdef list vals = _stages(ws, bs, op_kind, op_arg, x)
    cdef object t = np.array(v, dtype=np.float64)
    cdef Py_ssize_t i
    for i in range(op_kind.shape[0]):
        if op_kind[i] == OP_DENSE:
            t = _dense_mv(ws[op_arg[i]], t)
        else:
            _act_bwd(op_arg[i], t, vals[i], vals[i + 1])
    return t


cdef object _dense_mv(const double[:, ::1] w, const double[::1] v):
    # w v, no bias (tangent propagation)
    cdef Py_ssize_t n_out = w.shape[0]
    cdef Py_ssize_t n_in = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n_out, dtype=np.float64)
    cdef double[::1] om = out
    cdef Py_ssize_t r, c
    cdef double acc
    for r in range(n_out):
        acc = 0.0
        for c in range(n_in):
            acc += w[r, c] * v[c]
        om[r] = acc
    return out


def greedy_signs(const double[:, ::1] cols):
    """Greedy ±1 signs for rows of `cols` (assumed sorted by caller)."""
    cdef Py_ssize_t z_count = cols.shape[0]
    cdef Py_ssize_t k_dim = cols.shape[1]
    cdef cnp.ndarray[double, ndim=1] rho = np.ones(z_count, dtype=np.float64)
    cdef double[::1] rm = rho
    cdef cnp.ndarray[double, ndim=1] s = np.array(cols[0], dtype=np.float64)
    cdef double[::1] sm = s
    cdef Py_ssize_t z, j
    cdef double d, r
    for z in range(1, z_count):
        d = 0.0
        for j in range(k_dim):
            d += sm[j] * cols[z, j]
        r = 1.0 if d >= 0.0 else -1.0
        rm[z] = r
        for j in range(k_dim):
            sm[j] += r * cols[z, j]
    return rho


def exhaustive_signs(const double[:, ::1] cols):
    """Exact maximizer of ||sum_z rho_z cols[z]||^2 over rho in {-1,+1}^Z.

    Gray-code walk; the running sum changes by one flipped row per step.
    Keeps the first strict maximum in enumeration order.
    """
    cdef Py_ssize_t z_count = cols.shape[0]
    cdef Py_ssize_t k_dim = cols.shape[1]
    if z_count > 25:
        raise ValueError(f"exhaustive sign search over 2^{z_count} patterns refused")
    cdef cnp.ndarray[double, ndim=1] rho_cur = np.ones(z_count, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] rho_best = np.ones(z_count, dtype=np.float64)
    cdef double[::1] rc = rho_cur
    cdef double[::1] rb = rho_best
    cdef cnp.ndarray[double, ndim=1] s = np.zeros(k_dim, dtype=np.float64)
    cdef double[::1] sm = s
    cdef Py_ssize_t z, j, k
    cdef unsigned long long i, m, total = (<unsigned long long>1) << z_count
    cdef double val, best_val, delta
    for z in range(z_count):
        for j in range(k_dim):
            sm[j] += cols[z, j]
    best_val = 0.0
    for j in range(k_dim):
        best_val += sm[j] * sm[j]
    for i in range(1, total):
        m = i
        k = 0
        while (m & 1) == 0:
            m >>= 1
            k += 1
        rc[k] = -rc[k]
        delta = 2.0 * rc[k]
        val = 0.0
        for j in range(k_dim):
            sm[j] += delta * cols[k, j]
            val += sm[j] * sm[j]
        if val > best_val:
            best_val = val
            for z in range(z_count):
                rb[z] = rc[z]
    if z_count > 0 and rb[0] < 0:  # rho and -rho tie; canonicalize on entry 0
        for z in range(z_count):
            rb[z] = -rb[z]
    # recompute cleanly so equal sign patterns give bit-equal values
    val = 0.0
    for j in range(k_dim):
        delta = 0.0
        for z in range(z_count):
            delta += rb[z] * cols[z, j]
        val += delta * delta
    return rho_best, val
