"""Node-wise inner loops shared by every discrete solve.

Each kernel has a numba implementation and a vectorised numpy twin; the
module-level names point at whichever backend :mod:`fnhom._backend`
selected. Both variants are always importable so tests and the benchmark
can compare them directly.

Conventions: ``v`` is a flat node vector of length N; ``rows`` (length R)
lists the nodes that carry an equation; ``Wh`` has shape (B, R, K) and
holds the non-negative weight of branch b on stencil direction k for
equation r, already divided by h**2; ``c`` has shape (B, R);
``nbr_plus``/``nbr_minus`` have shape (K, N) and give the node index of
x + h*xi_k and x - h*xi_k.
"""

import numpy as np

from ._backend import USE_NUMBA, njit


# ---------------------------------------------------------------- numpy path

def branch_values_numpy(v, Wh, c, nbr_plus, nbr_minus, rows):
    vr = v[rows]
    d2 = v[nbr_plus[:, rows]] + v[nbr_minus[:, rows]] - 2.0 * vr[None, :]
    return c + np.einsum("brk,kr->br", Wh, d2)


def improve_policy_numpy(vals, policy, maximize, tie):
    cols = np.arange(vals.shape[1])
    if maximize:
        cand = np.argmax(vals, axis=0)
    else:
        cand = np.argmin(vals, axis=0)
    best = vals[cand, cols]
    cur = vals[policy, cols]
    keep = np.abs(cur - best) <= tie
    new = np.where(keep, policy, cand).astype(np.int64)
    return new, vals[new, cols]


def assemble_numpy(policy, rows, Wh, nbr_plus, nbr_minus):
    K = Wh.shape[2]
    R = rows.shape[0]
    w = Wh[policy, np.arange(R), :]  # (R, K)
    eq = np.arange(R, dtype=np.int64)
    ii = np.concatenate([eq] + [eq] * (2 * K))
    jj = np.concatenate([rows] + [nbr_plus[k, rows] for k in range(K)]
                        + [nbr_minus[k, rows] for k in range(K)])
    dd = np.concatenate([-2.0 * w.sum(axis=1)] + [w[:, k] for k in range(K)] * 2)
    return ii, jj, dd


def shell_max_numpy(radius, vals, centers, rel_width):
    out = np.full(centers.shape[0], -np.inf)
    counts = np.zeros(centers.shape[0], dtype=np.int64)
    for s in range(centers.shape[0]):
        r = centers[s]
        m = (radius >= r * (1.0 - rel_width)) & (radius <= r * (1.0 + rel_width))
        counts[s] = int(m.sum())
        if counts[s]:
            out[s] = np.abs(vals[m]).max()
    return out, counts


# ---------------------------------------------------------------- numba path

@njit
def _branch_values_nb(v, Wh, c, nbr_plus, nbr_minus, rows):
    B, _, K = Wh.shape
    R = rows.shape[0]
    out = np.empty((B, R))
    for r in range(R):
        i = rows[r]
        vi = v[i]
        for b in range(B):
            acc = c[b, r]
            for k in range(K):
                w = Wh[b, r, k]
                if w != 0.0:
                    acc += w * (v[nbr_plus[k, i]] + v[nbr_minus[k, i]] - 2.0 * vi)
            out[b, r] = acc
    return out


@njit
def _improve_policy_nb(vals, policy, maximize, tie):
    B, R = vals.shape
    new = np.empty(R, dtype=np.int64)
    best = np.empty(R)
    for r in range(R):
        kb = 0
        vb = vals[0, r]
        for b in range(1, B):
            x = vals[b, r]
            if (maximize and x > vb) or ((not maximize) and x < vb):
                vb = x
                kb = b
        p = policy[r]
        if abs(vals[p, r] - vb) <= tie:
            kb = p
        new[r] = kb
        best[r] = vals[kb, r]
    return new, best


@njit
def _assemble_nb(policy, rows, Wh, nbr_plus, nbr_minus):
    K = Wh.shape[2]
    R = rows.shape[0]
    nnz = R * (2 * K + 1)
    ii = np.empty(nnz, dtype=np.int64)
    jj = np.empty(nnz, dtype=np.int64)
    dd = np.empty(nnz)
    # same ordering as the numpy twin: diagonals, plus-neighbours, minus-neighbours
    for r in range(R):
        i = rows[r]
        b = policy[r]
        s = 0.0
        for k in range(K):
            w = Wh[b, r, k]
            s += w
            ii[R * (1 + k) + r] = r
            jj[R * (1 + k) + r] = nbr_plus[k, i]
            dd[R * (1 + k) + r] = w
            ii[R * (1 + K + k) + r] = r
            jj[R * (1 + K + k) + r] = nbr_minus[k, i]
            dd[R * (1 + K + k) + r] = w
        ii[r] = r
        jj[r] = i
        dd[r] = -2.0 * s
    return ii, jj, dd


@njit
def _shell_max_nb(radius, vals, centers, rel_width):
    S = centers.shape[0]
    out = np.full(S, -np.inf)
    counts = np.zeros(S, dtype=np.int64)
    for i in range(radius.shape[0]):
        ri = radius[i]
        a = abs(vals[i])
        for s in range(S):
            r = centers[s]
            if ri >= r * (1.0 - rel_width) and ri <= r * (1.0 + rel_width):
                counts[s] += 1
                if a > out[s]:
                    out[s] = a
    return out, counts


def branch_values_numba(v, Wh, c, nbr_plus, nbr_minus, rows):
    return _branch_values_nb(v, Wh, c, nbr_plus, nbr_minus, rows)


def improve_policy_numba(vals, policy, maximize, tie):
    return _improve_policy_nb(vals, policy.astype(np.int64), bool(maximize), float(tie))


def assemble_numba(policy, rows, Wh, nbr_plus, nbr_minus):
    return _assemble_nb(policy.astype(np.int64), rows, Wh, nbr_plus, nbr_minus)


def shell_max_numba(radius, vals, centers, rel_width):
    return _shell_max_nb(radius, vals, centers, float(rel_width))


if USE_NUMBA:
    branch_values = branch_values_numba
    improve_policy = improve_policy_numba
    assemble = assemble_numba
    shell_max = shell_max_numba
else:
    branch_values = branch_values_numpy
    improve_policy = improve_policy_numpy
    assemble = assemble_numpy
    shell_max = shell_max_numpy
