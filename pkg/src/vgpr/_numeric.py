"""Compiled inner loops for stacks of small dense problems."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def sq_dist_stack(A, B, w):
    """``out[t, i, j] = sum_l w[l] * (A[t, i, l] - B[t, j, l])**2``, summed in column order."""
    T, na, d = A.shape
    nb_ = B.shape[1]
    out = np.zeros((T, na, nb_))
    for t in range(T):
        for i in range(na):
            for j in range(nb_):
                s = 0.0
                for l in range(d):
                    diff = A[t, i, l] - B[t, j, l]
                    s += w[l] * (diff * diff)
                out[t, i, j] = s
    return out


@nb.njit(cache=True)
def lower_solve(L, R):
    """Solve ``L[t] X[t] = R[t]`` for lower-triangular ``L``; R is (T, k, r)."""
    T, k, r = R.shape
    out = np.empty_like(R)
    for t in range(T):
        for c in range(r):
            for i in range(k):
                s = R[t, i, c]
                for j in range(i):
                    s -= L[t, i, j] * out[t, j, c]
                out[t, i, c] = s / L[t, i, i]
    return out


@nb.njit(cache=True)
def upper_solve_t(L, R):
    """Solve ``L[t].T X[t] = R[t]`` for lower-triangular ``L``; R is (T, k, r)."""
    T, k, r = R.shape
    out = np.empty_like(R)
    for t in range(T):
        for c in range(r):
            for i in range(k - 1, -1, -1):
                s = R[t, i, c]
                for j in range(i + 1, k):
                    s -= L[t, j, i] * out[t, j, c]
                out[t, i, c] = s / L[t, i, i]
    return out


@nb.njit(cache=True)
def weighted_sqdiff_matvec(G, Xd, b):
    """``out[t, i, p] = sum_j G[t, i, j] * (Xd[t, i, p] - Xd[t, j, p])**2 * b[t, j]``."""
    T, k, P = Xd.shape
    out = np.zeros((T, k, P))
    for t in range(T):
        for i in range(k):
            for j in range(k):
                gb = G[t, i, j] * b[t, j]
                for p in range(P):
                    diff = Xd[t, i, p] - Xd[t, j, p]
                    out[t, i, p] += gb * (diff * diff)
    return out
