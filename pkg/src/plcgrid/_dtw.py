"""Compiled dynamic-time-warping kernels over integer symbol codes."""
import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True)
def accumulated_cost(a, b, table):
    n, m = a.size, b.size
    acc = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            d = table[a[i], b[j]]
            if i == 0 and j == 0:
                acc[i, j] = d
            elif i == 0:
                acc[i, j] = d + acc[i, j - 1]
            elif j == 0:
                acc[i, j] = d + acc[i - 1, j]
            else:
                best = acc[i - 1, j - 1]
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
                acc[i, j] = d + best
    return acc


@njit(cache=True)
def dtw_cost(a, b, table, cutoff):
    """Optimal warping cost; stops early and returns ``inf`` once every cell
    of a row exceeds ``cutoff``."""
    n, m = a.size, b.size
    prev = np.empty(m)
    cur = np.empty(m)
    for i in range(n):
        row_min = INF
        for j in range(m):
            d = table[a[i], b[j]]
            if i == 0 and j == 0:
                v = d
            elif i == 0:
                v = d + cur[j - 1]
            elif j == 0:
                v = d + prev[j]
            else:
                best = prev[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if cur[j - 1] < best:
                    best = cur[j - 1]
                v = d + best
            cur[j] = v
            if v < row_min:
                row_min = v
        if row_min > cutoff:
            return INF
        for j in range(m):
            prev[j] = cur[j]
    return prev[m - 1]


@njit(cache=True)
def within_radius_matrix(windows, table, radius):
    """Boolean matrix of window pairs whose warping cost is at most ``radius``."""
    w = windows.shape[0]
    out = np.zeros((w, w), dtype=np.bool_)
    for i in range(w):
        out[i, i] = True
        for j in range(i + 1, w):
            if dtw_cost(windows[i], windows[j], table, radius) <= radius:
                out[i, j] = True
                out[j, i] = True
    return out


@njit(cache=True)
def min_cost_to_templates(windows, templates, table):
    w = windows.shape[0]
    out = np.empty(w)
    for i in range(w):
        best = INF
        for t in range(templates.shape[0]):
            c = dtw_cost(windows[i], templates[t], table, best)
            if c < best:
                best = c
        out[i] = best
    return out
