"""numba-compiled kernels mirroring :mod:`wbcov.kernels._numpy`."""

import numpy as np
from numba import njit

from . import _numpy

perfect_diffset_search = njit(cache=True)(_numpy.perfect_diffset_search)


@njit(cache=True)
def lag_counts(marks, max_lag):
    counts = np.zeros(max_lag + 1, np.int64)
    n = marks.shape[0]
    for i in range(n):
        for j in range(i):
            d = abs(marks[i] - marks[j])
            if d <= max_lag:
                counts[d] += 1
    return counts


@njit(cache=True)
def _lag_average(C, marks, c, average):
    n, T, _ = C.shape
    y = np.zeros((n, 2 * c + 1), np.complex128)
    counts = np.zeros(2 * c + 1, np.int64)
    for j in range(T):
        for i in range(T):
            z = marks[i] - marks[j]
            if z < -c or z > c:
                continue
            if not average and counts[z + c] > 0:
                continue
            counts[z + c] += 1
            for l in range(n):
                y[l, z + c] += C[l, i, j]
    for z in range(2 * c + 1):
        if counts[z] > 0:
            for l in range(n):
                y[l, z] /= counts[z]
    return y, counts


def lag_average(C, marks, c, average):
    return _lag_average(
        np.ascontiguousarray(C, dtype=np.complex128),
        np.asarray(marks, dtype=np.int64),
        int(c),
        bool(average),
    )


@njit(cache=True)
def _raised_cosine(x, rolloff):
    out = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        if xi == 0.0:
            out[i] = 1.0
            continue
        s = np.sin(np.pi * xi) / (np.pi * xi)
        if rolloff > 0.0:
            denom = 1.0 - (2.0 * rolloff * xi) ** 2
            if abs(denom) < 1e-10:
                h = 1.0 / (2.0 * rolloff)
                out[i] = np.pi / 4.0 * np.sin(np.pi * h) / (np.pi * h)
                continue
            s = s * np.cos(np.pi * rolloff * xi) / denom
        out[i] = s
    return out


def raised_cosine(t, Ts, rolloff):
    x = np.asarray(t, dtype=np.float64) / Ts
    return _raised_cosine(x.ravel(), float(rolloff)).reshape(x.shape)


@njit(cache=True)
def _delay_objective(P, Zr, Zi):
    G, N = P.shape
    K = Zr.shape[0]
    out = np.zeros(G)
    zinv = np.zeros(K)
    for k in range(K):
        acc = 0.0
        for n in range(N):
            acc += Zr[k, n] ** 2 + Zi[k, n] ** 2
        if acc > 0.0:
            zinv[k] = 1.0 / np.sqrt(acc)
    for g in range(G):
        pn = 0.0
        for n in range(N):
            pn += P[g, n] ** 2
        if pn == 0.0:
            continue
        tot = 0.0
        for k in range(K):
            if zinv[k] == 0.0:
                continue
            ar = 0.0
            ai = 0.0
            for n in range(N):
                ar += P[g, n] * Zr[k, n]
                ai += P[g, n] * Zi[k, n]
            tot += np.sqrt(ar * ar + ai * ai) * zinv[k]
        out[g] = tot / np.sqrt(pn)
    return out


def delay_objective(P, Z):
    Z = np.asarray(Z, dtype=np.complex128)
    return _delay_objective(
        np.ascontiguousarray(P, dtype=np.float64),
        np.ascontiguousarray(Z.real),
        np.ascontiguousarray(Z.imag),
    )
