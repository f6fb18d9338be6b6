"""Pure-numpy kernel implementations (reference path)."""

import numpy as np


def lag_counts(marks, max_lag):
    marks = np.asarray(marks, dtype=np.int64)
    i, j = np.triu_indices(marks.shape[0], 1)
    d = np.abs(marks[i] - marks[j])
    return np.bincount(d[d <= max_lag], minlength=max_lag + 1).astype(np.int64)


def perfect_diffset_search(m, k):
    """Lexicographically smallest k-subset of Z_m, starting at 0, whose
    nonzero differences are all distinct. Returns an empty array if none.

    Plain-python backtracking; the numba backend compiles this same body.
    """
    sel = np.zeros(k, np.int64)
    nxt = np.zeros(k + 1, np.int64)
    used = np.zeros(m, np.bool_)
    if k <= 1:
        return sel[:k].copy()
    depth = 1
    nxt[1] = 1
    while depth > 0:
        if depth == k:
            return sel.copy()
        c = nxt[depth]
        placed = False
        while c <= m - (k - depth):
            ok = True
            marked = 0
            for i in range(depth):
                d1 = (c - sel[i]) % m
                d2 = m - d1
                if used[d1] or used[d2] or d1 == d2:
                    ok = False
                    break
                used[d1] = True
                used[d2] = True
                marked += 1
            if ok:
                sel[depth] = c
                nxt[depth] = c + 1
                depth += 1
                if depth < k:
                    nxt[depth] = c + 1
                placed = True
                break
            for i in range(marked):
                d1 = (c - sel[i]) % m
                used[d1] = False
                used[m - d1] = False
            c += 1
        if placed:
            continue
        depth -= 1
        if depth == 0:
            break
        c = sel[depth]
        for i in range(depth):
            d1 = (c - sel[i]) % m
            used[d1] = False
            used[m - d1] = False
    return np.zeros(0, np.int64)


def _lag_selection(marks, c, average):
    marks = np.asarray(marks, dtype=np.int64)
    T = marks.shape[0]
    # column-major vec order: index = j*T + i holds C[i, j] at lag r_i - r_j
    z = (marks[None, :] - marks[:, None]).ravel()  # z[j*T + i] = r_i - r_j
    rows = np.arange(T * T)
    keep = np.abs(z) <= c
    rows, z = rows[keep], z[keep]
    if not average:
        _, first = np.unique(z, return_index=True)
        rows, z = rows[first], z[first]
    return rows, z + c


def lag_average(C, marks, c, average):
    """Collapse each T x T matrix in ``C`` onto lags -c..c.

    Returns ``(y, counts)`` with ``y`` of shape (n, 2c+1); lags without any
    snapshot are left at zero with a zero count.
    """
    C = np.asarray(C, dtype=np.complex128)
    n, T, _ = C.shape
    rows, cols = _lag_selection(marks, c, average)
    counts = np.bincount(cols, minlength=2 * c + 1).astype(np.int64)
    flat = C.transpose(0, 2, 1).reshape(n, T * T)  # column-major vec
    y = np.zeros((n, 2 * c + 1), dtype=np.complex128)
    np.add.at(y, (slice(None), cols), flat[:, rows])
    nz = counts > 0
    y[:, nz] /= counts[nz]
    return y, counts


def raised_cosine(t, Ts, rolloff):
    x = np.asarray(t, dtype=np.float64) / Ts
    out = np.sinc(x)
    if rolloff > 0.0:
        denom = 1.0 - (2.0 * rolloff * x) ** 2
        sing = np.abs(denom) < 1e-10
        safe = np.where(sing, 1.0, denom)
        with np.errstate(invalid="ignore", over="ignore"):
            limit = np.pi / 4.0 * np.sinc(1.0 / (2.0 * rolloff))
        out = np.where(sing, limit, out * np.cos(np.pi * rolloff * x) / safe)
    return out


def delay_objective(P, Z):
    """Sum over rows z_k of |p^T z_k| / (|p| |z_k|) for each pulse row p of P."""
    P = np.asarray(P, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.complex128)
    pn = np.linalg.norm(P, axis=1)
    zn = np.linalg.norm(Z, axis=1)
    live = zn > 0
    if not live.any():
        return np.zeros(P.shape[0])
    corr = np.abs(P @ Z[live].T) / zn[live][None, :]
    pn_safe = np.where(pn > 0, pn, 1.0)
    return np.where(pn > 0, corr.sum(axis=1) / pn_safe, 0.0)
