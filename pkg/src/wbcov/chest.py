"""Channel estimation from one training block per coherence block.

Two families are provided: the per-subcarrier LMMSE estimator built from an
identified covariance (dense and low-rank forms), and the delay-gain (DG)
estimator, which pools all subcarriers to fit one delay and one complex gain
per identified path and then rebuilds every subcarrier response.

Observation arrays ``phi`` have shape (K, N_c, T) or (N_c, T); estimates
follow the same leading axes with M in place of T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import ArrayConfig, Dictionary, beta_coeffs, raised_cosine
from .errors import DegenerateObservation, DimensionMismatch, RankDeficient, Singular

__all__ = [
    "ChannelEstimate",
    "DelayGainModel",
    "lmmse_estimate",
    "lmmse_estimate_lowrank",
    "gain_mmse",
    "delay_objective",
    "delay_estimate",
    "path_gains_lsq",
    "dg_estimate",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ChannelEstimate:
    h: np.ndarray  # (..., N_c, M)
    method: str
    model: "DelayGainModel | None" = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.h)):
            raise ValueError("channel estimate has non-finite entries")


@dataclass
class DelayGainModel:
    delays: np.ndarray  # (|S|,) seconds
    theta: np.ndarray  # (N_c, |S|), beta_l[ell] from the estimated delays
    block_gains: np.ndarray  # (K, |S|)
    info: dict = field(default_factory=dict)


def _herm(A):
    return np.conj(np.swapaxes(A, -1, -2))


def _X(X) -> np.ndarray:
    return np.asarray(getattr(X, "entries", X), dtype=np.complex128)


def _cov(C) -> np.ndarray:
    C = np.asarray(getattr(C, "matrices", C), dtype=np.complex128)
    return C[None] if C.ndim == 2 else C


def lmmse_estimate(phi, X, C_h, noise_var: float) -> ChannelEstimate:
    """h[ell] = C_h X^H (X C_h X^H + noise_var I)^{-1} phi[ell] per subcarrier.

    Raises:
        Singular: ``noise_var`` is zero and X C_h X^H is rank deficient.
    """
    X = _X(X)
    C = _cov(C_h)
    phi = np.asarray(phi, dtype=np.complex128)
    T = X.shape[0]
    if phi.shape[-1] != T or C.shape[-1] != X.shape[1]:
        raise DimensionMismatch("phi, X and C_h shapes are inconsistent")
    CXh = C @ X.conj().T  # (N_c, M, T)
    inner = X @ CXh + noise_var * np.eye(T)
    if noise_var <= 0:
        rank = np.linalg.matrix_rank(inner, hermitian=True)
        zero = np.all(np.abs(inner) == 0, axis=(-2, -1))
        if np.any((rank < T) & ~zero):
            raise Singular("X C_h X^H is rank deficient and there is no noise term")
        if np.all(zero):
            return ChannelEstimate(np.zeros(phi.shape[:-1] + (X.shape[1],), complex), "lmmse")
    # u = inner^{-1} phi per subcarrier (blocks as right-hand sides), h = C X^H u
    lead = phi.shape[:-2]
    rhs = np.moveaxis(phi.reshape((-1,) + phi.shape[-2:]), 0, -1)  # (N_c, T, n_blocks)
    u = np.linalg.solve(inner, rhs)
    h = np.moveaxis(CXh @ u, -1, 0).reshape(lead + (C.shape[0], X.shape[1]))
    return ChannelEstimate(h, "lmmse")


def lmmse_estimate_lowrank(
    phi,
    X,
    support,
    gains,
    dictionary: Dictionary,
    cfg: ArrayConfig,
    noise_var: float,
) -> ChannelEstimate:
    """LMMSE with C_h = B_S diag(d) B_S^H, inverted in the |S|-dimensional space.

    By the push-through identity the dense estimator equals
    h = B_S (Psi_S^H Psi_S + noise_var diag(d)^{-1})^{-1} Psi_S^H phi with
    Psi_S = X B_S, so only an |S| x |S| system is solved per subcarrier.
    Paths with a zero gain at a subcarrier are dropped there.
    """
    X = _X(X)
    phi = np.asarray(phi, dtype=np.complex128)
    support = np.asarray(support, dtype=np.int64).ravel()
    gains = np.atleast_2d(np.asarray(gains, dtype=np.float64))
    B = dictionary.wideband(cfg)[:, :, support]  # (N_c, M, S)
    psi = X @ B  # (N_c, T, S)
    N_c = B.shape[0]
    h = np.zeros(phi.shape[:-1] + (cfg.M,), dtype=np.complex128)
    for ell in range(N_c):
        live = gains[ell] > 0
        if not live.any():
            continue
        P = psi[ell][:, live]
        A = _herm(P) @ P
        if noise_var > 0:
            A = A + noise_var * np.diag(1.0 / gains[ell][live])
        elif np.linalg.matrix_rank(A, hermitian=True) < A.shape[0]:
            raise Singular("Psi_S loses column rank and there is no noise term")
        rhs = phi[..., ell, :] @ P.conj()  # (..., S) = (Psi^H phi)^T
        coef = np.linalg.solve(A, np.moveaxis(rhs, -1, 0).reshape(A.shape[0], -1))
        coef = np.moveaxis(coef.reshape((A.shape[0],) + rhs.shape[:-1]), 0, -1)
        h[..., ell, :] = coef @ B[ell][:, live].T
    return ChannelEstimate(h, "lmmse")


def gain_mmse(phi, psi_s, gains, noise_var: float) -> np.ndarray:
    """Per-path gain estimates zeta[ell] = D Psi^H (Psi D Psi^H + noise_var I)^{-1} phi[ell].

    ``psi_s`` is (N_c, T, S), ``gains`` (N_c, S); returns (..., N_c, S).
    Without noise the inverse becomes a pseudo-inverse.
    """
    psi_s = np.asarray(psi_s, dtype=np.complex128)
    gains = np.atleast_2d(np.asarray(gains, dtype=np.float64))
    phi = np.asarray(phi, dtype=np.complex128)
    T = psi_s.shape[-2]
    if phi.shape[-1] != T:
        raise DimensionMismatch("phi length must equal the number of training rows")
    DPh = gains[:, :, None] * _herm(psi_s)  # (N_c, S, T)
    inner = psi_s @ DPh + noise_var * np.eye(T)
    if noise_var > 0:
        W = _herm(np.linalg.solve(inner, _herm(DPh)))  # inner is Hermitian
    else:
        W = DPh @ np.linalg.pinv(inner, hermitian=True)
    return np.einsum("lst,...lt->...ls", W, phi)


def _delay_domain(zeta_l: np.ndarray, N: int) -> np.ndarray:
    """First N taps of the unitary inverse DFT over subcarriers, per block."""
    N_c = zeta_l.shape[-1]
    if N > N_c:
        raise ValueError(f"delay estimation needs N <= N_c (N={N}, N_c={N_c})")
    return np.fft.ifft(zeta_l, axis=-1, norm="ortho")[..., :N]


def _pulses(taus: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    n = np.arange(cfg.N)
    return raised_cosine(n[None, :] * cfg.T_s - np.atleast_1d(taus)[:, None], cfg.T_s, cfg.rolloff)


def delay_objective(taus, z: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    """sum_k |p(tau)^T z_k| / (|p(tau)| |z_k|) for each candidate delay."""
    return kernels.delay_objective(_pulses(np.asarray(taus, float), cfg), np.atleast_2d(z))


def delay_estimate(
    zeta_l,
    cfg: ArrayConfig,
    grid_size: int | None = None,
    refine: bool = True,
    fast: bool = False,
):
    """Delay of one path from its per-subcarrier gain estimates.

    ``zeta_l`` is (K, N_c) (or (N_c,) for one block). The gains are taken to
    the delay domain, correlated against raised-cosine pulses on a uniform
    grid of ``grid_size`` delays in [0, (N-1) T_s] (default 20 N), and the
    best grid point is refined by golden-section search within its two
    neighbouring intervals. With ``fast`` the grid only spans the two
    strongest delay taps.

    Returns:
        ``(tau, info)`` where ``info`` holds ``objective`` (value at tau),
        ``grid`` and ``values``.

    Raises:
        DegenerateObservation: every block's delay-domain vector is zero.
    """
    z = _delay_domain(np.atleast_2d(np.asarray(zeta_l, dtype=np.complex128)), cfg.N)
    if not np.any(np.abs(z) > 0):
        raise DegenerateObservation("all delay-domain observations are zero")
    grid_size = 20 * cfg.N if grid_size is None else int(grid_size)
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    lo, hi = 0.0, cfg.max_delay
    if fast and cfg.N > 1:
        energy = np.sum(np.abs(z) ** 2, axis=0)
        top = np.sort(np.argsort(-energy, kind="stable")[:2])
        lo, hi = top[0] * cfg.T_s, top[1] * cfg.T_s
    grid = np.linspace(lo, hi, grid_size) if hi > lo else np.array([lo])
    vals = delay_objective(grid, z, cfg)
    i = int(np.argmax(vals))
    tau, best = float(grid[i]), float(vals[i])
    if refine and grid.size > 1:
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, grid.size - 1)]
        t_ref = _golden_max(lambda t: float(delay_objective([t], z, cfg)[0]), a, b)
        v_ref = float(delay_objective([t_ref], z, cfg)[0])
        if v_ref > best:
            tau, best = t_ref, v_ref
    return tau, {"objective": best, "grid": grid, "values": vals}


def _golden_max(f, a: float, b: float, tol: float = 1e-6, max_iter: int = 60) -> float:
    width = b - a
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * width:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def path_gains_lsq(zeta, theta) -> np.ndarray:
    """Least-squares path gains from per-subcarrier estimates zeta[ell] ~ Theta[ell] g.

    Stacking the diagonal Theta[ell] over subcarriers decouples the paths, so
    the pseudo-inverse solution is g_l = sum conj(beta_l) zeta_l / sum |beta_l|^2.
    ``zeta`` is (..., N_c, S) and ``theta`` (N_c, S).

    Raises:
        RankDeficient: some path has beta_l[ell] = 0 on every subcarrier.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.complex128))
    zeta = np.asarray(zeta, dtype=np.complex128)
    energy = np.sum(np.abs(theta) ** 2, axis=0)
    if np.any(energy == 0):
        raise RankDeficient("a path has zero pulse response on every subcarrier")
    return np.sum(theta.conj() * zeta, axis=-2) / energy


def dg_estimate(
    phi,
    X,
    ident,
    dictionary: Dictionary,
    cfg: ArrayConfig,
    noise_var: float,
    grid_size: int | None = None,
    fast: bool = False,
    refine: bool = True,
    psi_s=None,
) -> ChannelEstimate:
    """Delay-gain estimate of every block's channel.

    Per-path gains from :func:`gain_mmse` feed one delay search per path
    (pooled over all blocks), the delays fix Theta[ell], the complex path
    gains of each block come from :func:`path_gains_lsq`, and
    h[ell] = B_S[ell] Theta[ell] g_k.
    """
    support = np.asarray(ident.support, dtype=np.int64)
    if support.size == 0:
        raise ValueError("DG estimation needs a non-empty support")
    phi = np.asarray(phi, dtype=np.complex128)
    single = phi.ndim == 2
    if single:
        phi = phi[None]
    B = dictionary.wideband(cfg)[:, :, support]
    if psi_s is None:
        psi_s = _X(X) @ B
    zeta = gain_mmse(phi, psi_s, ident.gains, noise_var)  # (K, N_c, S)
    delays = np.empty(support.size)
    objective = np.empty(support.size)
    for j in range(support.size):
        try:
            delays[j], info = delay_estimate(zeta[:, :, j], cfg, grid_size, refine, fast)
            objective[j] = info["objective"]
        except DegenerateObservation:
            delays[j], objective[j] = 0.0, 0.0
    theta = np.atleast_2d(beta_coeffs(delays, cfg)).T  # (N_c, S)
    g = path_gains_lsq(zeta, theta)  # (K, S)
    h = np.einsum("lms,ls,ks->klm", B, theta, g)
    model = DelayGainModel(delays, theta, g, {"objective": objective})
    return ChannelEstimate(h[0] if single else h, "dg", model)
