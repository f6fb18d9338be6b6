"""Covariance identification: support and per-subcarrier gain variances.

All estimators work on dictionary-grid models of the observation covariance

    C_phi[ell] = Psi[ell] diag(d[ell]) Psi[ell]^H + noise_var I,

with Psi[ell] = X [a(theta_1)[ell], ..., a(theta_G)[ell]]. The support is
shared by all subcarriers; the gain variances d[ell] are not, because each
one carries the factor |beta_l[ell]|^2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .channel import ArrayConfig, CovarianceSet, Dictionary
from .errors import (
    DimensionMismatch,
    IllConditioned,
    IncompleteRuler,
    RankError,
    SingularCovariance,
    SupportExhausted,
)
from .rulers import Ruler

__all__ = [
    "MeasurementMatrices",
    "IdentResult",
    "SmoothedCoarray",
    "measurement_matrices",
    "wcomp_identify",
    "music_spectrum",
    "music_support",
    "music_identify",
    "recover_gains",
    "mirror_average",
    "spatial_smooth",
    "ss_music_identify",
    "ml_identify_mm",
    "ml_objective",
    "genie_identify",
    "estimate_num_paths",
    "default_gap_eps",
    "krank_upper_bound",
    "reconstruct_cov",
    "khatri_rao",
]

COND_LIMIT = 1e10
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class MeasurementMatrices:
    """Psi[ell] stacks, shape (N_c, T, G), or (K, N_c, T, G) for per-block training."""

    psi: np.ndarray

    @property
    def per_block(self) -> bool:
        return self.psi.ndim == 4

    def columns(self, support) -> np.ndarray:
        return self.psi[..., list(support)]


@dataclass
class IdentResult:
    support: np.ndarray
    gains: np.ndarray  # (N_c, |S|), non-negative
    algo: str
    reconstructed: CovarianceSet | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64).ravel()
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.gains.ndim == 1:
            self.gains = self.gains[None, :]
        if self.gains.shape[-1] != self.support.size:
            raise DimensionMismatch("gains must have one column per support index")

    @property
    def n_paths(self) -> int:
        return self.support.size

    def with_reconstruction(self, dictionary: Dictionary, cfg: ArrayConfig) -> "IdentResult":
        self.reconstructed = reconstruct_cov(self.support, self.gains, dictionary, cfg)
        return self

    def to_dict(self, dictionary: Dictionary | None = None) -> dict:
        out = {
            "algo": self.algo,
            "support": self.support.tolist(),
            "gains": self.gains.tolist(),
        }
        if dictionary is not None:
            out["angles"] = dictionary.angles[self.support].tolist()
        return out

    def to_json(self, dictionary: Dictionary | None = None) -> str:
        return json.dumps(self.to_dict(dictionary), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "IdentResult":
        gains = np.asarray(d["gains"], dtype=np.float64).reshape(-1, len(d["support"]))
        return cls(np.asarray(d["support"], dtype=np.int64), gains, d.get("algo", "unknown"))


@dataclass(frozen=True)
class SmoothedCoarray:
    lags: np.ndarray  # (N_c, 2c+1), lag -c..c
    counts: np.ndarray  # snapshots averaged per lag
    smoothed: np.ndarray  # (N_c, c+1, c+1)
    root: np.ndarray  # (N_c, c+1, c+1), sqrt(c+1) * smoothed^{1/2}
    eigvals: np.ndarray  # (N_c, c+1) of root, ascending
    eigvecs: np.ndarray

    @property
    def dim(self) -> int:
        return self.smoothed.shape[-1]


def _cov_array(samples) -> np.ndarray:
    C = getattr(samples, "matrices", samples)
    return np.asarray(C, dtype=np.complex128)


def _psi_array(psi) -> np.ndarray:
    return np.asarray(getattr(psi, "psi", psi), dtype=np.complex128)


def _herm(A):
    return np.conj(np.swapaxes(A, -1, -2))


def measurement_matrices(X, dictionary: Dictionary, cfg: ArrayConfig) -> MeasurementMatrices:
    """Psi[ell] = X A[ell]; ``X`` is (T, M) or per-block (K, T, M)."""
    X = np.asarray(getattr(X, "entries", X))
    if X.shape[-1] != cfg.M:
        raise DimensionMismatch(f"training has {X.shape[-1]} columns, array has M={cfg.M}")
    A = dictionary.wideband(cfg)
    if X.ndim == 2:
        return MeasurementMatrices(X @ A)
    return MeasurementMatrices(np.einsum("ktm,lmg->kltg", X, A))


def khatri_rao(psi_s: np.ndarray) -> np.ndarray:
    """Columns vec(psi psi^H) = conj(psi) kron psi, for psi_s of shape (..., T, L)."""
    T, L = psi_s.shape[-2:]
    kr = psi_s.conj()[..., :, None, :] * psi_s[..., None, :, :]
    return kr.reshape(*psi_s.shape[:-2], T * T, L)


def _gains_kr(psi_s: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Least-squares diagonal fit vec(C) ~ KR(psi_s) d, looped over leading axis."""
    n = psi_s.shape[0]
    out = np.empty((n, psi_s.shape[-1]))
    for i in range(n):
        kr = khatri_rao(psi_s[i])
        vecC = C[i].T.reshape(-1)  # column-major vec
        d, *_ = np.linalg.lstsq(kr, vecC, rcond=None)
        out[i] = d.real
    return out


def _gains_direct(psi_s: np.ndarray, C: np.ndarray) -> np.ndarray:
    cond = np.linalg.cond(psi_s) if psi_s.shape[-1] else np.zeros(psi_s.shape[0])
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise IllConditioned(f"measurement matrix condition number {np.max(cond):.3g}")
    pinv = np.linalg.pinv(psi_s)
    D = pinv @ C @ _herm(pinv)
    return np.real(np.diagonal(D, axis1=-2, axis2=-1))


def mirror_average(gains: np.ndarray) -> np.ndarray:
    """Average gain estimates of subcarriers ell and -ell mod N_c.

    Subcarrier 0 (and N_c/2 for even N_c) have no partner and are kept.
    """
    gains = np.array(gains, dtype=np.float64, copy=True)
    N_c = gains.shape[0]
    for ell in range(1, (N_c + 1) // 2):
        pair = N_c - ell
        avg = 0.5 * (gains[ell] + gains[pair])
        gains[ell] = avg
        gains[pair] = avg
    return gains


def recover_gains(
    support,
    samples,
    psi_s,
    noise_var: float,
    mode: str = "direct",
    mirror: bool = False,
) -> np.ndarray:
    """Per-subcarrier gain variances on a fixed support, shape (N_c, |S|).

    ``mode`` is ``direct`` (pseudo-inverse sandwich, raises
    :class:`IllConditioned` past a condition number of 1e10),
    ``khatri_rao`` (least squares on the diagonal model) or ``auto``
    (direct, falling back to Khatri-Rao). Negative estimates are clipped.
    """
    C = _cov_array(samples)
    psi_s = _psi_array(psi_s)
    if C.ndim == 2:
        C, psi_s = C[None], psi_s[None] if psi_s.ndim == 2 else psi_s
    n_s = len(np.atleast_1d(support))
    if psi_s.shape[-1] != n_s:
        raise DimensionMismatch("psi_s must have one column per support index")
    if n_s == 0:
        return np.zeros((C.shape[0], 0))
    Cn = C - noise_var * np.eye(C.shape[-1])
    if mode == "direct":
        gains = _gains_direct(psi_s, Cn)
    elif mode in ("khatri_rao", "khatri-rao", "kr"):
        gains = _gains_kr(psi_s, Cn)
    elif mode == "auto":
        try:
            gains = _gains_direct(psi_s, Cn)
        except IllConditioned:
            gains = _gains_kr(psi_s, Cn)
    else:
        raise ValueError(f"unknown gain mode {mode!r}")
    if mirror:
        gains = mirror_average(gains)
    return np.maximum(gains, 0.0)


def reconstruct_cov(support, gains, dictionary: Dictionary, cfg: ArrayConfig) -> CovarianceSet:
    """C_h[ell] = B_S[ell] diag(gains[ell]) B_S[ell]^H with B_S the squinted dictionary columns."""
    support = np.asarray(support, dtype=np.int64).ravel()
    gains = np.atleast_2d(np.asarray(gains, dtype=np.float64))
    B = dictionary.wideband(cfg)[:, :, support]  # (N_c, M, |S|)
    C = (B * gains[:, None, :]) @ _herm(B)
    return CovarianceSet(C, "estimate")


def _select_top(score: np.ndarray, n: int, peaks: bool = False) -> np.ndarray:
    """Indices of the ``n`` largest scores, sorted; ties go to the lower index.

    With ``peaks`` local maxima of the score (over the angle grid) are taken
    first, so one broad lobe cannot claim several support slots.
    """
    if peaks and score.size > 2:
        # values this far above the median are numerically infinite (exact
        # subspaces); capping them turns adjacent true indices into a plateau
        cap = np.median(score) / np.sqrt(np.finfo(float).eps)
        if cap > 0:
            score = np.minimum(score, cap)
        order = np.argsort(-score, kind="stable")
        left = np.r_[-np.inf, score[:-1]]
        right = np.r_[score[1:], -np.inf]
        is_peak = (score >= left) & (score >= right)
        order = np.r_[order[is_peak[order]], order[~is_peak[order]]]
    else:
        order = np.argsort(-score, kind="stable")
    return np.sort(order[:n])


def wcomp_identify(
    samples,
    psi,
    n_paths: int,
    noise_var: float = 0.0,
) -> IdentResult:
    """Wideband covariance OMP.

    ``samples`` is (N_c, T, T) for a single sample covariance per subcarrier
    or (K, N_c, T, T) for per-block one-sample estimates; ``psi`` matches
    with (N_c, T, G) or (K, N_c, T, G). At each step the dictionary index
    maximizing sum_{ell,k} Re(psi^H R psi) joins the support, and the
    residual becomes C - P C P^H with P the projector onto the chosen
    columns. ``noise_var`` is subtracted before the final gain fit (0 gives
    the plain projection estimate).
    """
    C = _cov_array(samples)
    P = _psi_array(psi)
    if C.ndim == 3:
        C = C[None]
    if P.ndim == 3:
        P = P[None]
    if P.shape[-2] != C.shape[-1]:
        raise DimensionMismatch("psi rows must match covariance dimension")
    T, G = P.shape[-2:]
    N_c = C.shape[1]
    if n_paths > G:
        raise SupportExhausted(f"cannot select {n_paths} of {G} dictionary columns")
    if n_paths > T:
        raise RankError(f"wcomp needs n_paths <= T_tr ({n_paths} > {T})")
    if n_paths <= 0:
        return IdentResult(np.zeros(0, np.int64), np.zeros((N_c, 0)), "wcomp")

    R = C.copy()
    chosen: list[int] = []
    for _ in range(n_paths):
        RP = R @ P  # (K, N_c, T, G)
        score = np.real(np.einsum("kltg,kltg->g", P.conj(), RP))
        score[chosen] = -np.inf
        chosen.append(int(np.argmax(score)))
        Ps = P[..., chosen]
        proj = Ps @ np.linalg.pinv(Ps)
        R = C - proj @ C @ _herm(proj)

    support = np.sort(np.asarray(chosen))
    Ps = np.broadcast_to(P[..., support], C.shape[:2] + (T, support.size))
    Cn = C - noise_var * np.eye(T)
    K = C.shape[0]
    flat_psi = Ps.reshape(-1, T, support.size)
    flat_C = Cn.reshape(-1, T, T)
    try:
        g = _gains_direct(flat_psi, flat_C)
    except IllConditioned:
        g = _gains_kr(flat_psi, flat_C)
    gains = np.maximum(g.reshape(K, N_c, -1).mean(axis=0), 0.0)
    return IdentResult(support, gains, "wcomp", info={"selection_order": chosen})


def _noise_basis(C: np.ndarray, n_signal: int):
    w, V = np.linalg.eigh(0.5 * (C + _herm(C)))  # ascending
    return V[..., : C.shape[-1] - n_signal], w


def music_spectrum(noise_basis: np.ndarray, steer: np.ndarray) -> np.ndarray:
    """Joint pseudo-spectrum sum_ell 1 / ||steer_i[ell]^H U_n[ell]||^2, shape (G,)."""
    proj = _herm(steer) @ noise_basis  # (N_c, G, n_noise)
    denom = np.sum(np.abs(proj) ** 2, axis=-1)
    return np.sum(1.0 / np.maximum(denom, _TINY), axis=0)


def music_support(samples, psi, n_paths: int, noise_var: float | None = None, peaks: bool = True):
    """MUSIC support shared across subcarriers.

    Returns ``(support, spectrum)``. The support holds the ``n_paths``
    strongest local maxima of the joint pseudo-spectrum (``peaks=False``
    takes the largest values regardless of shape). ``noise_var`` is accepted
    for interface symmetry; the noise subspace does not depend on it.
    """
    C = _cov_array(samples)
    P = _psi_array(psi)
    if C.ndim == 2:
        C, P = C[None], P[None] if P.ndim == 2 else P
    T = C.shape[-1]
    if n_paths >= T:
        raise RankError(f"MUSIC needs n_paths < T_tr ({n_paths} >= {T})")
    U, _ = _noise_basis(C, n_paths)
    J = music_spectrum(U, P)
    return _select_top(J, n_paths, peaks), J


def music_identify(
    samples,
    psi,
    n_paths: int,
    noise_var: float,
    gain_mode: str = "khatri_rao",
    mirror: bool = True,
    peaks: bool = True,
) -> IdentResult:
    """MUSIC support followed by a gain fit on that support (see :func:`recover_gains`)."""
    support, J = music_support(samples, psi, n_paths, noise_var, peaks)
    P = _psi_array(psi)
    gains = recover_gains(support, samples, P[..., support], noise_var, gain_mode, mirror)
    return IdentResult(support, gains, "music", info={"spectrum": J})


def spatial_smooth(samples, ruler: Ruler, average: bool = True) -> SmoothedCoarray:
    """Coarray spatial smoothing for ruler-based (antenna selection) training.

    Entries of each sample covariance are binned by lag r_i - r_j; with
    ``average`` every snapshot of a lag is averaged, otherwise only the first
    one (in column-major order) is kept. The c+1 overlapping subarray vectors
    of the lag sequence, c = ruler.complete_up_to, give the smoothed matrix
    and its scaled principal square root.
    """
    C = _cov_array(samples)
    if C.ndim == 2:
        C = C[None]
    if C.shape[-1] != len(ruler):
        raise DimensionMismatch("covariance size must equal the number of ruler marks")
    c = ruler.complete_up_to
    if c < 1:
        raise IncompleteRuler("ruler covers no lag")
    y, counts = kernels.lag_average(C, np.asarray(ruler.marks, np.int64), c, average)
    if np.any(counts[c + 1 :] == 0):
        raise IncompleteRuler("a lag below complete_up_to has no snapshot")
    D = c + 1
    n = np.arange(D)
    Ymat = y[:, (n[:, None] - n[None, :]) + c]  # Ymat[n, m] = y[n - m]
    Y = Ymat @ _herm(Ymat) / D
    Y = 0.5 * (Y + _herm(Y))
    w, V = np.linalg.eigh(Y)
    root_w = np.sqrt(np.maximum(w, 0.0) * D)
    root = (V * root_w[:, None, :]) @ _herm(V)
    return SmoothedCoarray(y, counts, Y, root, root_w, V)


def ss_music_identify(
    samples,
    ruler: Ruler,
    dictionary: Dictionary,
    n_paths: int,
    noise_var: float,
    cfg: ArrayConfig,
    average: bool = True,
    gain_mode: str = "khatri_rao",
    mirror: bool = True,
    peaks: bool = True,
) -> IdentResult:
    """MUSIC on the spatially smoothed coarray, then gain fit on its root.

    Works with more paths than training marks as long as ``n_paths`` is
    below the coarray dimension c+1.
    """
    sm = spatial_smooth(samples, ruler, average)
    D = sm.dim
    if n_paths >= D:
        raise RankError(f"coarray of dimension {D} cannot host {n_paths} paths")
    steer = dictionary.wideband(cfg)[:, :D, :]
    J = music_spectrum(sm.eigvecs[..., : D - n_paths], steer)
    support = _select_top(J, n_paths, peaks)
    gains = recover_gains(support, sm.root, steer[..., support], noise_var, gain_mode, mirror)
    algo = "ss" if average else "ss_discard"
    return IdentResult(support, gains, algo, info={"spectrum": J, "coarray_dim": D})


def ml_objective(C_hat: np.ndarray, C_model: np.ndarray) -> np.ndarray:
    """log det C + tr(C^{-1} C_hat) per subcarrier."""
    L = np.linalg.cholesky(C_model)
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=-2, axis2=-1))), axis=-1)
    Cinv_hat = np.linalg.solve(C_model, C_hat)
    return logdet + np.real(np.trace(Cinv_hat, axis1=-2, axis2=-1))


def ml_identify_mm(
    samples,
    psi,
    n_paths: int,
    noise_var: float,
    iters: int = 200,
    tol: float = 1e-8,
) -> IdentResult:
    """Gaussian ML fit of all G gain variances by majorization-minimization.

    Each subcarrier is fitted on its own. The update
    p_g <- p_g sqrt(psi^H C^-1 C_hat C^-1 psi / psi^H C^-1 psi) minimizes a
    majorizer of the negative log-likelihood, so the objective never
    increases. The support is the ``n_paths`` indices with the largest
    variance summed over subcarriers. ``info["objective"]`` holds the
    per-iteration objective summed over subcarriers.
    """
    C = _cov_array(samples)
    P = _psi_array(psi)
    if C.ndim == 2:
        C, P = C[None], P[None] if P.ndim == 2 else P
    N_c, T, _ = C.shape
    G = P.shape[-1]
    if n_paths > G:
        raise SupportExhausted(f"cannot select {n_paths} of {G} dictionary columns")
    scale = np.real(np.trace(C, axis1=1, axis2=2)) / T  # (N_c,)
    floor = np.maximum(noise_var, 1e-10 * scale)
    eye = np.eye(T)
    col_energy = np.sum(np.abs(P) ** 2, axis=-2)  # (N_c, G)
    p = np.maximum(scale - noise_var, 1e-3 * scale)[:, None] / np.maximum(col_energy, _TINY)
    p = np.broadcast_to(p / G * T, (N_c, G)).copy()

    def model(p):
        return (P * p[:, None, :]) @ _herm(P) + floor[:, None, None] * eye

    history = []
    try:
        Cm = model(p)
        f = ml_objective(C, Cm)
        history.append(float(f.sum()))
        for _ in range(iters):
            Cinv_P = np.linalg.solve(Cm, P)  # C^{-1} Psi
            a = np.real(np.sum(P.conj() * Cinv_P, axis=-2))
            b = np.real(np.sum(Cinv_P.conj() * (C @ Cinv_P), axis=-2))
            p = p * np.sqrt(np.maximum(b, 0.0) / np.maximum(a, _TINY))
            Cm = model(p)
            f_new = ml_objective(C, Cm)
            history.append(float(f_new.sum()))
            done = np.abs(f - f_new) <= tol * np.maximum(np.abs(f), 1.0)
            f = f_new
            if np.all(done):
                break
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    support = _select_top(p.sum(axis=0), n_paths)
    return IdentResult(
        support,
        p[:, support],
        "ml",
        info={"objective": np.asarray(history), "variances": p},
    )


def genie_identify(samples, psi, true_support, noise_var: float) -> IdentResult:
    """Known support; independent Khatri-Rao gain fit per subcarrier."""
    support = np.sort(np.asarray(true_support, dtype=np.int64))
    P = _psi_array(psi)
    gains = recover_gains(support, samples, P[..., support], noise_var, "khatri_rao", False)
    return IdentResult(support, gains, "genie")


def default_gap_eps(snr_db: float) -> float:
    return 1e-2 if snr_db >= 10 else 1e-1


def estimate_num_paths(samples, eps: float = 1e-2) -> int:
    """Path count from the largest relative eigen-gap of the subcarrier-summed spectrum.

    With eigenvalues l_1 >= l_2 >= ... summed over subcarriers, returns the
    i maximizing (l_i - l_{i+1}) / (l_{i+1} + eps l_1). A flat spectrum
    gives 1.
    """
    C = _cov_array(samples)
    if C.ndim == 2:
        C = C[None]
    lam = np.linalg.eigvalsh(0.5 * (C + _herm(C)))[..., ::-1].sum(axis=0)
    if lam.size < 2:
        return 1
    lam = np.maximum(lam, 0.0)
    ratio = (lam[:-1] - lam[1:]) / (lam[1:] + eps * lam[0] + _TINY)
    if not np.any(ratio > 0):
        return 1
    return int(np.argmax(ratio)) + 1


def krank_upper_bound(dictionary, window_tol: float = 1e-6) -> int:
    """Largest z such that every window of z consecutive columns is well conditioned.

    A window passes when its smallest singular value exceeds ``window_tol``
    times its largest. Any z columns being independent implies this, so the
    result bounds the Kruskal rank from above.
    """
    A = np.asarray(getattr(dictionary, "base_steering", dictionary))
    M, G = A.shape
    if G < 2:
        raise ValueError("need at least two columns")

    def ok(z):
        for start in range(G - z + 1):
            s = np.linalg.svd(A[:, start : start + z], compute_uv=False)
            if s[-1] <= window_tol * s[0]:
                return False
        return True

    # window failure is inherited by every wider window containing it
    lo, hi = 1, min(M, G)
    if not ok(1):
        return 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo
