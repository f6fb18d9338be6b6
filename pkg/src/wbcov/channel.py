"""Wideband ULA channel model with beam squint.

Each path l has an angle of departure, a complex gain g_l ~ CN(0, s_l^2) and
a delay tau_l. The response at subcarrier ell is

    h[ell] = sum_l g_l beta_l[ell] a(theta_l)[ell]

where beta_l is the N_c-point DFT of the raised-cosine pulse sampled at the
N delay taps, and a(theta)[ell] is the steering vector with the
frequency-dependent (squint) phase progression.

Array shapes used throughout: subcarrier axis first, so channel responses
are (N_c, M) per block, (K, N_c, M) for K blocks, and covariance stacks are
(N_c, n, n).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DimensionMismatch

__all__ = [
    "ArrayConfig",
    "SubcarrierGrid",
    "ChannelParams",
    "Dictionary",
    "ChannelRealization",
    "CovarianceSet",
    "make_rng",
    "delta_grid",
    "raised_cosine",
    "steering",
    "steering_matrix",
    "beta_coeffs",
    "make_dictionary",
    "gain_profile",
    "draw_params",
    "synth_channel",
    "synth_blocks",
    "channel_covariance",
    "observation_covariance",
    "observe",
    "sample_covariance",
    "snr_to_noise_var",
]


def make_rng(seed, *counters) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *counters)``.

    Streams with different counter tuples are statistically independent, so
    trials or blocks can be generated in any order or in parallel.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=counters))


def snr_to_noise_var(snr_db: float) -> float:
    """Noise variance for a unit total path power."""
    return 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class SubcarrierGrid:
    delta: np.ndarray
    offsets_hz: np.ndarray


def delta_grid(N_c: int, B: float = 0.0) -> SubcarrierGrid:
    """Signed subcarrier offsets [0, -1, ..., -floor(N_c/2), floor((N_c-1)/2), ..., 1]."""
    if N_c < 1:
        raise ValueError("N_c must be >= 1")
    ell = np.arange(N_c)
    delta = np.where(ell <= N_c // 2, -ell, N_c - ell).astype(np.int64)
    return SubcarrierGrid(delta, delta * (B / N_c))


@dataclass(frozen=True)
class ArrayConfig:
    """Array and OFDM geometry.

    ``d`` is the element spacing in carrier wavelengths. With ``squint``
    enabled the phase slope at subcarrier ell is scaled by
    ``1 - Delta[ell] * B / (N_c f_c)``.
    """

    M: int = 64
    d: float = 0.5
    f_c: float = 28e9
    B: float = 1760e6
    N_c: int = 16
    N: int = 8
    T_s: float = 1.0 / 1760e6
    rolloff: float = 0.25
    angle_range: tuple[float, float] = (-math.pi / 6, math.pi / 6)
    squint: bool = True

    def __post_init__(self):
        if self.M < 1 or self.N_c < 1 or self.N < 1:
            raise ValueError("M, N_c and N must be >= 1")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")
        if self.d <= 0:
            raise ValueError("d must be positive")
        lo, hi = self.angle_range
        if not lo < hi:
            raise ValueError("angle_range must be increasing")
        object.__setattr__(self, "angle_range", (float(lo), float(hi)))

    @property
    def delta(self) -> np.ndarray:
        return delta_grid(self.N_c, self.B).delta

    @property
    def squint_scale(self) -> float:
        if not self.squint or self.f_c <= 0 or math.isinf(self.f_c):
            return 0.0
        return self.B / (self.N_c * self.f_c)

    @property
    def max_delay(self) -> float:
        return (self.N - 1) * self.T_s

    def replace(self, **changes) -> "ArrayConfig":
        from dataclasses import replace

        return replace(self, **changes)


def raised_cosine(t, T_s: float, rolloff: float):
    """Raised-cosine pulse, including the limit at |t| = T_s / (2 rolloff)."""
    out = kernels.raised_cosine(np.asarray(t, dtype=np.float64), T_s, rolloff)
    return float(out) if np.ndim(out) == 0 else out


def steering_matrix(thetas, cfg: ArrayConfig, ells=None) -> np.ndarray:
    """Wideband steering vectors, shape (len(ells), M, len(thetas)).

    Column g at subcarrier ell is Gamma(theta_g)[ell] a(theta_g).
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=np.float64))
    ells = np.arange(cfg.N_c) if ells is None else np.atleast_1d(ells)
    scale = 1.0 - cfg.delta[ells] * cfg.squint_scale  # (n_ell,)
    m = np.arange(cfg.M, dtype=np.float64)
    phase = -2.0 * np.pi * cfg.d * np.sin(thetas)  # (G,)
    return np.exp(1j * scale[:, None, None] * m[None, :, None] * phase[None, None, :])


def steering(theta: float, ell: int, cfg: ArrayConfig) -> np.ndarray:
    """Steering vector a(theta)[ell] of length M."""
    return steering_matrix([theta], cfg, [ell])[0, :, 0]


def beta_coeffs(tau, cfg: ArrayConfig) -> np.ndarray:
    """Per-subcarrier pulse coefficients sum_n p(n T_s - tau) e^{-j 2 pi ell n / N_c}.

    Scalar ``tau`` gives shape (N_c,); an array of delays gives (len(tau), N_c).
    """
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    n = np.arange(cfg.N)
    p = kernels.raised_cosine(n[None, :] * cfg.T_s - tau_arr[:, None], cfg.T_s, cfg.rolloff)
    ell = np.arange(cfg.N_c)
    F = np.exp(-2j * np.pi * np.outer(n, ell) / cfg.N_c)
    beta = p @ F
    return beta[0] if np.ndim(tau) == 0 else beta


@dataclass
class Dictionary:
    angles: np.ndarray
    base_steering: np.ndarray  # M x G at the carrier
    _wide: np.ndarray | None = field(default=None, repr=False)

    @property
    def G(self) -> int:
        return self.angles.size

    def wideband(self, cfg: ArrayConfig) -> np.ndarray:
        """(N_c, M, G) stack of squinted dictionaries, cached per instance."""
        if self._wide is None or self._wide.shape[:2] != (cfg.N_c, cfg.M):
            self._wide = steering_matrix(self.angles, cfg)
        return self._wide


def make_dictionary(G: int, cfg: ArrayConfig, angle_range=None) -> Dictionary:
    lo, hi = angle_range if angle_range is not None else cfg.angle_range
    angles = np.linspace(lo, hi, G)
    base = steering_matrix(angles, cfg.replace(squint=False), [0])[0]
    return Dictionary(angles, base)


@dataclass(frozen=True)
class ChannelParams:
    aods: np.ndarray
    gain_vars: np.ndarray
    delays: np.ndarray
    dict_indices: np.ndarray | None = None  # set when aods sit on a dictionary grid

    def __post_init__(self):
        for name in ("aods", "gain_vars", "delays"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        if not (self.aods.size == self.gain_vars.size == self.delays.size):
            raise DimensionMismatch("aods, gain_vars and delays must have equal length")
        if self.dict_indices is not None:
            idx = np.atleast_1d(np.asarray(self.dict_indices, np.int64))
            if idx.size != self.aods.size:
                raise DimensionMismatch("dict_indices must have one entry per path")
            object.__setattr__(self, "dict_indices", idx)
        if np.any(self.gain_vars < 0):
            raise ValueError("gain variances must be non-negative")

    @property
    def L(self) -> int:
        return self.aods.size


def gain_profile(L: int, kind: str = "equal", decay_db: float = 10.0) -> np.ndarray:
    """Path powers summing to one: ``equal`` or ``exponential`` (``decay_db`` across paths)."""
    if kind == "equal":
        p = np.ones(L)
    elif kind == "exponential":
        p = 10.0 ** (-decay_db / 10.0 * np.arange(L) / max(L - 1, 1))
    else:
        raise ValueError(f"unknown gain profile {kind!r}")
    return p / p.sum()


def draw_params(
    cfg: ArrayConfig,
    L: int,
    rng,
    dictionary: Dictionary | None = None,
    profile: str = "equal",
    min_separation: int = 1,
) -> ChannelParams:
    """Random paths: angles uniform over the configured range (on the
    dictionary grid when one is given), delays uniform in [0, (N-1) T_s].

    ``min_separation`` is the minimum index gap between on-grid paths.
    """
    rng = make_rng(rng)
    idx = None
    if dictionary is not None:
        idx = _draw_separated(dictionary.G, L, min_separation, rng)
        aods = dictionary.angles[idx]
    else:
        aods = rng.uniform(*cfg.angle_range, size=L)
    delays = rng.uniform(0.0, cfg.max_delay, size=L)
    return ChannelParams(aods, gain_profile(L, profile), delays, idx)


def _draw_separated(G: int, L: int, sep: int, rng) -> np.ndarray:
    if L > G or (L - 1) * sep >= G:
        raise ValueError(f"cannot place {L} paths {sep} apart on {G} grid points")
    if sep <= 1:
        return np.sort(rng.choice(G, size=L, replace=False))
    # stars and bars: spread the slack over L+1 gaps, then enforce the spacing
    slack = G - 1 - (L - 1) * sep
    cuts = np.sort(rng.choice(slack + L, size=L, replace=False)) - np.arange(L)
    return cuts + np.arange(L) * sep


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray  # (L,)
    beta: np.ndarray  # (L, N_c)
    freq_response: np.ndarray  # (N_c, M)


def _path_responses(params: ChannelParams, cfg: ArrayConfig):
    A = steering_matrix(params.aods, cfg)  # (N_c, M, L)
    beta = np.atleast_2d(beta_coeffs(params.delays, cfg))  # (L, N_c)
    return A, beta


def synth_channel(params: ChannelParams, cfg: ArrayConfig, rng) -> ChannelRealization:
    """One coherence block: draw g ~ CN(0, diag(s^2)) and form h[ell] = A[ell] Theta[ell] g."""
    rng = make_rng(rng)
    A, beta = _path_responses(params, cfg)
    g = _cn(rng, (params.L,)) * np.sqrt(params.gain_vars)
    h = np.einsum("lmp,pl->lm", A, beta * g[:, None])
    return ChannelRealization(g, beta, h)


def synth_blocks(params: ChannelParams, cfg: ArrayConfig, K: int, rng):
    """K independent blocks. Returns ``(h, g)`` with shapes (K, N_c, M) and (K, L)."""
    rng = make_rng(rng)
    A, beta = _path_responses(params, cfg)
    g = _cn(rng, (K, params.L)) * np.sqrt(params.gain_vars)
    coef = g[:, None, :] * beta.T[None, :, :]  # (K, N_c, L)
    h = np.einsum("lmp,klp->klm", A, coef)
    return h, g


def _cn(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass
class CovarianceSet:
    """Stack of per-subcarrier Hermitian matrices, shape (N_c, n, n)."""

    matrices: np.ndarray
    kind: str = "sample"

    KINDS = ("true_channel", "true_observation", "sample", "estimate")

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.complex128)
        if self.matrices.ndim == 2:
            self.matrices = self.matrices[None]
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimensionMismatch(f"expected (N_c, n, n), got {self.matrices.shape}")
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    def __len__(self):
        return self.matrices.shape[0]

    def __getitem__(self, ell):
        return self.matrices[ell]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def hermitian_error(self) -> float:
        C = self.matrices
        return float(np.max(np.abs(C - np.conj(np.swapaxes(C, -1, -2))), initial=0.0))

    def min_eig_ratio(self) -> float:
        """Smallest eigenvalue over trace, minimised across subcarriers."""
        C = self.matrices
        herm = 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))
        w = np.linalg.eigvalsh(herm)
        tr = np.maximum(np.real(np.trace(C, axis1=1, axis2=2)), np.finfo(float).tiny)
        return float(np.min(w[:, 0] / tr))

    def to_csv(self, path) -> None:
        ell, r, c = np.indices(self.matrices.shape).reshape(3, -1)
        vals = self.matrices.ravel()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "row", "col", "re", "im"])
            for row in zip(ell, r, c, vals.real, vals.imag):
                w.writerow([row[0], row[1], row[2], repr(float(row[3])), repr(float(row[4]))])

    @classmethod
    def from_csv(cls, path, kind: str = "sample") -> "CovarianceSet":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        idx = data[:, :3].astype(int)
        shape = tuple(idx.max(axis=0) + 1)
        out = np.zeros(shape, dtype=np.complex128)
        out[idx[:, 0], idx[:, 1], idx[:, 2]] = data[:, 3] + 1j * data[:, 4]
        return cls(out, kind)

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".csv":
            self.to_csv(path)
        else:
            np.savez(path, matrices=self.matrices, kind=np.array(self.kind))

    @classmethod
    def load(cls, path, kind: str | None = None) -> "CovarianceSet":
        path = Path(path)
        if path.suffix == ".csv":
            return cls.from_csv(path, kind or "sample")
        with np.load(path) as z:
            return cls(z["matrices"], kind or str(z["kind"]))


def channel_covariance(params: ChannelParams, cfg: ArrayConfig) -> CovarianceSet:
    """Exact C_h[ell] = A[ell] Theta[ell] D Theta[ell]^H A[ell]^H."""
    A, beta = _path_responses(params, cfg)
    w = params.gain_vars[:, None] * np.abs(beta) ** 2  # (L, N_c)
    C = np.einsum("lmp,pl,lnp->lmn", A, w, A.conj())
    return CovarianceSet(C, "true_channel")


def observation_covariance(X, C_h: CovarianceSet, noise_var: float) -> CovarianceSet:
    """C_phi[ell] = X C_h[ell] X^H + noise_var I."""
    X = _entries(X)
    C = X @ C_h.matrices @ X.conj().T + noise_var * np.eye(X.shape[0])
    return CovarianceSet(C, "true_observation")


def _entries(X) -> np.ndarray:
    return np.asarray(getattr(X, "entries", X))


def observe(X, h, noise_var: float, rng) -> np.ndarray:
    """phi[..., ell, :] = X h[..., ell, :] + v with v ~ CN(0, noise_var I).

    ``h`` may be a :class:`ChannelRealization` or an array whose last axis
    has length M.
    """
    X = _entries(X)
    h = getattr(h, "freq_response", h)
    h = np.asarray(h)
    if h.shape[-1] != X.shape[1]:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, channel has {h.shape[-1]} antennas")
    phi = h @ X.T
    if noise_var > 0:
        phi = phi + np.sqrt(noise_var) * _cn(make_rng(rng), phi.shape)
    return phi


def sample_covariance(phi) -> CovarianceSet:
    """(1/K) sum_k phi_k phi_k^H per subcarrier, from phi of shape (K, N_c, T)."""
    phi = np.asarray(phi)
    if phi.ndim == 2:
        phi = phi[:, None, :]
    if phi.shape[0] < 1:
        raise ValueError("need at least one block")
    C = np.einsum("kli,klj->lij", phi, phi.conj()) / phi.shape[0]
    return CovarianceSet(C, "sample")
