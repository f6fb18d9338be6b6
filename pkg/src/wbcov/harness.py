"""Monte-Carlo experiments: metrics, presets, runner, CSV/SVG output and timing."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import (
    ArrayConfig,
    channel_covariance,
    draw_params,
    make_dictionary,
    make_rng,
    observe,
    sample_covariance,
    snr_to_noise_var,
    synth_blocks,
)
from .chest import dg_estimate, lmmse_estimate, lmmse_estimate_lowrank
from .errors import WbcovError, ZeroReference, ZeroVector
from .ident import (
    IdentResult,
    default_gap_eps,
    estimate_num_paths,
    genie_identify,
    measurement_matrices,
    ml_identify_mm,
    music_identify,
    reconstruct_cov,
    ss_music_identify,
    wcomp_identify,
)
from .rulers import best_ruler, training_matrix

__all__ = [
    "ALGORITHMS",
    "ESTIMATORS",
    "ExperimentConfig",
    "ResultRow",
    "Context",
    "CSV_HEADER",
    "nmse",
    "efficiency",
    "preset",
    "PRESETS",
    "load_config",
    "apply_config",
    "build_context",
    "identify",
    "run_experiment",
    "format_csv",
    "emit",
    "parse_csv",
    "timing_profile",
    "fit_exponent",
]

ALGORITHMS = ("wcomp", "music", "ss", "ss_discard", "ml", "genie")
ESTIMATORS = ("dg", "lmmse")
CSV_HEADER = ("experiment", "algo", "snr_db", "K", "Ttr", "L", "metric", "value", "stderr", "trials", "seed")


# --------------------------------------------------------------------- metrics


def nmse(C_hat, C) -> float:
    """||C_hat - C||_F^2 / ||C||_F^2, averaged over subcarriers."""
    C_hat = np.asarray(getattr(C_hat, "matrices", C_hat))
    C = np.asarray(getattr(C, "matrices", C))
    if C_hat.shape != C.shape:
        raise ValueError(f"shape mismatch {C_hat.shape} vs {C.shape}")
    if C.ndim == 2:
        C_hat, C = C_hat[None], C[None]
    ref = np.sum(np.abs(C) ** 2, axis=(-2, -1))
    if np.any(ref == 0):
        raise ZeroReference("reference covariance has zero Frobenius norm")
    err = np.sum(np.abs(C_hat - C) ** 2, axis=(-2, -1))
    return float(np.mean(err / ref))


def efficiency(h_hat, h, zero: str = "raise") -> float:
    """|h_hat^H h| / (||h_hat|| ||h||), averaged over all leading axes.

    With ``zero="raise"`` a zero vector raises :class:`ZeroVector`; with
    ``zero="score"`` it scores 0 (an all-zero estimate captures no power).
    """
    h_hat = np.asarray(h_hat)
    h = np.asarray(h)
    if h_hat.shape != h.shape:
        raise ValueError(f"shape mismatch {h_hat.shape} vs {h.shape}")
    n1 = np.linalg.norm(h_hat, axis=-1)
    n2 = np.linalg.norm(h, axis=-1)
    dead = (n1 == 0) | (n2 == 0)
    if np.any(dead) and zero == "raise":
        raise ZeroVector("efficiency is undefined for zero vectors")
    inner = np.abs(np.sum(h_hat.conj() * h, axis=-1))
    eta = np.where(dead, 0.0, inner / np.where(dead, 1.0, n1 * n2))
    return float(np.mean(np.minimum(eta, 1.0)))


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a channel/array setup swept over SNR and K.

    ``kind="identify"`` scores covariance NMSE for each algorithm;
    ``kind="estimate"`` identifies with each algorithm and scores the
    efficiency of every estimator in ``estimators`` (rows are labelled
    ``algo+estimator``). ``L=None`` estimates the path count from the
    eigen-gap of the sample covariances.
    """

    name: str = "custom"
    array: ArrayConfig = field(default_factory=ArrayConfig)
    G: int = 128
    L: int | None = 15
    T_tr: int = 32
    algos: tuple[str, ...] = ("ss", "music", "wcomp", "genie")
    snr_db: tuple[float, ...] = (0.0, 30.0)
    K: tuple[int, ...] = (5, 10, 20, 50, 100, 150, 200)
    trials: int = 50
    seed: int = 42
    scale: str = "desk"
    kind: str = "identify"
    estimators: tuple[str, ...] = ESTIMATORS
    gain_profile: str = "equal"
    delay_grid: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = [a for a in self.algos if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}")
        if self.kind not in ("identify", "estimate"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if any(e not in ESTIMATORS for e in self.estimators):
            raise ValueError(f"unknown estimators {self.estimators}")
        if not self.K or min(self.K) < 1:
            raise ValueError("K values must be >= 1")
        if self.T_tr < 2 or self.T_tr > self.array.M:
            raise ValueError("T_tr must lie in [2, M]")
        for name in ("algos", "snr_db", "K", "estimators"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


_SCALES = {
    "desk": dict(M=64, G=128, N_c=8, trials=50),
    "paper": dict(M=200, G=400, N_c=16, trials=200),
}


def preset(name: str, scale: str = "desk", **overrides) -> ExperimentConfig:
    """Named figure configuration at ``desk`` or ``paper`` scale."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    if scale not in _SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    sc = _SCALES[scale]
    spec = dict(PRESETS[name])
    spec.update(spec.pop(scale, {}))
    spec.pop("desk", None)
    spec.pop("paper", None)
    array = ArrayConfig(M=sc["M"], N_c=spec.pop("N_c", sc["N_c"]))
    base = dict(name=name, array=array, G=sc["G"], trials=sc["trials"], scale=scale)
    base.update(spec)
    base.update(overrides)
    return ExperimentConfig(**base)


PRESETS: dict[str, dict] = {
    "fig3": dict(
        N_c=1,
        L=15,
        algos=("ml", "music", "ss", "ss_discard", "wcomp"),
        desk=dict(T_tr=32),
        paper=dict(T_tr=50),
    ),
    "fig4": dict(L=15, algos=("ss", "music", "wcomp", "genie"), desk=dict(T_tr=32), paper=dict(T_tr=50)),
    "fig5": dict(L=15, algos=("ss", "music", "wcomp", "genie"), desk=dict(T_tr=32), paper=dict(T_tr=50)),
    "figL70": dict(algos=("ss", "genie"), desk=dict(L=30, T_tr=16), paper=dict(L=70, T_tr=50)),
    "fig6": dict(L=None, algos=("ss", "music", "wcomp"), desk=dict(T_tr=32), paper=dict(T_tr=50)),
    "fig7": dict(
        kind="estimate",
        L=15,
        T_tr=25,
        K=(100,),
        snr_db=(-10.0, -5.0, 0.0, 5.0, 10.0),
        algos=("ss", "music"),
    ),
    "fig8": dict(
        kind="estimate",
        L=15,
        T_tr=25,
        K=(100,),
        snr_db=(-10.0, -5.0, 0.0, 5.0, 10.0),
        algos=("ss",),
    ),
}

_ARRAY_KEYS = {"M", "d", "f_c", "B", "N_c", "N", "rolloff", "angle_range", "squint"}
_EXP_KEYS = {f.name for f in fields(ExperimentConfig)} - {"array", "name"}


def load_config(path) -> dict:
    """Read a flat JSON object of overrides."""
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def apply_config(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply flat overrides such as ``{"M": 32, "snr_db": [10], "f_s": 1e9}``.

    ``f_s`` sets the sample period, ``T_tr``/``L``/``G`` and the sweep lists
    go to the experiment, the remaining array keys to :class:`ArrayConfig`.
    """
    arr, exp = {}, {}
    for key, value in overrides.items():
        if key == "f_s":
            arr["T_s"] = 1.0 / float(value)
        elif key in _ARRAY_KEYS:
            arr[key] = tuple(value) if key == "angle_range" else value
        elif key in _EXP_KEYS:
            if key in ("snr_db", "K", "algos", "estimators"):
                value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
            exp[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    array = cfg.array.replace(**arr) if arr else cfg.array
    return replace(cfg, array=array, **exp)


# ----------------------------------------------------------------------- runner


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    algo: str
    snr_db: float
    K: int
    Ttr: int
    L: int
    metric: str
    value: float
    stderr: float
    trials: int
    seed: int

    def __post_init__(self):
        if self.stderr < 0 or (self.metric == "nmse" and self.value < 0):
            raise ValueError("nmse and stderr must be non-negative")
        if self.metric == "eta" and not (math.isnan(self.value) or 0.0 <= self.value <= 1.0):
            raise ValueError("eta must lie in [0, 1]")


@dataclass
class Context:
    """Objects shared read-only by all trials of one experiment."""

    cfg: ExperimentConfig
    ruler: object
    X: np.ndarray
    dictionary: object
    psi: np.ndarray


def build_context(cfg: ExperimentConfig) -> Context:
    acfg = cfg.array
    ruler = best_ruler(cfg.T_tr, acfg.M - 1)
    X = training_matrix(ruler, acfg.M).entries
    dictionary = make_dictionary(cfg.G, acfg)
    dictionary.wideband(acfg)  # fill the cache before any threads start
    psi = measurement_matrices(X, dictionary, acfg).psi
    return Context(cfg, ruler, X, dictionary, psi)


def identify(algo: str, samples, ctx: Context, n_paths: int, noise_var: float, true_support=None) -> IdentResult:
    """Dispatch to one of :data:`ALGORITHMS` with the package defaults."""
    acfg = ctx.cfg.array
    if algo == "wcomp":
        return wcomp_identify(samples, ctx.psi, n_paths, noise_var)
    if algo == "music":
        return music_identify(samples, ctx.psi, n_paths, noise_var)
    if algo in ("ss", "ss_discard"):
        return ss_music_identify(
            samples, ctx.ruler, ctx.dictionary, n_paths, noise_var, acfg, average=algo == "ss"
        )
    if algo == "ml":
        return ml_identify_mm(samples, ctx.psi, n_paths, noise_var)
    if algo == "genie":
        if true_support is None:
            raise ValueError("genie needs the true support")
        return genie_identify(samples, ctx.psi, true_support, noise_var)
    raise ValueError(f"unknown algorithm {algo!r}")


def _trial(ctx: Context, trial: int) -> dict:
    """Metric values of one trial keyed by (algo, snr_db, K); None marks a failure."""
    cfg, acfg = ctx.cfg, ctx.cfg.array
    L = cfg.L if cfg.L is not None else 5
    params = draw_params(acfg, L, make_rng(cfg.seed, trial, 0), ctx.dictionary, cfg.gain_profile)
    true_support = np.sort(params.dict_indices)
    K_max = max(cfg.K)
    h, _ = synth_blocks(params, acfg, K_max, make_rng(cfg.seed, trial, 1))
    C_h = channel_covariance(params, acfg) if cfg.kind == "identify" else None
    out = {}
    for si, snr in enumerate(cfg.snr_db):
        nv = snr_to_noise_var(snr)
        phi = observe(ctx.X, h, nv, make_rng(cfg.seed, trial, 2, si))
        for K in cfg.K:
            samples = sample_covariance(phi[:K])
            if cfg.L is None:
                n_paths = estimate_num_paths(samples, default_gap_eps(snr))
            else:
                n_paths = cfg.L
            for algo in cfg.algos:
                try:
                    res = identify(algo, samples, ctx, n_paths, nv, true_support)
                except (WbcovError, np.linalg.LinAlgError):
                    res = None
                if cfg.kind == "identify":
                    key = (algo, snr, K)
                    out[key] = None
                    if res is not None:
                        C_hat = reconstruct_cov(res.support, res.gains, ctx.dictionary, acfg)
                        out[key] = nmse(C_hat, C_h)
                    continue
                for est in cfg.estimators:
                    out[(f"{algo}+{est}", snr, K)] = None if res is None else _score_estimate(
                        est, res, phi[:K], h[:K], ctx, nv
                    )
    return out


def _score_estimate(est, res, phi, h, ctx, nv):
    acfg = ctx.cfg.array
    try:
        if est == "dg":
            h_hat = dg_estimate(phi, ctx.X, res, ctx.dictionary, acfg, nv, ctx.cfg.delay_grid).h
        else:
            h_hat = lmmse_estimate_lowrank(phi, ctx.X, res.support, res.gains, ctx.dictionary, acfg, nv).h
    except (WbcovError, np.linalg.LinAlgError, ValueError):
        return None
    return efficiency(h_hat, h, zero="score")


def run_experiment(cfg: ExperimentConfig, threads: int = 1, progress=None) -> list[ResultRow]:
    """Run every trial and reduce to one row per (algo, SNR, K).

    Trials are independent and seeded by their index, so the result does not
    depend on ``threads``. ``row.trials`` counts the trials that succeeded;
    failed identifications are left out of the mean.
    """
    ctx = build_context(cfg)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: _trial(ctx, t), range(cfg.trials)))
    else:
        results = []
        for t in range(cfg.trials):
            results.append(_trial(ctx, t))
            if progress is not None:
                progress(t + 1, cfg.trials)
    metric = "nmse" if cfg.kind == "identify" else "eta"
    labels = cfg.algos if cfg.kind == "identify" else tuple(
        f"{a}+{e}" for a in cfg.algos for e in cfg.estimators
    )
    L_col = cfg.L if cfg.L is not None else 0
    rows = []
    for label in labels:
        for snr in cfg.snr_db:
            for K in cfg.K:
                vals = np.array([r[(label, snr, K)] for r in results if r[(label, snr, K)] is not None])
                n = vals.size
                mean = float(vals.mean()) if n else float("nan")
                se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
                rows.append(ResultRow(cfg.name, label, float(snr), int(K), cfg.T_tr, L_col, metric, mean, se, n, cfg.seed))
    return rows


# ----------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def parse_csv(text_or_path) -> list[ResultRow]:
    text = str(text_or_path)
    if "\n" not in text and Path(text).exists():
        text = Path(text).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    types = {f.name: f.type for f in fields(ResultRow)}
    conv = {"str": str, "float": float, "int": int}
    return [ResultRow(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in reader]


def emit(rows, csv_path=None, plot_dir=None) -> list[Path]:
    """Write rows as CSV and/or SVG line plots; returns the files written.

    One plot per (experiment, metric, fixed coordinate): the x axis is K when
    several K values are present, SNR otherwise, with one line per algorithm.
    NMSE is drawn on a log scale.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to emit")
    written = []
    if csv_path is not None:
        path = Path(csv_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_csv(rows))
        written.append(path)
    if plot_dir is not None:
        written.extend(_plot(rows, Path(plot_dir)))
    return written


def _plot(rows, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "wbcov"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.experiment, r.metric), []).append(r)
    for (exp, metric), grp in groups.items():
        by_k = len({r.K for r in grp}) > 1
        fixed_key = (lambda r: r.snr_db) if by_k else (lambda r: r.K)
        for fixed in sorted({fixed_key(r) for r in grp}):
            sub = [r for r in grp if fixed_key(r) == fixed]
            fig, ax = plt.subplots(figsize=(5, 3.6))
            for algo in dict.fromkeys(r.algo for r in sub):
                pts = sorted(
                    ((r.K if by_k else r.snr_db), r.value, r.stderr) for r in sub if r.algo == algo
                )
                x, y, e = map(np.asarray, zip(*pts))
                ax.errorbar(x, y, yerr=e, marker="o", ms=3, capsize=2, label=algo)
            if metric == "nmse":
                ax.set_yscale("log")
            ax.set_xlabel("K" if by_k else "SNR [dB]")
            ax.set_ylabel(metric.upper() if metric == "nmse" else "efficiency")
            tag = f"snr{fixed:g}dB" if by_k else f"K{fixed}"
            ax.set_title(f"{exp} ({tag})")
            ax.grid(True, which="both", alpha=0.3)
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = out / f"{exp}_{metric}_{tag}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written


# ----------------------------------------------------------------------- timing


def fit_exponent(Ms, times) -> float:
    """Slope of log(time) against log(M)."""
    return float(np.polyfit(np.log(np.asarray(Ms, float)), np.log(np.asarray(times, float)), 1)[0])


@dataclass
class TimingTable:
    rows: list = field(default_factory=list)  # (algo, M, seconds)
    exponents: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["algo,M,seconds"] + [f"{a},{m},{format(s, '.6g')}" for a, m, s in self.rows]
        return "\n".join(lines) + "\n"


def _best_time(fn, repeats: int) -> float:
    fn()  # warm-up (numba compilation, caches)
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def timing_profile(
    Ms=(32, 64, 128, 256),
    L: int = 15,
    T_tr: int = 16,
    N_c: int = 16,
    K_ident: int = 100,
    repeats: int = 7,
    seed: int = 0,
    snr_db: float = 10.0,
) -> TimingTable:
    """Wall-clock cost of identification and channel estimation across M.

    Estimation is timed for one block with the identification result and
    the support measurement matrix given: ``dg`` is the delay-gain estimator,
    ``lmmse`` the dense per-subcarrier estimator including the reconstruction
    of C_h from the identified support, ``lmmse_lr`` its low-rank form.
    Identification algorithms are timed on K_ident blocks for reference.
    """
    table = TimingTable()
    series: dict = {}
    for M in Ms:
        acfg = ArrayConfig(M=M, N_c=N_c)
        cfg = ExperimentConfig(name="timing", array=acfg, G=2 * M, L=L, T_tr=T_tr, trials=1)
        ctx = build_context(cfg)
        params = draw_params(acfg, L, make_rng(seed, M, 0), ctx.dictionary)
        h, _ = synth_blocks(params, acfg, K_ident, make_rng(seed, M, 1))
        nv = snr_to_noise_var(snr_db)
        phi = observe(ctx.X, h, nv, make_rng(seed, M, 2))
        samples = sample_covariance(phi)
        res = music_identify(samples, ctx.psi, L, nv)
        psi_s = ctx.psi[..., res.support]
        one = phi[:1]

        def run_dg():
            dg_estimate(one, ctx.X, res, ctx.dictionary, acfg, nv, psi_s=psi_s)

        def run_lmmse():
            C_hat = reconstruct_cov(res.support, res.gains, ctx.dictionary, acfg)
            lmmse_estimate(one, ctx.X, C_hat, nv)

        def run_lr():
            lmmse_estimate_lowrank(one, ctx.X, res.support, res.gains, ctx.dictionary, acfg, nv)

        jobs = {
            "dg": run_dg,
            "lmmse": run_lmmse,
            "lmmse_lr": run_lr,
            "music": lambda: music_identify(samples, ctx.psi, L, nv),
            "ss": lambda: identify("ss", samples, ctx, L, nv),
            "wcomp": lambda: wcomp_identify(samples, ctx.psi, L, nv),
        }
        for name, fn in jobs.items():
            t = _best_time(fn, repeats)
            table.rows.append((name, M, t))
            series.setdefault(name, []).append(t)
    for name, ts in series.items():
        table.exponents[name] = fit_exponent(Ms, ts)
    return table


def config_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly view of a configuration."""
    d = asdict(cfg)
    d["array"] = asdict(cfg.array)
    return d
