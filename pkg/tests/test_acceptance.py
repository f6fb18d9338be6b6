"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from wbcov.channel import (
    ArrayConfig,
    beta_coeffs,
    channel_covariance,
    delta_grid,
    draw_params,
    make_dictionary,
    make_rng,
    observation_covariance,
    sample_covariance,
    observe,
    synth_blocks,
)
from wbcov.chest import lmmse_estimate, lmmse_estimate_lowrank
from wbcov.errors import RankError
from wbcov.harness import format_csv, preset, run_experiment, timing_profile
from wbcov.ident import (
    khatri_rao,
    measurement_matrices,
    ml_identify_mm,
    music_identify,
    ss_music_identify,
    wcomp_identify,
)
from wbcov.rulers import best_ruler, hybrid_decompose, training_matrix, wichmann_ruler

from conftest import brute_complete_up_to

REPORT: list[str] = []


def report(n: int, ok: bool, detail: str, elapsed: float, budget: float | None = None):
    over = budget is not None and elapsed > budget
    status = "PASS" if ok and not over else "FAIL"
    line = f"criterion {n}: {status} | {detail} | {elapsed:.1f}s"
    if budget is not None:
        line += f" (budget {budget:.0f}s)"
    REPORT.append(line)
    print(line)
    return ok and not over


def exact_case(cfg, X, dictionary, L, seed, min_separation):
    p = draw_params(cfg, L, make_rng(seed), dictionary, min_separation=min_separation)
    C = observation_covariance(X, channel_covariance(p, cfg), 0.0).matrices
    order = np.argsort(p.dict_indices)
    gains = (p.gain_vars[:, None] * np.abs(beta_coeffs(p.delays, cfg)) ** 2)[order].T
    return C, p.dict_indices[order], gains


def test_criterion_1_rulers():
    t0 = time.perf_counter()
    bad = []
    for r in range(11):
        for s in range(max(0, 2 * r - 2), 2 * r + 5):
            w = wichmann_ruler(r, s)
            length = 4 * r * (r + s + 2) + 3 * (s + 1)
            if len(w) != 4 * r + s + 3 or w.length != length or brute_complete_up_to(w.marks) != length:
                bad.append((r, s))
    ok = not bad
    assert report(1, ok, f"{0 if ok else len(bad)} Wichmann rulers failed", time.perf_counter() - t0, 5)


def test_criterion_2_noiseless_recovery():
    t0 = time.perf_counter()
    cfg = ArrayConfig(M=64, N_c=8)
    ruler = best_ruler(16, cfg.M - 1)
    assert ruler.is_complete
    X = training_matrix(ruler, cfg.M).entries
    dictionary = make_dictionary(128, cfg)
    psi = measurement_matrices(X, dictionary, cfg).psi
    algos = {
        "wcomp": lambda C: wcomp_identify(C, psi, 5, 0.0),
        "music": lambda C: music_identify(C, psi, 5, 0.0),
        "ss": lambda C: ss_music_identify(C, ruler, dictionary, 5, 0.0, cfg),
    }
    hits = dict.fromkeys(algos, 0)
    worst = dict.fromkeys(algos, 0.0)
    for trial in range(100):
        # at least one resolution cell (2 G / M = 4 bins) between paths
        C, S, d = exact_case(cfg, X, dictionary, 5, trial, min_separation=4)
        for name, run in algos.items():
            res = run(C)
            if np.array_equal(res.support, S):
                hits[name] += 1
                err = np.linalg.norm(res.gains - d) / np.linalg.norm(d)
                worst[name] = max(worst[name], err)
    ok = all(h == 100 for h in hits.values()) and all(w <= 1e-6 for w in worst.values())
    detail = ", ".join(f"{k} {hits[k]}/100 gain err {worst[k]:.1e}" for k in algos)
    if hits["wcomp"] < 100:
        # informational only: greedy selection at one more bin of spacing
        wide = sum(
            np.array_equal(wcomp_identify(C, psi, 5, 0.0).support, S)
            for C, S, _ in (exact_case(cfg, X, dictionary, 5, t, min_separation=5) for t in range(100))
        )
        detail += f" [not gated: wcomp {wide}/100 at separation 5]"
    assert report(2, ok, detail, time.perf_counter() - t0, 60)


def test_criterion_3_rank_deficient():
    t0 = time.perf_counter()
    cfg = ArrayConfig(M=64, N_c=8)
    ruler = best_ruler(12, cfg.M - 1)
    X = training_matrix(ruler, cfg.M).entries
    dictionary = make_dictionary(128, cfg)
    psi = measurement_matrices(X, dictionary, cfg).psi
    ss_hits = music_raised = 0
    trials = 20
    for trial in range(trials):
        C, S, _ = exact_case(cfg, X, dictionary, 20, trial, min_separation=3)
        assert np.linalg.matrix_rank(C[0]) == len(ruler)
        res = ss_music_identify(C, ruler, dictionary, 20, 0.0, cfg)
        ss_hits += np.array_equal(res.support, S)
        try:
            music_identify(C, psi, 20, 0.0)
        except RankError:
            music_raised += 1
    ok = ss_hits == trials and music_raised == trials
    detail = f"T_tr={len(ruler)} L=20: ss exact {ss_hits}/{trials}, music RankError {music_raised}/{trials}"
    assert report(3, ok, detail, time.perf_counter() - t0, 60)


def test_criterion_4_lmmse_forms():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        rng = np.random.default_rng(i)
        cfg = ArrayConfig(M=int(rng.integers(8, 33)), N_c=int(rng.integers(1, 5)))
        ruler = best_ruler(int(rng.integers(4, 9)), cfg.M - 1)
        X = training_matrix(ruler, cfg.M).entries
        dictionary = make_dictionary(2 * cfg.M, cfg)
        L = int(rng.integers(1, 6))
        p = draw_params(cfg, L, make_rng(i, 0), dictionary)
        h, _ = synth_blocks(p, cfg, 3, make_rng(i, 1))
        nv = float(10 ** rng.uniform(-3, 1))
        phi = observe(X, h, nv, make_rng(i, 2))
        order = np.argsort(p.dict_indices)
        gains = (p.gain_vars[:, None] * np.abs(beta_coeffs(p.delays, cfg)) ** 2)[order].T
        dense = lmmse_estimate(phi, X, channel_covariance(p, cfg), nv).h
        low = lmmse_estimate_lowrank(phi, X, p.dict_indices[order], gains, dictionary, cfg, nv).h
        worst = max(worst, np.linalg.norm(dense - low) / np.linalg.norm(dense))
    assert report(4, worst <= 1e-8, f"max relative difference {worst:.1e}", time.perf_counter() - t0, 10)


def test_criterion_5_invariants():
    t0 = time.perf_counter()
    failures = []
    rng = np.random.default_rng(0)
    for N_c in range(1, 33):
        cfg = ArrayConfig(N_c=N_c)
        for tau in rng.uniform(0, cfg.max_delay, 5):
            b = beta_coeffs(tau, cfg)
            if N_c > 1 and np.max(np.abs(b[1:] - np.conj(b[1:][::-1]))) > 1e-12:
                failures.append(f"beta symmetry N_c={N_c}")
        d = delta_grid(N_c).delta
        if any(d[ell] != -d[N_c - ell] for ell in range(1, (N_c + 1) // 2)):
            failures.append(f"delta mirror N_c={N_c}")
    cfg = ArrayConfig(M=32, N_c=2)
    ruler = best_ruler(10, 31)
    X = training_matrix(ruler, 32).entries
    dictionary = make_dictionary(64, cfg)
    psi = measurement_matrices(X, dictionary, cfg).psi
    for n in (5, 20, 40):
        cols = np.sort(rng.choice(64, n, replace=False))
        if np.linalg.matrix_rank(khatri_rao(psi[0][:, cols])) != n:
            failures.append(f"Khatri-Rao rank n={n}")
    for seed in range(5):
        p = draw_params(cfg, 4, make_rng(seed), dictionary)
        h, _ = synth_blocks(p, cfg, 50, make_rng(seed, 1))
        S = sample_covariance(observe(X, h, 0.1, make_rng(seed, 2)))
        f = ml_identify_mm(S, psi, 4, 0.1, iters=100).info["objective"]
        if np.any(np.diff(f) > 1e-9 * np.max(np.abs(f))):
            failures.append(f"ML monotone seed={seed}")
        C = channel_covariance(p, cfg)
        for cov in (C, S):
            if cov.hermitian_error() > 1e-12 or cov.min_eig_ratio() < -1e-10:
                failures.append(f"Hermitian/PSD seed={seed}")
    for _ in range(1000):
        x = rng.integers(0, 2, int(rng.integers(1, 65)))
        phase = rng.uniform(-np.pi, np.pi)
        prod = hybrid_decompose(x, phase).product()
        if np.max(np.abs(prod - np.exp(1j * phase) * x)) > 1e-12:
            failures.append("hybrid product")
            break
    ok = not failures
    detail = "all invariants hold" if ok else "; ".join(failures[:5])
    assert report(5, ok, detail, time.perf_counter() - t0, 60)


def _decreasing(rows, algo, snr):
    """Non-increasing within two combined standard errors, and last < first."""
    pts = sorted((r.K, r.value, r.stderr) for r in rows if r.algo == algo and r.snr_db == snr)
    steps_ok = all(b[1] <= a[1] + 2 * math.hypot(a[2], b[2]) for a, b in zip(pts, pts[1:]))
    return steps_ok and pts[-1][1] < pts[0][1], pts


@pytest.mark.slow
def test_criterion_6_fig5_desk():
    t0 = time.perf_counter()
    cfg = preset("fig5", "desk")
    assert (cfg.array.M, cfg.G, cfg.L, cfg.T_tr, cfg.array.N_c, cfg.trials) == (64, 128, 15, 32, 8, 50)
    rows = run_experiment(cfg)
    trends = {}
    for algo in ("ss", "music"):
        for snr in (0.0, 30.0):
            trends[(algo, snr)], _ = _decreasing(rows, algo, snr)
    at = {r.algo: r.value for r in rows if r.snr_db == 0.0 and r.K == 100}
    ratio = at["ss"] / at["genie"]
    ok = all(trends.values()) and ratio <= 1.1
    detail = (
        "trend " + ", ".join(f"{a}@{s:g}dB {'ok' if v else 'no'}" for (a, s), v in trends.items())
        + f"; 0 dB K=100 ss {at['ss']:.4f} genie {at['genie']:.4f} ratio {ratio:.2f} (need <= 1.1)"
    )
    assert report(6, ok, detail, time.perf_counter() - t0, 600)


@pytest.mark.slow
def test_criterion_7_fig8_paper():
    t0 = time.perf_counter()
    cfg = preset("fig8", "paper", trials=50, snr_db=(-5.0,))
    assert (cfg.array.M, cfg.L, cfg.T_tr, cfg.K) == (200, 15, 25, (100,))
    rows = run_experiment(cfg)
    eta = {r.algo: r for r in rows}
    dg = eta["ss+dg"]
    ok = dg.value > 0.70 and dg.trials == cfg.trials
    detail = (
        f"-5 dB ss+dg eta {dg.value:.3f} +- {dg.stderr:.3f} over {dg.trials} trials (need > 0.70); "
        f"ss+lmmse eta {eta['ss+lmmse'].value:.3f}"
    )
    assert report(7, ok, detail, time.perf_counter() - t0)


@pytest.mark.slow
def test_criterion_8_complexity():
    t0 = time.perf_counter()
    table = timing_profile(Ms=(32, 64, 128, 256))
    dg, lm = table.exponents["dg"], table.exponents["lmmse"]
    ok = dg < 0.3 and lm >= 1.5
    detail = f"DG exponent {dg:.2f} (need < 0.3), dense LMMSE exponent {lm:.2f} (need >= 1.5)"
    assert report(8, ok, detail, time.perf_counter() - t0, 300)


def test_criterion_9_determinism():
    t0 = time.perf_counter()
    checks = {}
    for name, kw in (("fig3", dict(trials=4)), ("fig7", dict(trials=2, snr_db=(0.0,)))):
        cfg = preset(name, "desk", **kw)
        a = format_csv(run_experiment(cfg, threads=1))
        b = format_csv(run_experiment(cfg, threads=1))
        c = format_csv(run_experiment(cfg, threads=3))
        checks[name] = a == b == c
    ok = all(checks.values())
    detail = ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in checks.items())
    assert report(9, ok, detail + " (1 vs 1 vs 3 threads)", time.perf_counter() - t0)
