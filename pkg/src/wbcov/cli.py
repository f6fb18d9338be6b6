"""Command-line interface: ``wbcov <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import harness
from .channel import (
    ArrayConfig,
    CovarianceSet,
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
from .errors import WbcovError
from .ident import (
    IdentResult,
    default_gap_eps,
    estimate_num_paths,
    measurement_matrices,
    ml_identify_mm,
    music_identify,
    reconstruct_cov,
    ss_music_identify,
    wcomp_identify,
)
from .rulers import Ruler, best_ruler, coprime_ruler, training_matrix, wichmann_ruler


def _pair(text: str) -> tuple[int, int]:
    a, b = text.split(",")
    return int(a), int(b)


# ------------------------------------------------------------------------ ruler


def cmd_ruler(args) -> int:
    if args.wichmann:
        ruler = wichmann_ruler(*_pair(args.wichmann))
    elif args.coprime:
        ruler = coprime_ruler(*_pair(args.coprime))
    else:
        ruler = best_ruler(args.marks, args.max_length)
    if args.emit == "json":
        print(json.dumps(ruler.to_dict()))
    else:
        print(" ".join(map(str, ruler.marks)))
        print(f"marks={len(ruler)} length={ruler.length} complete_up_to={ruler.complete_up_to}")
    if args.check_complete and not ruler.is_complete:
        print(f"incomplete: lag {ruler.complete_up_to + 1} is missing", file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------- simulate


def _setup_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig(
        name="simulate",
        array=ArrayConfig(M=64, N_c=8),
        G=128,
        L=5,
        T_tr=16,
        snr_db=(10.0,),
        K=(100,),
        trials=1,
        seed=0,
    )
    if args.config:
        cfg = harness.apply_config(cfg, harness.load_config(args.config))
    cli = {
        "M": args.M,
        "N_c": args.N_c,
        "G": args.G,
        "L": args.L,
        "T_tr": args.T_tr,
        "snr_db": args.snr,
        "K": args.K,
        "seed": args.seed,
    }
    return harness.apply_config(cfg, {k: v for k, v in cli.items() if v is not None})


def cmd_simulate(args) -> int:
    cfg = _setup_config(args)
    acfg = cfg.array
    ruler = best_ruler(cfg.T_tr, acfg.M - 1)
    X = training_matrix(ruler, acfg.M).entries
    dictionary = make_dictionary(cfg.G, acfg)
    params = draw_params(acfg, cfg.L, make_rng(cfg.seed, 0), dictionary, cfg.gain_profile)
    K = max(cfg.K)
    nv = snr_to_noise_var(cfg.snr_db[0])
    h, g = synth_blocks(params, acfg, K, make_rng(cfg.seed, 1))
    phi = observe(X, h, nv, make_rng(cfg.seed, 2))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    setup = {
        "array": asdict(acfg),
        "G": cfg.G,
        "L": cfg.L,
        "marks": list(ruler.marks),
        "noise_var": nv,
        "snr_db": cfg.snr_db[0],
        "K": K,
        "seed": cfg.seed,
        "true_support": np.sort(params.dict_indices).tolist(),
        "delays": params.delays[np.argsort(params.dict_indices)].tolist(),
    }
    (out / "setup.json").write_text(json.dumps(setup, indent=2))
    np.savez(out / "observations.npz", phi=phi, h=h)
    sample_covariance(phi).save(out / "sample_cov.npz")
    channel_covariance(params, acfg).save(out / "true_cov.npz")
    print(f"wrote {out}/setup.json, observations.npz, sample_cov.npz, true_cov.npz")
    return 0


def _load_setup(directory):
    d = Path(directory)
    setup = json.loads((d / "setup.json").read_text())
    arr = dict(setup["array"])
    arr["angle_range"] = tuple(arr["angle_range"])
    acfg = ArrayConfig(**arr)
    ruler = Ruler(tuple(setup["marks"]))
    X = training_matrix(ruler, acfg.M).entries
    dictionary = make_dictionary(setup["G"], acfg)
    return d, setup, acfg, ruler, X, dictionary


# --------------------------------------------------------------------- identify


def cmd_identify(args) -> int:
    d, setup, acfg, ruler, X, dictionary = _load_setup(args.input)
    samples = CovarianceSet.load(args.samples or d / "sample_cov.npz")
    nv = setup["noise_var"] if args.noise_var is None else args.noise_var
    if args.paths == "auto":
        n_paths = estimate_num_paths(samples, default_gap_eps(setup.get("snr_db", 10.0)))
    else:
        n_paths = int(args.paths)
    psi = measurement_matrices(X, dictionary, acfg).psi
    mode = args.gain_mode.replace("-", "_")
    if args.algo == "wcomp":
        res = wcomp_identify(samples, psi, n_paths, nv)
    elif args.algo == "music":
        res = music_identify(samples, psi, n_paths, nv, mode, args.mirror)
    elif args.algo == "ss":
        res = ss_music_identify(samples, ruler, dictionary, n_paths, nv, acfg, gain_mode=mode, mirror=args.mirror)
    else:
        res = ml_identify_mm(samples, psi, n_paths, nv)
    text = res.to_json(dictionary)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# --------------------------------------------------------------------- estimate


def cmd_estimate(args) -> int:
    d, setup, acfg, ruler, X, dictionary = _load_setup(args.input)
    ident = IdentResult.from_dict(json.loads(Path(args.ident).read_text()))
    with np.load(d / "observations.npz") as z:
        phi, h = z["phi"], z["h"]
    nv = setup["noise_var"]
    if args.method == "dg":
        est = dg_estimate(phi, X, ident, dictionary, acfg, nv, args.delay_grid)
    elif args.method == "lmmse-lr":
        est = lmmse_estimate_lowrank(phi, X, ident.support, ident.gains, dictionary, acfg, nv)
    else:
        C_hat = reconstruct_cov(ident.support, ident.gains, dictionary, acfg)
        est = lmmse_estimate(phi, X, C_hat, nv)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block", "ell", "antenna", "re", "im"])
            for (k, ell, m), v in np.ndenumerate(est.h):
                w.writerow([k, ell, m, format(v.real, ".12g"), format(v.imag, ".12g")])
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["ell", "eta"])
    for ell in range(acfg.N_c):
        eta = harness.efficiency(est.h[:, ell], h[:, ell], zero="score")
        w.writerow([ell, format(eta, ".6f")])
    return 0


# ------------------------------------------------------------------- experiment


def cmd_experiment(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    cfg = harness.preset(args.preset, args.scale, **overrides)
    if args.config:
        cfg = harness.apply_config(cfg, harness.load_config(args.config))
    rows = harness.run_experiment(cfg, threads=args.threads)
    written = harness.emit(rows, args.out, args.plots)
    if args.out is None:
        sys.stdout.write(harness.format_csv(rows))
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    failed = sum(cfg.trials - r.trials for r in rows)
    if failed:
        print(f"{failed} trial evaluations failed", file=sys.stderr)
        return 1
    return 0


def cmd_timing(args) -> int:
    Ms = tuple(int(m) for m in args.Ms.split(","))
    table = harness.timing_profile(Ms, repeats=args.repeats)
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    for name, p in table.exponents.items():
        print(f"exponent {name}: {p:.3f}")
    return 0


# ------------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wbcov", description="Wideband covariance identification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("ruler", help="build a sparse ruler")
    g = r.add_mutually_exclusive_group(required=True)
    g.add_argument("--marks", type=int, help="mark budget T (best Wichmann ruler)")
    g.add_argument("--wichmann", metavar="R,S")
    g.add_argument("--coprime", metavar="P,Q")
    r.add_argument("--max-length", type=int, default=None, help="cap on the ruler length (e.g. M-1)")
    r.add_argument("--check-complete", action="store_true", help="exit 1 if the ruler is incomplete")
    r.add_argument("--emit", choices=("json", "text"), default="json")
    r.set_defaults(func=cmd_ruler)

    s = sub.add_parser("simulate", help="synthesize observations and covariances")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config", help="flat JSON config")
    s.add_argument("--M", type=int)
    s.add_argument("--N-c", dest="N_c", type=int)
    s.add_argument("--G", type=int)
    s.add_argument("--L", type=int)
    s.add_argument("--T-tr", dest="T_tr", type=int)
    s.add_argument("--snr", type=float)
    s.add_argument("--K", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("identify", help="identify support and gains from a simulate directory")
    i.add_argument("input", help="directory written by `simulate`")
    i.add_argument("--samples", help="covariance file (.npz or .csv); default sample_cov.npz")
    i.add_argument("--algo", choices=("wcomp", "music", "ss", "ml"), default="ss")
    i.add_argument("--paths", default="auto", help="path count or 'auto'")
    i.add_argument("--gain-mode", choices=("direct", "khatri-rao", "auto"), default="khatri-rao")
    i.add_argument("--mirror", action=argparse.BooleanOptionalAction, default=True)
    i.add_argument("--noise-var", type=float, default=None)
    i.add_argument("--out", help="also write the JSON here")
    i.set_defaults(func=cmd_identify)

    e = sub.add_parser("estimate", help="estimate channels from an identification result")
    e.add_argument("input", help="directory written by `simulate`")
    e.add_argument("--ident", required=True, help="JSON written by `identify`")
    e.add_argument("--method", choices=("lmmse", "lmmse-lr", "dg"), default="dg")
    e.add_argument("--delay-grid", type=int, default=None, help="delay candidates (default 20 N)")
    e.add_argument("--out", help="CSV of channel estimates")
    e.set_defaults(func=cmd_estimate)

    x = sub.add_parser("experiment", help="run a figure preset")
    x.add_argument("--preset", required=True, choices=sorted(harness.PRESETS))
    x.add_argument("--scale", choices=("desk", "paper"), default="desk")
    x.add_argument("--out", help="CSV path (stdout if omitted)")
    x.add_argument("--plots", help="directory for SVG plots")
    x.add_argument("--seed", type=int)
    x.add_argument("--trials", type=int)
    x.add_argument("--threads", type=int, default=1)
    x.add_argument("--config", help="flat JSON overrides")
    x.set_defaults(func=cmd_experiment)

    t = sub.add_parser("timing", help="empirical cost of the estimators across M")
    t.add_argument("--Ms", default="32,64,128,256")
    t.add_argument("--repeats", type=int, default=7)
    t.add_argument("--out")
    t.set_defaults(func=cmd_timing)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (WbcovError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
