"""Command-line driver.

Each subcommand maps one-to-one onto a library operation and emits
plot-ready CSV (or archival JSON) plus a ``<out>.manifest.json`` echoing the
fully materialized configuration.  Values can come from a ``--config`` JSON
file, with command-line flags taking precedence.  Identical invocations
(including seeds) produce byte-identical outputs.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis, dilute, io_formats, selftest
from .integrate import IntegrationConfig, integrate
from .io_formats import RunConfig, config_hash, read_config, write_manifest, write_trajectory
from .oracle import PauliOperator, estimate_observables
from .params import DiluteParams, ModelParams, WeightProfile, perturbation_from_correlation
from .rate_matrix import RateOperator


def _add_common(sub, *names):
    flags = {
        "N": dict(type=int, help="number of qubits"),
        "Ncut": dict(type=int, help="weight-space truncation"),
        "Neff": dict(type=str, help="effective N (comma list allowed)"),
        "r": dict(type=float, help="forward/backward correlation in [0,1]"),
        "p": dict(type=float, help="perturbation strength in [0,1] (excludes --r)"),
        "kappa": dict(type=float, help="depolarizing rate"),
        "w0": dict(type=int, help="initial operator weight"),
        "tmax": dict(type=float, help="integration horizon"),
        "dt": dict(type=float, help="oracle Trotter step"),
        "points": dict(type=int, help="number of sample times"),
        "samples": dict(type=int, help="Monte Carlo sample count"),
        "seed": dict(type=int, help="master RNG seed"),
        "format": dict(type=str, choices=("csv", "json"), help="output format"),
        "out": dict(type=str, help="output file path"),
        "jobs": dict(type=int, help="parallel workers"),
        "tol": dict(type=float, help="plateau tolerance (relative)"),
    }
    for name in names:
        sub.add_argument(f"--{name}", **flags[name])
    sub.add_argument("--config", type=str, help="JSON config file (flags override)")
    sub.add_argument("--profiles", action="store_true", default=None,
                     help="include per-weight b_w columns in the output")


def _build_config(args, mode: str) -> RunConfig:
    raw = {}
    if args.config:
        file_cfg = read_config(args.config)
        if file_cfg.mode != mode:
            raise ValueError(f"config file has mode '{file_cfg.mode}', expected '{mode}'")
        raw.update(file_cfg.values)
        raw = {k: v for k, v in raw.items() if v is not None}
    for key in ("N", "Ncut", "r", "p", "kappa", "w0", "tmax", "dt", "points",
                "samples", "seed", "format", "out", "jobs", "tol"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if getattr(args, "Neff", None) is not None:
        raw["Neff"] = [float(x) for x in args.Neff.split(",")]
    if getattr(args, "profiles", None):
        raw["include_profiles"] = True
    if raw.get("r") is not None and raw.get("p") is not None:
        raise ValueError("flags --r and --p are mutually exclusive")
    raw["mode"] = mode
    return RunConfig.from_dict(raw)


def _default_out(cfg: RunConfig) -> str:
    if cfg.get("out"):
        return cfg.get("out")
    return f"rotoc_{cfg.mode}_{config_hash(cfg)}.{cfg.get('format')}"


def _finish(cfg: RunConfig, files: list[str]) -> None:
    manifest = files[0] + ".manifest.json"
    write_manifest(manifest, [{"file": f, "config": cfg.to_dict()} for f in files])
    for f in files + [manifest]:
        print(f)


def _cmd_simulate(args, mode=None) -> int:
    mode = mode or args.mode
    if mode not in ("full", "dilute"):
        raise ValueError(f"--mode must be 'full' or 'dilute', got {mode!r}")
    cfg = _build_config(args, mode)
    icfg = cfg.integration_config()
    w0 = cfg.get("w0")
    out = _default_out(cfg)

    if mode == "full":
        params = cfg.model_params()
        op = RateOperator.full(params)
        traj = integrate(op, WeightProfile.delta(params.n_qubits, w0), icfg)
        write_trajectory(traj, out, cfg.get("format"), cfg.get("include_profiles"))
    else:
        dparams = cfg.dilute_params()
        n_cut = cfg.get("Ncut") or cfg.get("N")
        if n_cut is None:
            if dparams.r_eff >= 1.0:
                raise ValueError("dilute mode needs --Ncut (or --N) when r_eff = 1")
            n_cut = analysis.suggested_cutoff(w0, dparams.r_eff)
        op = RateOperator.dilute(ModelParams(n_qubits=n_cut,
                                             correlation=dparams.correlation,
                                             noise_rate=dparams.noise_rate,
                                             gamma=cfg.get("gamma")))
        n_rotoc = cfg.get("N") or n_cut
        traj = integrate(op, WeightProfile.delta(n_cut, w0), icfg, rotoc_qubits=n_rotoc)
        sol = dilute.DiluteSolution(dparams)
        predicted = sol.mean_weight(traj.times)
        extra = {
            "mean_weight_analytic": predicted,
            "mean_weight_deviation": traj.mean_weights() - predicted,
        }
        write_trajectory(traj, out, cfg.get("format"), cfg.get("include_profiles"), extra)
    _finish(cfg, [out])
    return 0


def _cmd_oracle(args) -> int:
    cfg = _build_config(args, "oracle")
    ccfg = cfg.circuit_config()
    times = np.linspace(0.0, ccfg.total_time, cfg.get("points"))
    v = PauliOperator.single_site(ccfg.n_qubits, 0, 1)
    w = PauliOperator.single_site(ccfg.n_qubits, 1, 1)
    est = estimate_observables(ccfg, w, v, times, n_jobs=cfg.get("jobs"))

    # matching master-equation curves for the same parameters
    params = ModelParams(n_qubits=ccfg.n_qubits, correlation=ccfg.correlation,
                         noise_rate=ccfg.noise_rate)
    icfg = IntegrationConfig(t_max=max(ccfg.total_time, 1e-6),
                             sample_times=np.maximum(est.times, 0.0))
    traj = integrate(RateOperator.full(params), WeightProfile.delta(params.n_qubits), icfg)
    me_echo = traj.echoes()
    me_dotoc = np.array([o.dressed_otoc for o in traj.observables])

    out = _default_out(cfg)
    n = ccfg.n_qubits
    fmt = io_formats._fmt
    header = (["t", "echo", "echo_err", "dressed_otoc", "dressed_otoc_err",
               "autocorrelator", "autocorrelator_err", "me_echo", "me_dressed_otoc"]
              + [f"b_{w_}" for w_ in range(1, n + 1)]
              + [f"b_{w_}_err" for w_ in range(1, n + 1)]
              + [f"me_b_{w_}" for w_ in range(1, n + 1)])
    me_b = np.array([p.values * math.exp(p.log_mass_offset) for p in traj.profiles])
    lines = [",".join(header)]
    for i in range(est.times.size):
        row = [est.times[i], est.echo[i], est.echo_err[i], est.dressed_otoc[i],
               est.dressed_otoc_err[i], est.autocorrelator[i], est.autocorrelator_err[i],
               me_echo[i], me_dotoc[i]]
        row += list(est.weight_profile[i]) + list(est.weight_profile_err[i]) + list(me_b[i])
        lines.append(",".join(fmt(x) for x in row))
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, [out])
    return 0


def _cmd_metastable(args) -> int:
    cfg = _build_config(args, "metastable")
    icfg = cfg.integration_config()
    rows = []
    for n_eff in cfg.get("Neff"):
        spec = analysis.MetastableSpec(n_cut=cfg.get("Ncut"), n_eff=n_eff,
                                       correlation=cfg.get("r"),
                                       initial_weight=cfg.get("w0"),
                                       plateau_tolerance=cfg.get("tol"))
        m = analysis.lifetime_measure(spec, icfg)
        est = analysis.lifetime_estimate(spec) if cfg.get("w0") >= 2 else float("nan")
        rows.append((n_eff, m.t_enter, m.t_exit, m.duration, m.plateau_value, est))
    out = _default_out(cfg)
    fmt = io_formats._fmt
    lines = ["Neff,t_enter,t_exit,duration,plateau_value,estimate"]
    lines += [",".join(fmt(x) for x in row) for row in rows]
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, [out])
    return 0


def _cmd_crossover(args) -> int:
    cfg = _build_config(args, "crossover")
    T = cfg.get("T")
    if T is None and cfg.get("wmax") is not None:
        spec = analysis.CrossoverSpec(max_weight=cfg.get("wmax"))
    elif T is not None:
        spec = analysis.CrossoverSpec(horizon_time=T)
    elif cfg.get("N") is not None:
        params = ModelParams(n_qubits=cfg.get("N"), correlation=1.0)
        icfg = IntegrationConfig(t_max=15.0, sample_times=np.linspace(0.0, 15.0, 1501))
        traj = integrate(RateOperator.full(params), WeightProfile.delta(params.n_qubits), icfg)
        spec = analysis.CrossoverSpec(
            horizon_time=analysis.horizon_from_ideal_curve(traj.times, traj.mean_weights()))
    else:
        raise ValueError("crossover needs one of --T, --wmax or --N")

    result = {"horizon_time": spec.horizon_time, "max_weight": spec.max_weight}
    solver = cfg.get("solver")
    if solver in ("asymptotic", "both"):
        r_star = analysis.crossover_r_star(spec, "asymptotic")
        result["r_star_asymptotic"] = r_star
        result["p_star_asymptotic"] = perturbation_from_correlation(r_star)
    if solver in ("exact", "both"):
        r_star = analysis.crossover_r_star(spec, "exact")
        result["r_star_exact"] = r_star
        result["p_star_exact"] = perturbation_from_correlation(r_star)
    payload = json.dumps({"schema_version": io_formats.SCHEMA_VERSION, **result}, indent=1)
    if cfg.get("out"):
        with open(cfg.get("out"), "w") as fh:
            fh.write(payload + "\n")
        _finish(cfg, [cfg.get("out")])
    else:
        print(payload)
    return 0


def _run_one_sweep(item):
    run_cfg_dict, fmt = item
    run_cfg = RunConfig.from_dict(run_cfg_dict)
    icfg = run_cfg.integration_config()
    w0 = run_cfg.get("w0")
    if run_cfg.mode == "full":
        params = run_cfg.model_params()
        op = RateOperator.full(params)
        traj = integrate(op, WeightProfile.delta(params.n_qubits, w0), icfg)
        n_cut = params.n_qubits
    else:
        dparams = run_cfg.dilute_params()
        n_cut = run_cfg.get("Ncut") or run_cfg.get("N")
        if n_cut is None:
            n_cut = analysis.suggested_cutoff(w0, min(dparams.r_eff, 0.999))
        op = RateOperator.dilute(ModelParams(n_qubits=n_cut,
                                             correlation=dparams.correlation,
                                             noise_rate=dparams.noise_rate))
        traj = integrate(op, WeightProfile.delta(n_cut, w0), icfg,
                         rotoc_qubits=run_cfg.get("N") or n_cut)
    name = f"rotoc_{run_cfg.mode}_{config_hash(run_cfg)}.{fmt}"
    write_trajectory(traj, name, fmt, run_cfg.get("include_profiles"))
    return name, run_cfg.to_dict()


def _cmd_sweep(args) -> int:
    cfg = _build_config(args, "sweep")
    runs = io_formats.expand_sweep(cfg)
    fmt = cfg.get("format")
    items = [(rc.to_dict(), fmt) for rc in runs]
    jobs = cfg.get("jobs")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            produced = list(pool.map(_run_one_sweep, items))
    else:
        produced = [_run_one_sweep(it) for it in items]
    manifest = cfg.get("out") or f"rotoc_sweep_{config_hash(cfg)}.manifest.json"
    write_manifest(manifest, [{"file": f, "config": c} for f, c in produced])
    for f, _ in produced:
        print(f)
    print(manifest)
    return 0


def _cmd_selftest(args) -> int:
    results = selftest.run_selftest(only=args.only, jobs=args.jobs or 1)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.detail}")
    if args.out:
        payload = [{"name": r.name, "passed": r.passed, "detail": r.detail}
                   for r in results]
        with open(args.out, "w") as fh:
            json.dump({"schema_version": io_formats.SCHEMA_VERSION,
                       "results": payload}, fh, indent=1)
            fh.write("\n")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotoc",
        description="Brownian cluster scrambling dynamics with imperfections")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="integrate the weight master equation")
    sim.add_argument("--mode", choices=("full", "dilute"), required=False)
    _add_common(sim, "N", "Ncut", "r", "p", "kappa", "w0", "tmax", "points",
                "format", "out")
    sim.set_defaults(func=_cmd_simulate)

    dil = subs.add_parser("dilute", help="shorthand for simulate --mode dilute")
    _add_common(dil, "N", "Ncut", "r", "p", "kappa", "w0", "tmax", "points",
                "format", "out")
    dil.set_defaults(func=lambda a: _cmd_simulate(a, mode="dilute"))

    orc = subs.add_parser("oracle", help="Monte Carlo circuit oracle at small N")
    _add_common(orc, "N", "r", "p", "kappa", "tmax", "dt", "samples", "seed",
                "points", "format", "out", "jobs")
    orc.set_defaults(func=_cmd_oracle)

    met = subs.add_parser("metastable", help="plateau entry/exit times vs N_eff")
    _add_common(met, "Ncut", "Neff", "r", "w0", "tol", "tmax", "points",
                "format", "out")
    met.set_defaults(func=_cmd_metastable)

    cro = subs.add_parser("crossover", help="finite-horizon crossover correlation r*")
    cro.add_argument("--T", type=float, help="horizon time")
    cro.add_argument("--wmax", type=float, help="maximum mean weight e^{2T}")
    cro.add_argument("--solver", choices=("exact", "asymptotic", "both"))
    _add_common(cro, "N", "out")
    cro.set_defaults(func=_cmd_crossover)

    col = subs.add_parser("collapse", help="two-branch scaling collapse")
    col.add_argument("--r-values", dest="r_values", type=str,
                     help="comma-separated correlation values")
    col.add_argument("--r-crit", dest="r_crit", type=float)
    col.add_argument("--T", type=float, help="horizon time")
    _add_common(col, "points", "format", "out")
    col.set_defaults(func=_cmd_collapse_wrap)

    st = subs.add_parser("selftest", help="run the acceptance checks at desk scale")
    st.add_argument("--only", type=str, help="substring filter on check names")
    st.add_argument("--out", type=str, help="write a JSON report")
    st.add_argument("--jobs", type=int, default=None)
    st.set_defaults(func=_cmd_selftest)

    swp = subs.add_parser("sweep", help="cartesian (r, kappa) parameter sweep")
    _add_common(swp, "N", "Ncut", "w0", "tmax", "points", "format", "out", "jobs")
    swp.set_defaults(func=_cmd_sweep)
    return parser


def _cmd_collapse_wrap(args) -> int:
    if getattr(args, "r_values", None) is not None:
        args.r_values = [float(x) for x in args.r_values.split(",")]
    return _cmd_collapse(args)


def _cmd_collapse(args) -> int:
    raw = {}
    if args.config:
        file_cfg = read_config(args.config)
        if file_cfg.mode != "collapse":
            raise ValueError(f"config file has mode '{file_cfg.mode}', expected 'collapse'")
        raw.update({k: v for k, v in file_cfg.values.items() if v is not None})
    for key in ("r_values", "r_crit", "T", "points", "format", "out"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    raw["mode"] = "collapse"
    cfg = RunConfig.from_dict(raw)

    r_crit = cfg.get("r_crit")
    r_values = list(cfg.get("r_values"))
    if not any(math.isclose(r, r_crit, rel_tol=0.0, abs_tol=1e-12) for r in r_values):
        r_values.append(r_crit)
    times = np.linspace(0.0, cfg.get("T"), cfg.get("points"))
    curves = {r: dilute.DiluteSolution(DiluteParams(correlation=r)).mean_weight(times)
              for r in r_values}
    collapsed = analysis.scaling_collapse(curves, r_crit)
    out = _default_out(cfg)
    fmt = io_formats._fmt
    lines = ["r,t,x,y"]
    for r in r_values:
        x, y = collapsed[r]
        lines += [f"{fmt(r)},{fmt(t)},{fmt(xi)},{fmt(yi)}"
                  for t, xi, yi in zip(times, x, y)]
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _finish(cfg, [out])
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
