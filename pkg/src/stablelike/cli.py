"""Command-line entry point for reproducible study runs.

Every command resolves one fully-validated configuration (built-in defaults,
then an optional TOML file, then ``--set`` overrides), echoes it into its JSON
report, and writes machine-readable outputs into the chosen directory.  All
randomness flows from the single master seed through the documented
study/cell/replica splitting tree, so a (config, seed) pair determines every
numeric output byte for byte; wall-clock metadata goes only to the
run_meta.json side-channel.

Exit status: 0 all checks passed, 1 a check failed, 2 usage or configuration
error (nothing written), 3 numerical failure inside a study.
"""

import argparse
import copy
import math
import os
import sys
from dataclasses import replace

import numpy as np
from scipy import stats

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import reports
from .errors import NumericalError, ParameterError, SamplerError
from .krylov_harness import (KrylovExperiment, PathFunctional,
                             exit_probability_check, krylov_function_suite,
                             krylov_ratio_study, martingale_bias_study,
                             martingale_check, weak_convergence_study)
from .meyer_simulator import SimConfig, excess_rate, simulate_path
from .nonlocal_operator import (apply_stable_generator, cosine_function,
                                double_integral_check, gaussian_function,
                                kernel_preset, perturbation_gap_check,
                                potential_bound_check, truncation_gap_bound,
                                verify_poisson)
from .seeding import replica_rng
from .stable_core import (StableParams, check_resolvent_bounds, density_mass,
                          get_resolvent_table, resolvent_mass,
                          sample_stable_increment, symbol_constant,
                          transition_density)

GOF_LEVEL = 0.01

_STUDY_COMMANDS = (
    "sample", "density", "resolvent", "operator-eval", "poisson-check",
    "estimates-check", "simulate", "krylov-study", "exit-study",
    "martingale-check", "convergence-study",
)
COMMANDS = _STUDY_COMMANDS + ("verify-all",)

_TOP_KEYS = {"seed", "threads", "quick", "out", "params", "kernel", "sim",
             "study"}
_PARAMS_KEYS = {"d", "alpha", "lam"}
_KERNEL_KEYS = {"preset", "amplitude", "beta", "cell_width"}
_SIM_KEYS = {"horizon", "k", "dt", "x0"}

# per-command study knobs: value = (full default, quick default)
_STUDY_KEYS = {
    "sample": {"alphas": ([0.5, 1.0, 1.5],) * 2,
               "n": (200000, 20000),
               "xis": ([0.5, 1.0, 2.0, 4.0],) * 2,
               "t": (1.0, 1.0)},
    "density": {"t": (0.37, 0.37), "n_points": (5, 3)},
    "resolvent": {},
    "operator-eval": {"k_list": ([4, 8, 16, 32], [4, 8, 16]),
                      "freqs": ([0.5, 1.0, 2.0],) * 2,
                      "n_x": (9, 5)},
    "poisson-check": {"widths": ([0.8, 1.2], [1.0]), "n_x": (13, 5)},
    "estimates-check": {"x_points": ([0.3],) * 2, "n_x": (9, 3)},
    "simulate": {"replicas": (10000, 2000),
                 "consumed_replicas": (2200, 600),
                 "dump_paths": (0, 0)},
    "krylov-study": {"replicas": (600, 600),
                     "radii": ([0.5, 0.25, 0.125],) * 2,
                     "t": (0.5, 0.5), "p": (2.0, 2.0)},
    "exit-study": {"replicas": (10000, 2000)},
    "martingale-check": {"replicas": (600, 600),
                         "bias_replicas": (30000, 8000),
                         "t": (0.5, 0.5), "freq": (1.0, 1.0)},
    "convergence-study": {"replicas": (800, 200),
                          "k_list": ([4, 8, 16],) * 2,
                          "t": (0.3, 0.2)},
    "verify-all": {},
}

# commands whose physics pins a different kernel or grid than the global default
_KERNEL_DEFAULT = {"martingale-check": "stable",
                   "convergence-study": "discontinuous_in_x"}
_SIM_DEFAULT = {
    "simulate": {"horizon": 1.0, "k": 4, "dt": 1e-3, "x0": 0.0},
    "convergence-study": {"horizon": 0.3, "k": 4, "dt": 5e-4, "x0": 0.0},
}

_BASE_DEFAULTS = {
    "seed": 42,
    "threads": 1,
    "quick": False,
    "out": ".",
    "params": {"d": 1, "alpha": 1.5, "lam": 1.0},
    "kernel": {"preset": "holder_bump", "amplitude": 0.5, "beta": 0.5,
               "cell_width": 0.5},
    "sim": {"horizon": 0.5, "k": 8, "dt": 1e-3, "x0": 0.0},
}


# ---------------------------------------------------------------------------
# configuration resolution
# ---------------------------------------------------------------------------

def _check_keys(given, allowed, where):
    unknown = set(given) - set(allowed)
    if unknown:
        raise ParameterError(
            f"unknown config key(s) {sorted(unknown)} in {where}; "
            f"allowed: {sorted(allowed)}")


def _load_config_file(path):
    if not os.path.exists(path):
        raise ParameterError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"config file {path} is not valid TOML: {exc}")


def _parse_set_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text  # bare string convenience: --set kernel.preset=stable


def _apply_overrides(cfg, assignments):
    for item in assignments:
        if "=" not in item:
            raise ParameterError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        value = _parse_set_value(raw.strip())
        if len(parts) == 1:
            _check_keys(parts, _TOP_KEYS - {"params", "kernel", "sim", "study"},
                        "--set")
            cfg[parts[0]] = value
        elif len(parts) == 2 and parts[0] in ("params", "kernel", "sim",
                                              "study"):
            cfg.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ParameterError(f"--set key {key!r} is not a known setting")


def config_echo(cfg):
    """Provenance copy embedded in reports: everything but the output path,
    which is environment rather than study identity."""
    return {key: copy.deepcopy(val) for key, val in cfg.items()
            if key != "out"}


def resolve_config(command, args):
    """Merge defaults, config file, and command-line overrides; validate."""
    cfg = copy.deepcopy(_BASE_DEFAULTS)
    if command in _KERNEL_DEFAULT:
        cfg["kernel"]["preset"] = _KERNEL_DEFAULT[command]
    if command in _SIM_DEFAULT:
        cfg["sim"] = dict(_SIM_DEFAULT[command])
    cfg["study"] = {}

    file_cfg = _load_config_file(args.config) if args.config else {}
    _check_keys(file_cfg, _TOP_KEYS, "the config file")
    for table, allowed in (("params", _PARAMS_KEYS), ("kernel", _KERNEL_KEYS),
                           ("sim", _SIM_KEYS)):
        sub = file_cfg.get(table, {})
        if not isinstance(sub, dict):
            raise ParameterError(f"[{table}] must be a table")
        _check_keys(sub, allowed, f"[{table}]")
        cfg[table].update(sub)
    for key in ("seed", "threads", "quick", "out"):
        if key in file_cfg:
            cfg[key] = file_cfg[key]
    study_over = dict(file_cfg.get("study", {}))

    if args.set:
        over = {}
        _apply_overrides(over, args.set)
        for table, allowed in (("params", _PARAMS_KEYS),
                               ("kernel", _KERNEL_KEYS), ("sim", _SIM_KEYS)):
            sub = over.pop(table, {})
            _check_keys(sub, allowed, f"--set {table}.*")
            cfg[table].update(sub)
        study_over.update(over.pop("study", {}))
        cfg.update(over)

    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.out is not None:
        cfg["out"] = args.out
    if args.quick:
        cfg["quick"] = True

    if not isinstance(cfg["seed"], int):
        raise ParameterError(f"seed must be an integer, got {cfg['seed']!r}")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ParameterError("threads must be a positive integer")
    if not isinstance(cfg["quick"], bool):
        raise ParameterError("quick must be a boolean")

    # study knobs: quick-aware defaults, then explicit overrides
    spec = _STUDY_KEYS[command]
    if study_over and not spec:
        raise ParameterError(
            f"command {command} accepts no [study] settings, "
            f"got {sorted(study_over)}")
    _check_keys(study_over, spec, "[study]")
    idx = 1 if cfg["quick"] else 0
    cfg["study"] = {key: copy.deepcopy(pair[idx]) for key, pair in spec.items()}
    cfg["study"].update(study_over)
    return cfg


def build_params(cfg):
    return StableParams(d=cfg["params"]["d"], alpha=cfg["params"]["alpha"],
                        lam=cfg["params"]["lam"])


def build_kernel(cfg):
    kc = cfg["kernel"]
    return kernel_preset(kc["preset"], amplitude=kc["amplitude"],
                         beta=kc["beta"], cell_width=kc["cell_width"])


def build_sim(cfg, **over):
    sc = dict(cfg["sim"])
    sc.update(over)
    return SimConfig(horizon=sc["horizon"], k=sc["k"], seed=cfg["seed"],
                     dt=sc["dt"], x0=sc["x0"])


def _warm_resolvent_cache(params):
    cache = os.environ.get("STABLELIKE_CACHE_DIR")
    get_resolvent_table(params, cache_dir=cache)


# ---------------------------------------------------------------------------
# study commands (each returns report dict, rows list or None)
# ---------------------------------------------------------------------------

def cmd_sample(cfg):
    params = build_params(cfg)
    if params.d != 1:
        raise ParameterError("the sampler check is defined for d = 1")
    study = cfg["study"]
    n, t = int(study["n"]), float(study["t"])
    cells = []
    for i, alpha in enumerate(study["alphas"]):
        p = StableParams(d=1, alpha=float(alpha), lam=params.lam)
        rng = replica_rng(cfg["seed"], "sampler", cell=i, replica=0)
        x = np.asarray(sample_stable_increment(p, t, rng, size=n)).ravel()
        a_const = symbol_constant(1, p.alpha)
        for xi in study["xis"]:
            xi = float(xi)
            emp = complex(np.mean(np.exp(1j * xi * x)))
            target = math.exp(-t * a_const * xi ** p.alpha)
            err = abs(emp - target)
            tol = 4.0 / math.sqrt(n) + 1e-3
            cells.append({"alpha": p.alpha, "xi": xi, "cf_error": err,
                          "tol": tol, "pass": bool(err <= tol)})
    return {"study": "sampler", "n": n, "t": t, "cells": cells,
            "pass": all(c["pass"] for c in cells), "seed": cfg["seed"]}, None


def cmd_density(cfg):
    params = build_params(cfg)
    study = cfg["study"]
    mass, tail = density_mass(params)
    mass_err = abs(mass + tail - 1.0)
    parts = [{"part": "density_mass", "error": mass_err, "tol": 1e-3,
              "pass": bool(mass_err <= 1e-3)}]

    t = float(study["t"])
    pts = np.linspace(0.2, 2.0, int(study["n_points"]))
    scale = t ** (-1.0 / params.alpha)
    sim_err = 0.0
    for x in pts:
        direct = transition_density(params, t, np.full(params.d, x))
        scaled = transition_density(params, 1.0, np.full(params.d, scale * x))
        scaled *= scale ** params.d
        sim_err = max(sim_err, abs(direct - scaled) / abs(scaled))
    parts.append({"part": "self_similarity", "error": sim_err, "tol": 1e-6,
                  "pass": bool(sim_err <= 1e-6)})

    pc = StableParams(d=1, alpha=1.0, lam=params.lam)
    a1 = symbol_constant(1, 1.0)
    cauchy_err = 0.0
    for x in (0.0, 0.7, 2.5):
        got = transition_density(pc, 1.0, x)
        want = a1 / math.pi / (a1 ** 2 + x ** 2)
        cauchy_err = max(cauchy_err, abs(got - want) / want)
    parts.append({"part": "cauchy_closed_form", "error": cauchy_err,
                  "tol": 1e-6, "pass": bool(cauchy_err <= 1e-6)})
    return {"study": "density", "parts": parts,
            "pass": all(p["pass"] for p in parts), "seed": cfg["seed"]}, None


def cmd_resolvent(cfg):
    params = build_params(cfg)
    _warm_resolvent_cache(params)
    head, tail = resolvent_mass(params)
    mass_err = abs(head + tail - 1.0 / params.lam)
    bounds = check_resolvent_bounds(params)
    ok = mass_err <= 1e-3 and bounds["pass"]
    return {"study": "resolvent", "mass_error": mass_err, "mass_tol": 1e-3,
            "bounds": bounds, "pass": bool(ok), "seed": cfg["seed"]}, None


def cmd_operator_eval(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    study = cfg["study"]
    a_const = symbol_constant(1, params.alpha)
    x_probe = 0.3
    cells = []
    for w in study["freqs"]:
        w = float(w)
        f = cosine_function(freq=w)
        got = apply_stable_generator(f, x_probe, params)
        want = -a_const * w ** params.alpha * math.cos(w * x_probe)
        rel = abs(got - want) / abs(want)
        cells.append({"freq": w, "rel_error": rel, "tol": 1e-6,
                      "pass": bool(rel <= 1e-6)})
    grid = np.linspace(-2.0, 2.0, int(study["n_x"]))
    gap = truncation_gap_bound(gaussian_function(width=1.0), kernel, params,
                               [int(k) for k in study["k_list"]], x_grid=grid)
    ok = all(c["pass"] for c in cells) and gap["pass"]
    return {"study": "operator", "symbol_cells": cells, "truncation_gap": gap,
            "pass": bool(ok), "seed": cfg["seed"]}, None


def cmd_poisson_check(cfg):
    params = build_params(cfg)
    _warm_resolvent_cache(params)
    study = cfg["study"]
    span = 2.0 if cfg["quick"] else 3.0
    grid = np.linspace(-span, span, int(study["n_x"]))
    checks = []
    for w in study["widths"]:
        checks.append(verify_poisson(gaussian_function(width=float(w)),
                                     params, x_grid=grid))
    return {"study": "poisson_identity", "checks": checks,
            "pass": all(c["pass"] for c in checks), "seed": cfg["seed"]}, None


def cmd_estimates_check(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    _warm_resolvent_cache(params)
    study = cfg["study"]
    span = 1.0 if cfg["quick"] else 2.0
    grid = np.linspace(-span, span, int(study["n_x"]))
    g = gaussian_function(width=1.0)
    checks = [perturbation_gap_check(g, params, kernel, x_grid=grid),
              potential_bound_check(g, params, x_grid=grid)]
    for x in study["x_points"]:
        checks.append(double_integral_check(g, params, kernel, x=float(x)))

    unit = kernel_preset("stable")
    pert0 = perturbation_gap_check(g, params, unit, x_grid=grid[:3])
    zero_ok = pert0["pass"] and pert0["worst_ratio"] == 0.0
    checks.append(pert0)
    if not cfg["quick"]:
        dbl0 = double_integral_check(g, params, unit, x=float(study["x_points"][0]))
        zero_ok = zero_ok and dbl0["pass"] and dbl0["worst_ratio"] < 1e-10
        checks.append(dbl0)
    ok = all(c["pass"] for c in checks) and zero_ok
    return {"study": "perturbation_estimates", "checks": checks,
            "unit_kernel_zero": bool(zero_ok), "pass": bool(ok),
            "seed": cfg["seed"]}, None


def _poisson_counts_check(params, seed, n_rep):
    """Insertion counts under the unit kernel are Poisson(N * horizon)."""
    kernel = kernel_preset("stable")
    k, horizon = 4, 1.0
    nu = excess_rate(kernel, params, k, 0.0)
    counts = np.empty(n_rep, dtype=int)
    for r in range(n_rep):
        cfg = SimConfig(horizon=horizon, k=k, seed=seed, dt=1e-3, replica_id=r)
        counts[r] = len(simulate_path(kernel, params, cfg).insertions)
    lam = nu * horizon
    mean_ok = abs(counts.mean() - lam) <= 4.0 * math.sqrt(lam / n_rep)
    hi = int(stats.poisson.ppf(1.0 - 1e-6, lam))
    probs = stats.poisson.pmf(np.arange(hi + 1), lam)
    obs = np.bincount(counts, minlength=hi + 1)[:hi + 1]
    obs[-1] += np.sum(counts > hi)
    probs[-1] = 1.0 - probs[:-1].sum()
    exp_pooled, obs_pooled, acc_e, acc_o = [], [], 0.0, 0
    for e, o in zip(n_rep * probs, obs):
        acc_e += e
        acc_o += o
        if acc_e >= 5.0:
            exp_pooled.append(acc_e)
            obs_pooled.append(acc_o)
            acc_e, acc_o = 0.0, 0
    exp_pooled[-1] += acc_e
    obs_pooled[-1] += acc_o
    chi2 = float(np.sum((np.array(obs_pooled) - exp_pooled) ** 2
                        / np.array(exp_pooled)))
    pval = float(stats.chi2.sf(chi2, len(exp_pooled) - 1))
    return {"check": "insertion_counts_poisson", "replicas": n_rep,
            "rate": lam, "mean": float(counts.mean()), "chi2": chi2,
            "pvalue": pval, "pass": bool(mean_ok and pval >= GOF_LEVEL)}


def _consumed_clock_check(kernel, params, seed, n_rep):
    """First five consumed-clock intervals per path pool to Exp(1).

    Only leading intervals enter: the interval straddling the horizon is
    length-biased, so pooling everything understates the mean.
    """
    k, m = 4, 5
    vals = []
    for r in range(n_rep):
        cfg = SimConfig(horizon=1.0, k=k, seed=seed, dt=5e-4, replica_id=r)
        c = simulate_path(kernel, params, cfg).consumed
        if len(c) >= m:
            vals.extend(c[:m])
    v = np.asarray(vals)
    ks = stats.kstest(v, "expon")
    mean_ok = abs(v.mean() - 1.0) <= 4.0 / math.sqrt(v.size)
    return {"check": "consumed_clock_exponential", "replicas": n_rep,
            "pooled": int(v.size), "mean": float(v.mean()),
            "pvalue": float(ks.pvalue),
            "pass": bool(mean_ok and ks.pvalue >= GOF_LEVEL)}


def _terminal_law_check(params, seed, n):
    """k = 1 unit-kernel endpoints against direct stable sampling."""
    kernel = kernel_preset("stable")
    ends = np.empty(n)
    for r in range(n):
        cfg = SimConfig(horizon=1.0, k=1, seed=seed, dt=1e-3, replica_id=r)
        ends[r] = simulate_path(kernel, params, cfg).states[-1, 0]
    rng = replica_rng(seed, "gof", cell=1, replica=0)
    direct = np.asarray(sample_stable_increment(params, 1.0, rng,
                                                size=n)).ravel()
    ks = stats.ks_2samp(ends, direct)
    return {"check": "terminal_law_two_sample", "replicas": n,
            "statistic": float(ks.statistic), "pvalue": float(ks.pvalue),
            "pass": bool(ks.pvalue >= GOF_LEVEL)}


def cmd_simulate(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    study = cfg["study"]
    checks = [
        _poisson_counts_check(params, cfg["seed"], int(study["replicas"])),
        _consumed_clock_check(kernel, params, cfg["seed"],
                              int(study["consumed_replicas"])),
        _terminal_law_check(params, cfg["seed"], int(study["replicas"])),
    ]
    dumped = []
    n_dump = int(study["dump_paths"])
    if n_dump > 0:
        path_dir = os.path.join(cfg["out"], "paths")
        os.makedirs(path_dir, exist_ok=True)
        for r in range(n_dump):
            sim = build_sim(cfg)
            path = simulate_path(kernel, params, replace(sim, replica_id=r))
            fn = os.path.join(path_dir, f"path_{r:04d}.bin")
            path.save(fn)
            dumped.append(os.path.relpath(fn, cfg["out"]))
    return {"study": "simulation_gof", "checks": checks, "dumped": dumped,
            "pass": all(c["pass"] for c in checks), "seed": cfg["seed"]}, None


def cmd_krylov_study(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    study = cfg["study"]
    t = float(study["t"])
    sim = build_sim(cfg, horizon=t)
    exps = []
    for i, radius in enumerate(study["radii"]):
        radius = float(radius)
        exps.append(KrylovExperiment(
            center=sim.x0, R=radius, t=t, p=float(study["p"]),
            f_suite=krylov_function_suite(sim.x0, radius, seed=7),
            replicas=int(study["replicas"]), kernel=kernel, params=params,
            sim=sim, cell=i))
    rep = krylov_ratio_study(exps)
    return rep, rep["rows"]


def cmd_exit_study(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    sim = build_sim(cfg)
    rep = exit_probability_check(kernel, params, sim,
                                 replicas=int(cfg["study"]["replicas"]))
    return rep, rep["rows"]


def cmd_martingale_check(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    study = cfg["study"]
    bias_sim = SimConfig(horizon=0.12, k=1, seed=cfg["seed"], dt=0.04,
                         x0=cfg["sim"]["x0"])
    bias = martingale_bias_study(kernel_preset("stable"), params, bias_sim,
                                 cosine_function(freq=2.0), 0.12,
                                 dt_list=(0.04, 0.02, 0.01),
                                 replicas=int(study["bias_replicas"]))
    t = float(study["t"])
    sim = build_sim(cfg, horizon=max(cfg["sim"]["horizon"], t))
    check = martingale_check(kernel, params, sim,
                             cosine_function(freq=float(study["freq"])), t,
                             replicas=int(study["replicas"]),
                             c_bias=bias["c_bias"])
    rep = {"study": "martingale", "bias_study": bias, "check": check,
           "c_bias": bias["c_bias"], "rows": check["rows"],
           "pass": bool(bias["pass"] and check["pass"]), "seed": cfg["seed"]}
    return rep, rep["rows"]


def cmd_convergence_study(cfg):
    params = build_params(cfg)
    kernel = build_kernel(cfg)
    study = cfg["study"]
    t = float(study["t"])
    sim = build_sim(cfg, horizon=t)
    if cfg["quick"]:
        f = cosine_function(freq=2.0)
        y_spec = PathFunctional()
    else:
        f = gaussian_function(width=0.7)
        y_spec = PathFunctional(times=(t / 3.0, 2.0 * t / 3.0),
                                observables=(np.cos, np.tanh))
    rep = weak_convergence_study(kernel, params, sim, f,
                                 [int(k) for k in study["k_list"]],
                                 y_spec=y_spec, t=t,
                                 replicas=int(study["replicas"]))
    return rep, rep["rows"]


_RUNNERS = {
    "sample": cmd_sample,
    "density": cmd_density,
    "resolvent": cmd_resolvent,
    "operator-eval": cmd_operator_eval,
    "poisson-check": cmd_poisson_check,
    "estimates-check": cmd_estimates_check,
    "simulate": cmd_simulate,
    "krylov-study": cmd_krylov_study,
    "exit-study": cmd_exit_study,
    "martingale-check": cmd_martingale_check,
    "convergence-study": cmd_convergence_study,
}


def cmd_verify_all(args):
    """Run every study command with its own defaults; consolidate."""
    if args.config:
        file_cfg = _load_config_file(args.config)
        _check_keys(file_cfg, _TOP_KEYS - {"study"}, "the config file")
    if any(item.startswith("study.") for item in args.set):
        raise ParameterError(
            "verify-all runs each command with its own study defaults; "
            "per-study overrides need the individual command")
    sub_reports = []
    out_dir = None
    overall_cfg = None
    for name in _STUDY_COMMANDS:
        cfg = resolve_config(name, args)
        if out_dir is None:
            out_dir = cfg["out"]
            overall_cfg = {"seed": cfg["seed"], "threads": cfg["threads"],
                           "quick": cfg["quick"], "params": cfg["params"]}
        report, rows = _RUNNERS[name](cfg)
        report = {"schema": reports.REPORT_SCHEMA, "command": name,
                  "config": config_echo(cfg), **report}
        _write_outputs(name, report, rows, cfg["out"])
        sub_reports.append(report)
    summary = reports.emit_summary(sub_reports,
                                   os.path.join(out_dir, "summary.csv"))
    full = {"schema": reports.REPORT_SCHEMA, "command": "verify-all",
            "config": overall_cfg, "summary": summary["rows"],
            "reports": {rep["command"]: rep for rep in sub_reports},
            "pass": summary["pass"], "seed": overall_cfg["seed"]}
    reports.write_json_report(full, os.path.join(out_dir, "verify_all.json"))
    reports.write_run_meta(out_dir, {"command": "verify-all"})
    return full


def _write_outputs(command, report, rows, out_dir):
    stem = command.replace("-", "_")
    reports.write_json_report(report, os.path.join(out_dir, f"{stem}.json"))
    if rows is not None:
        reports.write_rows_csv(rows, os.path.join(out_dir, f"{stem}_rows.csv"))


# ---------------------------------------------------------------------------
# argument parsing and entry point
# ---------------------------------------------------------------------------

def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML configuration file")
    common.add_argument("--seed", type=int, metavar="N",
                        help="master seed (default 42)")
    common.add_argument("--threads", type=int, metavar="N",
                        help="recorded worker count (studies are "
                             "deterministic and single-threaded)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory (default current)")
    common.add_argument("--quick", action="store_true",
                        help="reduced replica counts for CI")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry, e.g. sim.dt=5e-4")

    parser = argparse.ArgumentParser(
        prog="stablelike",
        description="Deterministic study runner for the stable-like "
                    "process laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "sample": "stable-increment sampler against the exact symbol",
        "density": "transition density mass, scaling, and Cauchy closed form",
        "resolvent": "resolvent mass identity and decay envelopes",
        "operator-eval": "generator symbol action and truncation-gap rate",
        "poisson-check": "resolvent identity residuals on Gaussian sources",
        "estimates-check": "perturbation-gap, potential, and nested bounds",
        "simulate": "path-law goodness of fit for the insertion simulator",
        "krylov-study": "occupation/L^p ratio constants over shrinking balls",
        "exit-study": "exit-probability envelope over an (R, t) grid",
        "martingale-check": "generator martingale residual with bias budget",
        "convergence-study": "truncation-level refinement of functionals",
        "verify-all": "every check suite in sequence plus a summary table",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=descriptions[name],
                       description=descriptions[name])
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "verify-all":
            report = cmd_verify_all(args)
        else:
            cfg = resolve_config(args.command, args)
            body, rows = _RUNNERS[args.command](cfg)
            report = {"schema": reports.REPORT_SCHEMA,
                      "command": args.command, "config": config_echo(cfg),
                      **body}
            _write_outputs(args.command, report, rows, cfg["out"])
            reports.write_run_meta(cfg["out"], {"command": args.command})
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, SamplerError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    status = "PASS" if report["pass"] else "FAIL"
    print(f"{args.command}: {status}")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
