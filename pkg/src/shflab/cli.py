"""Command line driver: deterministic runs producing CSV plus a manifest.

Every subcommand resolves one RunConfig (defaults, then the optional
config file, then overrides), writes its tables into the output
directory, and finishes with a JSON manifest naming each output by
SHA-256 digest.  Exit codes: 0 success, 1 a verification or acceptance
failure, 2 a configuration error, 3 a numeric failure.

Worker threads for the spectral transforms come from the SHFLAB_THREADS
environment variable; unset means all available cores.  Numeric output
bytes are identical across thread counts except where noted, and exactly
reproducible at SHFLAB_THREADS=1.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys

from .config import ConfigError, RunConfig, load_config
from .delta_bose import (GaussianTest, GridTruncationError, JToleranceError,
                         moment_inner, write_j_table, write_moment_table)
from .diagrams import (EnumerationCapError, count_dgm, enumerate_dgm_star,
                       enumerate_dgm_up)
from .manifest import start_manifest, write_manifest
from .measures import ProductSizeError
from .mollifier import (MollifierUnresolvedError, beta_epsilon,
                        build_mollifier)

log = logging.getLogger(__name__)

NUMERIC_ERRORS = (JToleranceError, GridTruncationError, ProductSizeError,
                  EnumerationCapError, MollifierUnresolvedError,
                  FloatingPointError)

_EXIT_OK = 0
_EXIT_FAIL = 1
_EXIT_CONFIG = 2
_EXIT_NUMERIC = 3


def _write_rows(path, header, rows) -> None:
    """CSV with repr-formatted floats so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])


def _mollifier(cfg: RunConfig):
    return build_mollifier(cfg.profile, cfg.r_phi, cfg.resolution)


def _test_pairs(cfg: RunConfig, center=(0.0, 0.0)):
    g = GaussianTest(center=center, sigma=cfg.sigma)
    return [(g, g)] * cfg.n


def _moment_row(cfg: RunConfig, est, method: str) -> dict:
    return {"n": cfg.n, "s": cfg.s, "t": cfg.t, "eps": cfg.epsilon,
            "theta": cfg.theta, "value": est.value, "stderr": est.stderr,
            "n_samples": est.n_samples, "seed": cfg.master_seed,
            "method": method}


def _cmd_beta(cfg: RunConfig, out: str, man) -> int:
    mol = _mollifier(cfg)
    rows = []
    for eps in cfg.epsilons:
        c = beta_epsilon(cfg.theta, eps, mol)
        rows.append([eps, cfg.theta, c.beta, c.log_interaction,
                     c.positivity_threshold])
        if not man.beta_audit:
            man.beta_audit = dict(c.audit)
    path = os.path.join(out, "beta.csv")
    _write_rows(path, ["epsilon", "theta", "beta", "log_interaction",
                       "positivity_threshold"], rows)
    man.add_output(path)
    return _EXIT_OK


def _cmd_jfun(cfg: RunConfig, out: str, man) -> int:
    path = os.path.join(out, "jfun.csv")
    write_j_table(path, cfg.theta, cfg.j_ts)
    man.add_output(path)
    return _EXIT_OK


def _cmd_diagrams(cfg: RunConfig, out: str, man) -> int:
    rows = []
    for size in (2, 3, 4):
        omega = tuple(range(1, size + 1))
        for m in range(1, cfg.m_max + 1):
            star = sum(1 for _ in enumerate_dgm_star(omega, m))
            rows.append([size, m, count_dgm(omega, m), star])
    path = os.path.join(out, "diagrams.csv")
    _write_rows(path, ["omega_size", "m", "dgm", "dgm_star"], rows)
    man.add_output(path)
    man.note("dgm_up_4", float(sum(1 for _ in enumerate_dgm_up(4))))
    return _EXIT_OK


def _cmd_moment_exact(cfg: RunConfig, out: str, man) -> int:
    res = moment_inner(cfg.n, cfg.theta, cfg.t - cfg.s, _test_pairs(cfg),
                       m_max=cfg.m_max)
    path = os.path.join(out, "moment_exact.csv")
    write_moment_table(path, [res])
    man.add_output(path)
    man.note("trunc_proxy", res.trunc_proxy)
    man.note("quad_err", res.quad_err)
    print(f"moment-exact n={cfg.n} t={cfg.t - cfg.s:g}: {res.value!r}")
    return _EXIT_OK


def _cmd_moment_fk(cfg: RunConfig, out: str, man) -> int:
    from .feynman_kac import fk_moment, write_moment_csv
    mol = _mollifier(cfg)
    coupling = beta_epsilon(cfg.theta, cfg.epsilon, mol)
    man.beta_audit = dict(coupling.audit)
    est = fk_moment(cfg.n, cfg.t - cfg.s, coupling,
                    test_pairs=_test_pairs(cfg), n_paths=cfg.n_paths,
                    dt_path=cfg.dt_path or None, seed=cfg.master_seed,
                    mol=mol)
    if est.diagnostics.get("low_ess"):
        log.warning("effective sample size %.0f is low; widen the tests "
                    "or add paths", est.diagnostics["ess"])
    path = os.path.join(out, "moment_fk.csv")
    write_moment_csv(path, [_moment_row(cfg, est, "fk")])
    man.add_output(path)
    man.note("ess", est.diagnostics["ess"])
    print(f"moment-fk n={cfg.n} eps={cfg.epsilon:g}: {est.value!r} "
          f"+- {est.stderr:.3e}")
    return _EXIT_OK


def _cmd_moment_spde(cfg: RunConfig, out: str, man) -> int:
    from .feynman_kac import write_moment_csv
    from .grids import GridSpec
    from .she import SolverSpec, estimate_moment_mc
    mol = _mollifier(cfg)
    coupling = beta_epsilon(cfg.theta, cfg.epsilon, mol)
    man.beta_audit = dict(coupling.audit)
    grid = GridSpec(N=cfg.grid_n, L=cfg.grid_l)
    solver = SolverSpec(grid=grid, dt=cfg.dt or cfg.epsilon**2 / 2.0)
    mid = cfg.grid_l / 2.0
    pairs = _test_pairs(cfg, center=(mid, mid))
    est = estimate_moment_mc(solver, mol, coupling, cfg.n, cfg.s, cfg.t,
                             pairs, n_samples=cfg.n_samples,
                             master_seed=cfg.master_seed, batch=cfg.batch)
    path = os.path.join(out, "moment_spde.csv")
    write_moment_csv(path, [_moment_row(cfg, est, "spde")])
    man.add_output(path)
    man.note("ess", est.diagnostics["ess"])
    man.note("image_bias_bound",
             math.exp(-cfg.grid_l**2 / (8.0 * (cfg.t - cfg.s))))
    print(f"moment-spde n={cfg.n} eps={cfg.epsilon:g}: {est.value!r} "
          f"+- {est.stderr:.3e}")
    return _EXIT_OK


def _cmd_verify_ck(cfg: RunConfig, out: str, man) -> int:
    from .acceptance import ck_battery
    res = ck_battery(master_seed=cfg.master_seed)
    path = os.path.join(out, "verify_ck.csv")
    _write_rows(path, ["scale_index", "residual"],
                [[i, r] for i, r in enumerate(res.residuals)])
    man.add_output(path)
    man.note("grid_identity_residual", res.grid_residual)
    man.note("fourth_moment_trend_ok", float(res.m4_decreasing))
    print(f"grid identity residual {res.grid_residual:.3e}; "
          f"mollified residuals {[f'{r:.3e}' for r in res.residuals]}")
    return _EXIT_OK if res.passed else _EXIT_FAIL


def _cmd_verify_scaling(cfg: RunConfig, out: str, man) -> int:
    tests = [(GaussianTest((0.2, -0.1), 0.5, amplitude=0.9),
              GaussianTest((-0.3, 0.4), 0.7, amplitude=1.2)),
             (GaussianTest((0.0, 0.3), 0.6, amplitude=1.0),
              GaussianTest((0.1, 0.1), 0.5, amplitude=0.8))]
    rows = []
    worst = 0.0
    for r in cfg.r_values:
        if r == 1.0:
            continue
        root = math.sqrt(r)
        scaled = [tuple(GaussianTest((g.center[0] * root,
                                      g.center[1] * root),
                                     g.sigma * root, g.amp)
                        for g in pair) for pair in tests]
        for t in cfg.scaling_ts:
            lhs = r**-2 * moment_inner(2, cfg.theta, r * t, scaled,
                                       m_max=1).value
            rhs = moment_inner(2, cfg.theta + math.log(r), t, tests,
                               m_max=1).value
            err = abs(lhs - rhs) / abs(rhs)
            worst = max(worst, err)
            rows.append([r, t, lhs, rhs, err])
    path = os.path.join(out, "verify_scaling.csv")
    _write_rows(path, ["r", "t", "scaled_value", "shifted_value",
                       "rel_error"], rows)
    man.add_output(path)
    man.note("max_rel_error", worst)
    print(f"scaling identity: max relative error {worst:.3e} over "
          f"{len(rows)} (r, t) combinations")
    return _EXIT_OK if worst <= 1e-6 else _EXIT_FAIL


def _cmd_decay_fit(cfg: RunConfig, out: str, man) -> int:
    import numpy as np
    from .delta_bose import central_moment_inner, norm_scaling_probe
    g = GaussianTest((0.0, 0.0), cfg.sigma)
    rows = []
    ts2 = [2.0**-k for k in range(10, 3, -1)]
    vals2 = [central_moment_inner(2, cfg.theta, t, [(g, g)] * 2,
                                  m_max=1).value for t in ts2]
    rows += [["central_n2", t, v] for t, v in zip(ts2, vals2)]
    slope2 = float(np.polyfit(np.log(ts2), np.log(vals2), 1)[0])
    ts4 = [2.0**-k for k in (10, 8, 6, 4)]
    vals4 = [central_moment_inner(4, cfg.theta, t, [(g, g)] * 4,
                                  m_max=3).value for t in ts4]
    rows += [["central_n4", t, v] for t, v in zip(ts4, vals4)]
    slope4 = float(np.polyfit(np.log(ts4), np.log(vals4), 1)[0])
    path = os.path.join(out, "decay_fit.csv")
    _write_rows(path, ["kind", "t", "value"], rows)
    man.add_output(path)
    probes = {
        "incoming": norm_scaling_probe("incoming", grid_points=96),
        "swapping": norm_scaling_probe("swapping", grid_points=96),
        "jop": norm_scaling_probe("jop", grid_points=512),
    }
    prows = [[k, p.slope,
              p.log_adjusted_slope if p.log_adjusted_slope is not None
              else ""] for k, p in probes.items()]
    ppath = os.path.join(out, "norm_probes.csv")
    _write_rows(ppath, ["op_kind", "slope", "log_adjusted_slope"], prows)
    man.add_output(ppath)
    man.note("central_n2_slope", slope2)
    man.note("central_n4_slope", slope4)
    for k, p in probes.items():
        man.note(f"{k}_slope", p.slope)
    print(f"central moment slopes: n=2 {slope2:.3f}, n=4 {slope4:.3f} "
          f"(theta={cfg.theta:g})")
    print("norm probe slopes: " + ", ".join(
        f"{k} {p.slope:.3f}" for k, p in probes.items()))
    return _EXIT_OK


def _cmd_accept(cfg: RunConfig, out: str, man) -> int:
    from .acceptance import run_acceptance
    results = run_acceptance(out, cfg)
    unexpected = [r for r in results if not r.passed and r.expected]
    known = [r for r in results if not r.passed and not r.expected]
    for r in results:
        status = "PASS" if r.passed else ("XFAIL" if not r.expected
                                          else "FAIL")
        print(f"[{status}] {r.name}: {r.detail}")
    path = os.path.join(out, "acceptance.json")
    man.add_output(path)
    for r in results:
        man.note(f"pass_{r.name}", float(r.passed))
    npass = sum(r.passed for r in results)
    line = f"{npass}/{len(results)} criteria passed"
    if known:
        line += (f" ({len(known)} known statistically unattainable rows "
                 "failed as documented)")
    print(line)
    return _EXIT_OK if not unexpected else _EXIT_FAIL


_COMMANDS = {
    "beta": (_cmd_beta, "coupling constant tables over the scale list"),
    "jfun": (_cmd_jfun, "j-function value tables"),
    "diagrams": (_cmd_diagrams, "diagram count tables"),
    "moment-exact": (_cmd_moment_exact, "semigroup moment inner products"),
    "moment-fk": (_cmd_moment_fk, "path-integral moment estimate"),
    "moment-spde": (_cmd_moment_spde, "field-solver moment estimate"),
    "verify-ck": (_cmd_verify_ck, "composition identity battery"),
    "verify-scaling": (_cmd_verify_scaling, "diffusive scaling identity"),
    "decay-fit": (_cmd_decay_fit, "short-time decay and norm exponents"),
    "accept": (_cmd_accept, "full acceptance suite"),
}

# ergonomic flags shared by all subcommands, mapped onto config keys
_FLAG_KEYS = {
    "seed": "run.master_seed",
    "theta": "coupling.theta",
    "eps": "coupling.epsilon",
    "n": "moment.n",
    "paths": "fk.n_paths",
    "samples": "spde.n_samples",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shflab",
        description=__doc__.split("\n\n")[0],
        epilog="Thread count comes from SHFLAB_THREADS (unset = all cores); "
               "set SHFLAB_THREADS=1 for bit-exact reproducibility.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, (_fn, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH",
                       help="key=value config file with [section] headers")
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", dest="overrides",
                       help="override one config key (repeatable)")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (default from config)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--theta", type=float, help="coupling offset")
        p.add_argument("--eps", type=float, help="smoothing scale")
        p.add_argument("--t", type=float,
                       help="end time (for jfun: the single probe time)")
        p.add_argument("--n", type=int, help="moment order")
        p.add_argument("--paths", type=int, help="path sample count")
        p.add_argument("--samples", type=int, help="field sample count")
        if name == "verify-scaling":
            p.add_argument("--r", type=float,
                           help="single scaling ratio to check")
    return parser


def _collect_overrides(args) -> list[str]:
    overrides = list(args.overrides)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if args.t is not None:
        if args.subcommand == "jfun":
            overrides.append(f"jfun.t_values={args.t}")
        else:
            overrides.append(f"times.t={args.t}")
    if args.out is not None:
        overrides.append(f"run.out_dir={args.out}")
    if getattr(args, "r", None) is not None:
        overrides.append(f"scaling.r_values={args.r}")
    return overrides


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _collect_overrides(args))
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return _EXIT_CONFIG
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    man = start_manifest(args.subcommand, cfg)
    handler = _COMMANDS[args.subcommand][0]
    try:
        code = handler(cfg, out, man)
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    write_manifest(man, os.path.join(out, f"{args.subcommand}-manifest.json"))
    return code


if __name__ == "__main__":
    sys.exit(main())
