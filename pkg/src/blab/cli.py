"""Command line: ``blab <command> --config <file> [--out <dir>] [--workers N] [--seed S]``.

Exit status: 0 all assertions pass, 1 a suite assertion failed (or the
requested run is refused), 2 the configuration could not be parsed, 3 an
output could not be written.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import energy, geometry, reduction, suites

SCHEMA_VERSION = "1.0"
COMMANDS = ("verify-identities", "fit-expansion", "reduce", "continuation")
SECTIONS = {
    "model": {"kind", "m", "a0", "h0", "a_hess", "a_grad", "rho", "cutoff_radius", "seed", "scale",
              "fiber_dim", "omega0", "omega_grad", "omega_hess"},
    "ladder": {"eps", "k_min", "k_max", "step", "signs"},
    "fit": {"t", "dh", "eta"},
    "reduce": {"t_interval", "newton_tol", "fd_step", "hess_step", "convention"},
    "grid": {"degree", "inner_elements", "outer_elements", "quad_points"},
    "tolerances": None,
    "verify": {"dims", "moment_pairs", "convention", "residual_dims"},
}
DEFAULT_TOLERANCES = {
    "bubble_residual": 1e-10, "moment_quadrature": 1e-10, "moment_recurrence": 1e-12,
    "identity": 1e-9, "curvature": 1e-12, "a_m": 1e-6, "log_ratio": 0.05, "h_shift": 0.05,
    "t_relative": 0.10, "correction_variation": 2.0,
}

log = logging.getLogger("blab")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    model: dict
    m: int
    eps_ladder: list
    t_interval: tuple = None
    tolerances: dict = field(default_factory=dict)
    output_dir: Path = Path("blab-out")
    sections: dict = field(default_factory=dict)

    def section(self, name) -> dict:
        return dict(self.sections.get(name, {}))


def load_config(path, command: str, out=None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    return parse_config(raw, command, out)


def parse_config(raw: dict, command: str, out=None) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    for name, body in raw.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
        allowed = SECTIONS[name]
        if allowed is not None:
            extra = set(body) - allowed
            if extra:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    model = dict(raw.get("model", {}))
    if "m" not in model:
        raise ConfigError("[model] needs the dimension m")
    try:
        m = int(model["m"])
    except (TypeError, ValueError):
        raise ConfigError("[model] m must be an integer") from None
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in raw.get("tolerances", {}).items():
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"tolerance {k} must be a positive number")
        tol[k] = float(v)
    ladder = _ladder(raw.get("ladder", {}), command)
    red = raw.get("reduce", {})
    t_int = red.get("t_interval")
    if t_int is not None:
        if len(t_int) != 2 or not 0 < t_int[0] < t_int[1]:
            raise ConfigError("t_interval must be [alpha, beta] with 0 < alpha < beta")
        t_int = (float(t_int[0]), float(t_int[1]))
    out_dir = Path(out) if out is not None else Path("blab-out")
    return RunConfig(command, model, m, ladder, t_int, tol, out_dir, raw)


def _ladder(sec: dict, command: str):
    if "eps" in sec:
        eps = [float(e) for e in sec["eps"]]
    else:
        k_min = sec.get("k_min", 6 if command == "fit-expansion" else 10)
        k_max = sec.get("k_max", 14 if command == "fit-expansion" else 16)
        signs = sec.get("signs", [1, -1] if command == "fit-expansion" else [1])
        eps = energy.eps_ladder(k_min, k_max, float(sec.get("step", 1.0)), tuple(int(s) for s in signs))
    if any(e == 0 for e in eps):
        raise ConfigError("eps ladder contains 0")
    # strictly decreasing |eps| within each sign
    for s in (1, -1):
        mags = [abs(e) for e in eps if np.sign(e) == s]
        if any(b >= a for a, b in zip(mags, mags[1:])):
            raise ConfigError("eps ladder must be strictly decreasing in |eps| for each sign")
    if command in ("reduce", "continuation") and len({np.sign(e) for e in eps}) > 1:
        raise ConfigError("reduction ladders must have a single sign")
    return eps


def build_model(cfg: RunConfig, seed=None):
    table = dict(cfg.model)
    if seed is not None and table.get("kind") == "random_jet" and "seed" not in table:
        table["seed"] = seed
    try:
        return geometry.model_from_config(table)
    except (geometry.ModelError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid [model]: {exc}") from None


# output ----------------------------------------------------------------------------------

class Outputs:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.written = []

    def ensure(self):
        self.root.mkdir(parents=True, exist_ok=True)

    def text(self, name, content):
        p = self.root / name
        p.write_text(content)
        self.written.append(name)

    def json(self, name, obj):
        self.text(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def csv(self, name, header, rows):
        p = self.root / name
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
        self.written.append(name)

    def svg(self, name, series, xlabel, ylabel, logx=False, logy=False, title=""):
        import matplotlib
        matplotlib.use("Agg")
        from matplotlib import pyplot as plt

        plt.rcParams["svg.hashsalt"] = "blab"
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, x, y in series:
            ax.plot(x, y, "o-", label=label, ms=3)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(self.root / name, format="svg", metadata={"Date": None})
        plt.close(fig)
        self.written.append(name)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serialisable: {type(x)}")


# commands -----------------------------------------------------------------------------------

def cmd_verify(cfg: RunConfig, out: Outputs, workers: int, seed: int):
    sec = cfg.section("verify")
    tol = cfg.tolerances
    conv = sec.get("convention", "stated")
    checks = []
    checks += suites.bubble_suite(tuple(sec.get("residual_dims", (5, 6, 9, 12))), tol=tol["bubble_residual"])
    checks += suites.moment_suite(int(sec.get("moment_pairs", 20)), seed, tol["moment_quadrature"],
                                  tol["moment_recurrence"])
    checks += suites.identity_suite(cfg.m, tol["identity"], conv)
    checks += suites.curvature_suite(tuple(sec.get("dims", (3, cfg.m))), tol["curvature"])
    checks += suites.regime_suite(cfg.m)
    out.csv("identities.csv", ["name", "module", "value", "tol", "passed"],
            [(c.name, c.module, float(c.value), c.tol, c.passed) for c in checks])
    return checks, {"convention": conv}


def cmd_fit(cfg: RunConfig, out: Outputs, workers: int, seed: int):
    sec = cfg.section("fit")
    tol = cfg.tolerances
    model = build_model(cfg, seed)
    t = float(sec.get("t", 1.0))
    res = energy.h_shift_test(model, t, cfg.eps_ladder, float(sec.get("dh", 1.0)),
                              grid_kw=cfg.section("grid"), workers=workers)
    rep = res.base
    closed = energy.closed_form_coeffs(model.m)
    a_err = abs(rep.a_m - closed.a_m) / closed.a_m
    ratio = res.log_ratio
    ratio_err = abs(ratio - energy.log_coefficient(model.m)) / energy.log_coefficient(model.m)
    checks = [
        suites.Check("a_m", "reduced_energy", a_err, tol["a_m"], a_err <= tol["a_m"],
                     f"fitted {rep.a_m:.12g}, closed form {closed.a_m:.12g}"),
        suites.Check("log_ratio", "reduced_energy", ratio_err, tol["log_ratio"], ratio_err <= tol["log_ratio"],
                     f"b_m/d_m = {ratio:.8g}"),
        suites.Check("h_shift", "reduced_energy", res.relative_error, tol["h_shift"],
                     res.relative_error <= tol["h_shift"],
                     f"delta |eps| coefficient {res.delta_abs_coefficient:.8g}, predicted {res.predicted:.8g}"),
    ]
    out.text("expansion.csv", rep.to_csv())
    out.text("expansion_shifted.csv", res.shifted.to_csv())
    pos = rep.eps > 0
    out.svg("energy.svg", [("eps > 0", rep.eps[pos], rep.energies[pos]),
                           ("eps < 0", -rep.eps[~pos], rep.energies[~pos])],
            "|eps|", "J_eps(W)", logx=True, title="energy of the ansatz")
    data = {"fit": rep.summary(), "shifted_fit": res.shifted.summary(), "d_m": res.d_m,
            "closed_form": {"a_m": closed.a_m, "b_m": closed.b_m, "d_m": closed.d_m}}
    return checks, data


def _reduce_job(args):
    model, eps, kw = args
    return reduction.reduced_solve(model, eps, **kw)


def _reduce_kwargs(cfg: RunConfig):
    sec = cfg.section("reduce")
    kw = {"grid_kw": cfg.section("grid"), "convention": sec.get("convention", "stated")}
    for k in ("newton_tol", "fd_step", "hess_step"):
        if k in sec:
            kw[k] = float(sec[k])
    if cfg.t_interval is not None:
        kw["t_interval"] = cfg.t_interval
    return kw


def _reduction_outputs(cfg, out, model, sols, checks):
    tol = cfg.tolerances
    eps = np.array([s.eps for s in sols])
    gauge = np.abs(eps) * np.abs(np.log(np.abs(eps)))
    cnorm = np.array([s.state.correction_norm / s.state.ansatz.norm_H() for s in sols])
    lam = np.array([float(np.sum(np.abs(s.state.multipliers))) for s in sols])
    reports = [reduction.verify_solution(model, s.eps, s.solution) for s in sols]
    rows = []
    for s, g, c, l, r in zip(sols, gauge, cnorm, lam, reports):
        rows.append((s.eps, s.t_eps, s.t0, s.relative_t_error, c, g, l, r.residual, s.state.iterations,
                     s.state.max_contraction, r.width_ratio))
    out.csv("ladder.csv", ["eps", "t_eps", "t0", "t_rel_error", "correction_norm", "eps_abs_log",
                           "multiplier_sum", "residual", "iterations", "max_contraction", "width_ratio"], rows)
    smallest = sols[int(np.argmin(np.abs(eps)))]
    grid = smallest.solution.grid
    out.csv("cross_section.csv", ["radius", "u", "W"],
            zip(grid.nodes, smallest.solution.values, smallest.state.ansatz.values))
    out.svg("t_eps.svg", [("t_eps", np.abs(eps), [s.t_eps for s in sols]),
                          ("t0", np.abs(eps), [s.t0 for s in sols])], "|eps|", "t", logx=True)
    out.svg("correction.svg", [("||Phi||_H / ||W||_H", gauge, cnorm)], "|eps| |log|eps||", "relative norm",
            logx=True, logy=True)
    sel = grid.nodes < 10 * grid.delta
    out.svg("cross_section.svg", [("u = W + Phi", grid.nodes[sel], smallest.solution.values[sel]),
                                  ("W", grid.nodes[sel], smallest.state.ansatz.values[sel])], "rho", "u")
    contraction = max(s.state.max_contraction for s in sols)
    checks.append(suites.Check("contraction", "ls_solver", contraction, 1.0, contraction < 1.0))
    t_err = smallest.relative_t_error
    checks.append(suites.Check("t_eps_vs_t0", "ls_solver", t_err, tol["t_relative"], t_err < tol["t_relative"],
                               f"t_eps={smallest.t_eps:.8g} t0={smallest.t0:.8g} at eps={smallest.eps:.3g}"))
    refinement = reduction.residual_refinement(model, smallest.eps, smallest.t_eps)
    decreasing = all(b < a for a, b in zip(refinement, refinement[1:]))
    checks.append(suites.Check("pde_residual_refinement", "ls_solver", refinement[-1], refinement[0], decreasing,
                               "residuals " + ", ".join(f"{r:.3g}" for r in refinement)))
    rep = reports[int(np.argmin(np.abs(eps)))]
    checks.append(suites.Check("argmax_at_origin", "ls_solver", rep.argmax_radius, rep.cell_size,
                               rep.argmax_radius <= rep.cell_size))
    if len(sols) > 1:
        ratio = cnorm / gauge
        var = float(ratio.max() / ratio.min())
        checks.append(suites.Check("correction_bound", "ls_solver", var, tol["correction_variation"],
                                   var < tol["correction_variation"]))
    return {"runs": [s.manifest() for s in sols], "reports": [r.to_dict() for r in reports],
            "residual_refinement": refinement,
            "theta": energy.theta(model), "theta_corrected": energy.theta(model, "corrected")}


def _regime_guard(cfg, model, checks):
    conv = cfg.section("reduce").get("convention", "stated")
    th = energy.theta(model, conv)
    sign = 1 if cfg.eps_ladder[0] > 0 else -1
    if not energy.regime_allows(th, sign):
        checks.append(suites.Check("regime", "reduced_energy", th, 0.0, False,
                                   f"regime mismatch: Theta={th:.6g} with sign(eps)={sign:+d}; refusing to solve"))
        return False
    return True


def cmd_reduce(cfg: RunConfig, out: Outputs, workers: int, seed: int):
    model = build_model(cfg, seed)
    checks = []
    if not _regime_guard(cfg, model, checks):
        return checks, {"theta": energy.theta(model)}
    kw = _reduce_kwargs(cfg)
    jobs = [(model, e, kw) for e in cfg.eps_ladder]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            sols = list(pool.map(_reduce_job, jobs))
    else:
        sols = [_reduce_job(j) for j in jobs]
    return checks, _reduction_outputs(cfg, out, model, sols, checks)


def cmd_continuation(cfg: RunConfig, out: Outputs, workers: int, seed: int):
    """Sequential ladder; each Newton solve starts from the previous t_eps."""
    model = build_model(cfg, seed)
    checks = []
    if not _regime_guard(cfg, model, checks):
        return checks, {"theta": energy.theta(model)}
    kw = _reduce_kwargs(cfg)
    sols, t_start = [], None
    for e in cfg.eps_ladder:
        sol = reduction.reduced_solve(model, e, t_start=t_start, **kw)
        sols.append(sol)
        t_start = sol.t_eps
    data = _reduction_outputs(cfg, out, model, sols, checks)
    lad = reduction.multiplier_ladder(model, cfg.eps_ladder, sols[0].t0, **cfg.section("grid"))
    data["multiplier_exponent"] = lad.multiplier_exponent()
    data["multiplier_sums"] = lad.multiplier_sums()
    out.svg("multipliers.svg", [("sum |lambda_j|", np.abs(cfg.eps_ladder), lad.multiplier_sums())],
            "|eps|", "sum |lambda_j|", logx=True, logy=True)
    return checks, data


HANDLERS = {"verify-identities": cmd_verify, "fit-expansion": cmd_fit, "reduce": cmd_reduce,
            "continuation": cmd_continuation}


def configure_logging():
    level = os.environ.get("BLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    configure_logging()
    parser = argparse.ArgumentParser(prog="blab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, args.command, args.out)
    except ConfigError as exc:
        print(f"blab: config error: {exc}", file=sys.stderr)
        return 2
    out = Outputs(cfg.output_dir)
    try:
        out.ensure()
    except OSError as exc:
        print(f"blab: cannot create output directory: {exc}", file=sys.stderr)
        return 3
    start = time.perf_counter()
    try:
        checks, data = HANDLERS[args.command](cfg, out, max(1, args.workers), args.seed)
    except ConfigError as exc:
        print(f"blab: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"blab: I/O error: {exc}", file=sys.stderr)
        return 3
    except (energy.RegimeError, reduction.NewtonError, reduction.ConvergenceError,
            reduction.NonContractionError, reduction.SymmetryError) as exc:
        checks, data = [suites.Check(type(exc).__name__, "ls_solver", math.nan, 0.0, False, str(exc))], {}
    summary = {"schema_version": SCHEMA_VERSION, "command": args.command, "seed": args.seed,
               "config": cfg.sections, "checks": [c.to_dict() for c in checks],
               "passed": suites.all_passed(checks), "results": data}
    try:
        out.json("summary.json", summary)
        out.json("timing.json", {"runtime_seconds": time.perf_counter() - start})
    except OSError as exc:
        print(f"blab: I/O error: {exc}", file=sys.stderr)
        return 3
    for c in suites.failures(checks):
        print(f"FAIL [{c.module}] {c.name}: value={c.value:.6g} tol={c.tol:.3g} {c.detail}", file=sys.stderr)
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
