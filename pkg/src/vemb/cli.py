"""Experiment driver: configuration, the three benchmark experiments, CSV
emission and field export.

Exit codes: 0 success, 2 configuration error, 3 mesh error, 4 solver error,
5 I/O error.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import io as vio
from .analysis import (ErrorAccumulator, ErrorEvaluator, convergence_rates,
                       nusselt_local, velocity_profile)
from .mesh import (MESH_FAMILIES, MeshError, generate_family, load_mesh,
                   save_mesh, validate)
from .problems import (accuracy_problem, cavity_problem, decay_problem,
                       small_viscosity_problem)
from .solver import (BoussinesqSolver, EnergyMonitor, NewtonError,
                     SolverError, TimeStepperConfig)

__all__ = ["ConfigError", "ExperimentConfig", "parse_config_file",
           "run_accuracy", "run_small_viscosity", "run_cavity", "run_custom",
           "main"]

EXPERIMENTS = ("accuracy", "small_viscosity", "cavity", "custom")


class ConfigError(Exception):
    """Invalid experiment configuration (carries the offending key)."""


@dataclass
class ExperimentConfig:
    experiment: str = "accuracy"
    mesh: str = "quad_uniform"        # family name or path to a mesh file
    n: int = 8
    k: int = 2
    l: int = 1
    nu: float = 1.0
    kappa: float = 1.0
    pr: float = 0.71
    ra: float = 1e4
    dt: float = None                  # experiment default when omitted
    t_final: float = 1.0
    newton_tol: float = 1e-8
    newton_max_iter: int = 25
    seed: int = 0
    out: str = "."
    init_mode: str = None             # experiment default when omitted
    steady: bool = False
    steady_tol: float = 1e-6
    levels: tuple = (4, 8, 16)
    schedule: str = "diagonal"        # diagonal: dt = 1/n; quadratic: dt = 1/n^2;
                                      # matrix: every (level, dt) pair from dts
    dts: tuple = (0.25, 0.125, 0.0625)
    nus: tuple = (1.0, 1e-1, 1e-2, 1e-3)
    samples: int = 1000

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.l < 1:
            raise ConfigError("l must be >= 1")
        if self.nu <= 0:
            raise ConfigError("nu must be positive")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.t_final <= 0:
            raise ConfigError("t_final must be positive")
        if self.experiment == "cavity":
            if self.pr <= 0 or self.ra <= 0:
                raise ConfigError("cavity needs positive pr and ra")
        if self.init_mode not in (None, "interpolate", "energy_project"):
            raise ConfigError("init_mode must be interpolate or energy_project")
        if self.schedule not in ("diagonal", "quadratic", "matrix"):
            raise ConfigError("schedule must be diagonal, quadratic or matrix")
        return self


_CONFIG_TYPES = {
    "experiment": str, "mesh": str, "n": int, "k": int, "l": int,
    "nu": float, "kappa": float, "pr": float, "ra": float, "dt": float,
    "t_final": float, "newton_tol": float, "newton_max_iter": int,
    "seed": int, "out": str, "init_mode": str, "steady": lambda s: s.lower() in ("1", "true", "yes"),
    "steady_tol": float,
    "levels": lambda s: tuple(int(v) for v in s.split(",")),
    "schedule": str,
    "dts": lambda s: tuple(float(v) for v in s.split(",")),
    "nus": lambda s: tuple(float(v) for v in s.split(",")),
    "samples": int,
}


def parse_config_file(path):
    """Flat key-value config: one `key = value` (or `key value`) per line."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, _, val = line.partition("=")
            else:
                key, _, val = line.partition(" ")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_TYPES[key](val)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: cannot parse value for {key!r}") from None
    return values


def _get_mesh(cfg, n=None):
    if cfg.mesh in MESH_FAMILIES:
        return generate_family(cfg.mesh, n if n is not None else cfg.n, cfg.seed)
    return load_mesh(cfg.mesh)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12e}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else _fmt(v) for v in row) + "\n")


def _stepper(cfg, dt):
    return TimeStepperConfig(
        dt=dt, t_final=cfg.t_final, newton_tol=cfg.newton_tol,
        newton_max_iter=cfg.newton_max_iter,
        steady_state_tol=cfg.steady_tol if cfg.steady else None)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_accuracy(cfg):
    """Convergence study with the manufactured ramp-up solution.

    The diagonal and quadratic schedules tie dt to h level by level and report
    successive rates; the matrix schedule runs every (level, dt) pair from
    ``dts`` (the full refinement table) with rates along matched h = dt rows
    only.  Writes convergence.csv.
    """
    os.makedirs(cfg.out, exist_ok=True)
    problem = accuracy_problem(nu=cfg.nu, kappa=cfg.kappa)

    def solve(n, dt):
        mesh = _get_mesh(cfg, n=n)
        solver = BoussinesqSolver(mesh, problem, k=cfg.k, l=cfg.l)
        stepper = _stepper(cfg, dt)
        acc = ErrorAccumulator(ErrorEvaluator(solver, problem.exact), dt)
        init = solver.set_initial_state(cfg.init_mode or "interpolate")
        solver.run_transient(init, stepper, observers=[acc])
        return mesh.h, dt, acc.finalize()

    results = []      # (h, dt, errors) in emission order
    diag_idx = []     # rows that form the matched h = dt sequence
    if cfg.schedule == "matrix":
        for n in cfg.levels:
            for dt in cfg.dts:
                results.append(solve(n, dt))
                if abs(dt - 1.0 / n) < 1e-12:
                    diag_idx.append(len(results) - 1)
    else:
        for n in cfg.levels:
            dt = cfg.dt if cfg.dt is not None else (
                1.0 / n if cfg.schedule == "diagonal" else 1.0 / n**2)
            results.append(solve(n, dt))
            diag_idx.append(len(results) - 1)
    keys = ("E_psi_L2H2", "E_theta_L2H1", "E_psi_LinfH1", "E_theta_LinfL2")
    rate_cols = {key: [None] * len(results) for key in keys}
    for key in keys:
        seq = [(results[i][0], results[i][2][key]) for i in diag_idx]
        for i, rate in zip(diag_idx[1:], convergence_rates(seq)):
            rate_cols[key][i] = rate
    rows = []
    for i, (h, dt, errs) in enumerate(results):
        rows.append([h, dt] + [errs[k] for k in keys]
                    + [rate_cols[k][i] for k in keys])
    header = ["h", "dt"] + list(keys) + [f"rate_{k}" for k in keys]
    _write_csv(os.path.join(cfg.out, "convergence.csv"), header, rows)
    return results


def run_small_viscosity(cfg):
    """Error-versus-viscosity sweep; Newton failures are recorded, not fatal."""
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    results = []
    for n in cfg.levels:
        mesh = _get_mesh(cfg, n=n)
        dt = cfg.dt if cfg.dt is not None else 1.0 / 16.0
        for nu in cfg.nus:
            problem = small_viscosity_problem(nu, kappa=cfg.kappa)
            solver = BoussinesqSolver(mesh, problem, k=cfg.k, l=cfg.l)
            stepper = _stepper(cfg, dt)
            acc = ErrorAccumulator(ErrorEvaluator(solver, problem.exact), dt)
            init = solver.set_initial_state(cfg.init_mode or "interpolate")
            try:
                solver.run_transient(init, stepper, observers=[acc])
                errs = acc.finalize()
                failed = False
            except NewtonError:
                errs = {k: None for k in ("E_psi_L2H2", "E_theta_L2H1",
                                          "E_psi_LinfH1", "E_theta_LinfL2")}
                failed = True
            rows.append([mesh.h, dt, nu, errs["E_psi_L2H2"], errs["E_theta_L2H1"],
                         errs["E_psi_LinfH1"], errs["E_theta_LinfL2"], int(failed)])
            results.append((mesh.h, dt, nu, errs, failed))
    header = ["h", "dt", "nu", "E_psi_L2H2", "E_theta_L2H1",
              "E_psi_LinfH1", "E_theta_LinfL2", "newton_failed"]
    _write_csv(os.path.join(cfg.out, "small_viscosity.csv"), header, rows)
    return results


def run_cavity(cfg):
    """Differentially heated cavity: velocity maxima, Nusselt profiles, fields.

    The reported maxima follow the benchmark convention: the vertical velocity
    component is maximized over the horizontal midline y = 0.5 and the
    horizontal component over the vertical midline x = 0.5.
    """
    os.makedirs(cfg.out, exist_ok=True)
    problem = cavity_problem(prandtl=cfg.pr, rayleigh=cfg.ra)
    mesh = _get_mesh(cfg)
    solver = BoussinesqSolver(mesh, problem, k=cfg.k, l=cfg.l)
    dt = cfg.dt if cfg.dt is not None else 1e-3
    stepper = _stepper(cfg, dt)
    init = solver.set_initial_state(cfg.init_mode or "energy_project")
    summary = solver.run_transient(init, stepper)
    state = summary.final_state

    horiz = velocity_profile(solver, state, "horizontal_midline", cfg.samples)
    vert = velocity_profile(solver, state, "vertical_midline", cfg.samples)
    _write_csv(os.path.join(cfg.out, "profile_horizontal_midline.csv"),
               ["s", "value"], list(zip(horiz.s, horiz.u2)))
    _write_csv(os.path.join(cfg.out, "profile_vertical_midline.csv"),
               ["s", "value"], list(zip(vert.s, vert.u1)))
    for wall in ("left", "right"):
        s, nu_vals = nusselt_local(solver, state, wall, cfg.samples)
        _write_csv(os.path.join(cfg.out, f"nusselt_{wall}.csv"),
                   ["s", "Nu"], list(zip(s, nu_vals)))
    report = {
        "ra": cfg.ra, "pr": cfg.pr, "h": mesh.h, "dt": dt,
        "steps": summary.steps, "steady": int(summary.steady),
        "t_end": state.t,
        "max_vertical_velocity": horiz.max_u2,
        "vertical_velocity_at_x": horiz.max_u2_at,
        "max_horizontal_velocity": vert.max_u1,
        "horizontal_velocity_at_y": vert.max_u1_at,
    }
    _write_csv(os.path.join(cfg.out, "benchmark.csv"),
               list(report.keys()), [list(report.values())])
    vio.export_fields(solver, state, os.path.join(cfg.out, "fields.vtk"),
                      title=f"cavity Ra={cfg.ra:g}")
    vio.save_checkpoint(os.path.join(cfg.out, "final.ckpt"), solver, state)
    return report, solver, state


def run_custom(cfg):
    """Free-decay run (no forcing, no buoyancy) with smooth initial data.

    Useful as a stability probe: writes the discrete energy history and the
    final fields.
    """
    os.makedirs(cfg.out, exist_ok=True)
    problem = decay_problem(nu=cfg.nu, kappa=cfg.kappa)
    mesh = _get_mesh(cfg)
    solver = BoussinesqSolver(mesh, problem, k=cfg.k, l=cfg.l)
    dt = cfg.dt if cfg.dt is not None else cfg.t_final / 16.0
    stepper = _stepper(cfg, dt)
    init = solver.set_initial_state(cfg.init_mode or "interpolate")
    monitor = EnergyMonitor(solver, initial=init)
    summary = solver.run_transient(init, stepper, observers=[monitor])
    _write_csv(os.path.join(cfg.out, "energy.csv"), ["t", "energy"],
               list(zip(monitor.times, monitor.energies)))
    vio.export_fields(solver, summary.final_state, os.path.join(cfg.out, "fields.vtk"),
                      title="free decay")
    return monitor


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _build_parser():
    ap = argparse.ArgumentParser(prog="vemb", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="flat key-value config file; flags override")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--mesh", help="mesh family name or mesh file path")
    run.add_argument("--n", type=int)
    run.add_argument("--k", type=int)
    run.add_argument("--l", type=int)
    run.add_argument("--nu", type=float)
    run.add_argument("--kappa", type=float)
    run.add_argument("--pr", type=float)
    run.add_argument("--ra", type=float)
    run.add_argument("--dt", type=float)
    run.add_argument("--t-final", dest="t_final", type=float)
    run.add_argument("--newton-tol", dest="newton_tol", type=float)
    run.add_argument("--newton-max-iter", dest="newton_max_iter", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--init-mode", dest="init_mode",
                     choices=("interpolate", "energy_project"))
    run.add_argument("--steady", action="store_true", default=None,
                     help="stop early once |increment|_inf/dt < steady tolerance")
    run.add_argument("--steady-tol", dest="steady_tol", type=float)
    run.add_argument("--levels", type=lambda s: tuple(int(v) for v in s.split(",")))
    run.add_argument("--schedule", choices=("diagonal", "quadratic"))
    run.add_argument("--nus", type=lambda s: tuple(float(v) for v in s.split(",")))
    run.add_argument("--samples", type=int)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = msub.add_parser("gen", help="generate a mesh family member")
    gen.add_argument("--family", required=True, choices=MESH_FAMILIES)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    val = sub.add_parser("validate", help="check mesh shape assumptions")
    val.add_argument("path")
    val.add_argument("--rho", type=float, default=0.05)
    return ap


def _config_from_args(args):
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for key in _CONFIG_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return ExperimentConfig(**values).validate()


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            runner = {"accuracy": run_accuracy,
                      "small_viscosity": run_small_viscosity,
                      "cavity": run_cavity,
                      "custom": run_custom}[cfg.experiment]
            runner(cfg)
        elif args.command == "mesh":
            mesh = generate_family(args.family, args.n, args.seed)
            save_mesh(mesh, args.out)
        elif args.command == "validate":
            mesh = load_mesh(args.path)
            report = validate(mesh, args.rho)
            print(report.summary())
            return 0 if report.ok else 4
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return 3
    except (SolverError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
