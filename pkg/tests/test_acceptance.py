"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines.  The full-reproduction checks (h=1/64 cavity at Ra=1e6) only run when
VEMB_FULL=1 is set; everything else runs by default.  Criterion 6 is split
into its three clauses so each is reported separately.
"""

import os

import numpy as np
import pytest

from vemb import forms
from vemb.analysis import (ErrorAccumulator, ErrorEvaluator, fit_rate,
                           velocity_profile)
from vemb.mesh import MESH_FAMILIES, generate_family
from vemb.polybasis import polygon_quadrature, space_dim
from vemb.problems import (accuracy_problem, cavity_problem, decay_problem,
                           small_viscosity_problem)
from vemb.solver import (BoussinesqSolver, EnergyMonitor, NewtonError,
                         TimeStepperConfig)
from vemb.stream_element import StreamElement
from vemb.temp_element import TempElement

RNG = np.random.default_rng(2024)
FULL = os.environ.get("VEMB_FULL", "") == "1"


def report(number, ok, detail):
    print(f"\nACCEPTANCE CRITERION {number}: {'PASS' if ok else 'FAIL'} — {detail}")
    return ok


def sample_cells(mesh, count=5):
    step = max(1, mesh.num_cells // count)
    return list(range(0, mesh.num_cells, step))[:count]


# -- criterion 1: projector consistency --------------------------------------------

def test_criterion_1_projector_consistency():
    worst = 0.0
    for family in MESH_FAMILIES:
        mesh = generate_family(family, 4, seed=7)
        for ic in sample_cells(mesh):
            for k in (2, 3):
                el = StreamElement(mesh, ic, k)
                P = el.projectors
                for _ in range(20):
                    c = RNG.standard_normal(el.nP)
                    scale = np.abs(c).max()
                    dofs = el.polynomial_dofs(c)
                    worst = max(worst, np.abs(P.PiD @ dofs - c).max() / scale)
                    worst = max(worst, np.abs(P.PiC @ dofs - c).max() / scale)
                    d2, d1 = space_dim(k - 2), space_dim(k - 1)
                    worst = max(worst, np.abs(
                        P.PiLap @ dofs - (el.tables.lap @ c)[:d2]).max() / scale)
                    worst = max(worst, np.abs(
                        P.PiGrad[0] @ dofs - (el.tables.dx @ c)[:d1]).max() / scale)
                    worst = max(worst, np.abs(
                        P.PiCurl[1] @ dofs + (el.tables.dx @ c)[:d1]).max() / scale)
            for l in (1, 2):
                el = TempElement(mesh, ic, l)
                P = el.projectors
                for _ in range(20):
                    c = RNG.standard_normal(el.nP)
                    scale = np.abs(c).max()
                    dofs = el.polynomial_dofs(c)
                    worst = max(worst, np.abs(P.PiNabla @ dofs - c).max() / scale)
                    worst = max(worst, np.abs(P.PiL2_l @ dofs - c).max() / scale)
                    d1 = space_dim(l - 1)
                    worst = max(worst, np.abs(
                        P.PiGradT[1] @ dofs - (el.tables.dy @ c)[:d1]).max() / scale)
    ok = worst <= 1e-11
    assert report(1, ok, f"worst relative projector error {worst:.2e} (tol 1e-11)")


# -- criterion 2: discrete-form structure -------------------------------------------

def test_criterion_2_form_structure():
    worst_cons = worst_bf = worst_skew = 0.0
    for family in MESH_FAMILIES:
        mesh = generate_family(family, 4, seed=3)
        for ic in sample_cells(mesh, count=3):
            k, l = 2, 1
            quad = polygon_quadrature(mesh.cell_vertices(ic), 2 * k + 2)
            se = StreamElement(mesh, ic, k, quad)
            te = TempElement(mesh, ic, l, quad)
            MF, AF = forms.local_MF_AF(se)
            MT, AT = forms.local_MT_AT(te)
            cq = RNG.standard_normal(se.nP)
            v = RNG.standard_normal(se.ndof)
            dq = se.polynomial_dofs(cq)
            ref = cq @ se.hess_gram @ (se.projectors.PiD @ v)
            scale = max(1.0, abs(ref))
            worst_cons = max(worst_cons, abs(dq @ AF @ v - ref) / scale)
            ref = cq @ se.grad_gram @ (se.projectors.PiC @ v)
            worst_cons = max(worst_cons, abs(dq @ MF @ v - ref) / max(1.0, abs(ref)))
            cqt = RNG.standard_normal(te.nP)
            w = RNG.standard_normal(te.ndof)
            dqt = te.polynomial_dofs(cqt)
            ref = cqt @ te.grad_gram @ (te.projectors.PiNabla @ w)
            worst_cons = max(worst_cons, abs(dqt @ AT @ w - ref) / max(1.0, abs(ref)))
            ref = cqt @ te.mass @ (te.projectors.PiL2_l @ w)
            worst_cons = max(worst_cons, abs(dqt @ MT @ w - ref) / max(1.0, abs(ref)))
            conv = forms.ConvectionData(se, te)
            wsum = np.abs(conv.weights).sum()
            for _ in range(100):
                z = RNG.standard_normal(se.ndof)
                p = RNG.standard_normal(se.ndof)
                val = p @ conv.bf_matrix(z) @ p
                scale = (wsum * np.abs(conv.lap).max() * np.abs(conv.grad).max() ** 2
                         * np.abs(z).max() * np.abs(p).max() ** 2)
                worst_bf = max(worst_bf, abs(val) / max(scale, 1e-30))
                M = conv.bskew_matrix(RNG.standard_normal(se.ndof))
                worst_skew = max(worst_skew, np.abs(M + M.T).max())
    ok = worst_cons <= 1e-11 and worst_bf <= 1e-12 and worst_skew == 0.0
    assert report(2, ok, f"consistency {worst_cons:.2e} (tol 1e-11), "
                         f"B_F(z;p,p) {worst_bf:.2e}·scale (tol 1e-12), "
                         f"skew asymmetry {worst_skew:.1e} (exact)")


# -- criterion 3: dof-count oracle ----------------------------------------------------

def test_criterion_3_dof_counts():
    expected = {4: 36, 8: 196, 16: 900, 32: 3844}
    got = {}
    prob = accuracy_problem()
    for n, ref in expected.items():
        mesh = generate_family("quad_uniform", n)
        solver = BoussinesqSolver(mesh, prob)
        got[n] = solver.imap.n_free
    ok = got == expected
    assert report(3, ok, f"free dofs {got} vs reference {expected}")


# -- criterion 4: jacobian check -------------------------------------------------------

def test_criterion_4_jacobian_fd():
    mesh = generate_family("triangular", 4)
    solver = BoussinesqSolver(mesh, accuracy_problem())
    imap = solver.imap
    psi = 0.2 * RNG.standard_normal(imap.n_stream)
    theta = 0.2 * RNG.standard_normal(imap.n_temp)
    dt, t = 0.1, 0.4
    fs, ft = imap.free_stream, imap.free_temp
    C = solver.assemble_coupling(t)
    J = solver._free_jacobian(psi, theta, dt, C)
    dpsi = RNG.standard_normal(imap.n_stream)
    dtheta = RNG.standard_normal(imap.n_temp)
    dpsi[imap.stream_dirichlet] = 0.0
    dtheta[imap.temp_dirichlet] = 0.0
    Jd = J @ np.concatenate([dpsi[fs], dtheta[ft]])

    def res(p, th):
        Rp, Rt = solver.residual(p, th, np.zeros_like(p), np.zeros_like(th), dt, t)
        return np.concatenate([Rp[fs], Rt[ft]])

    r0 = res(psi, theta)
    eps_list = (1e-4, 1e-5, 1e-6, 1e-7)
    errors = [np.abs((res(psi + e * dpsi, theta + e * dtheta) - r0) / e - Jd).max()
              for e in eps_list]
    ratios = [e0 / e1 for e0, e1 in zip(errors[:-1], errors[1:])]
    ok = all(abs(r - 10.0) <= 3.5 for r in ratios)
    assert report(4, ok, f"fd errors {['%.2e' % e for e in errors]} "
                         f"scale linearly in eps (ratios {['%.1f' % r for r in ratios]})")


# -- criterion 5: unconditional energy stability ----------------------------------------

def test_criterion_5_energy_stability():
    mesh = generate_family("voronoi", 8, seed=7)
    prob = decay_problem()
    solver = BoussinesqSolver(mesh, prob)
    init = solver.set_initial_state("interpolate")
    h = mesh.h
    ok = True
    details = []
    for dt in (h, 10.0 * h):
        cfg = TimeStepperConfig(dt=dt, t_final=20 * dt)
        monitor = EnergyMonitor(solver, initial=init)
        solver.run_transient(init, cfg, observers=[monitor])
        e = np.array(monitor.energies)
        growth = (np.diff(e) / e[0]).max()
        monotone = np.all(np.diff(e) <= 1e-12 * e[0])
        ok = ok and monotone
        details.append(f"dt={dt:.3f}: max relative growth {growth:.2e}")
    assert report(5, ok, "; ".join(details))


# -- criterion 6: convergence rates -------------------------------------------------------

_CONV_CACHE = {}


@pytest.fixture(scope="module")
def convergence_data():
    """Lazy per-(family, schedule) refinement study over n = 4, 8, 16, 32."""

    def get(family, schedule):
        key = (family, schedule)
        if key not in _CONV_CACHE:
            prob = accuracy_problem()
            rows = []
            for n in (4, 8, 16, 32):
                mesh = generate_family(family, n)
                solver = BoussinesqSolver(mesh, prob)
                dt = 1.0 / n if schedule == "diagonal" else 1.0 / n**2
                cfg = TimeStepperConfig(dt=dt, t_final=1.0)
                acc = ErrorAccumulator(ErrorEvaluator(solver, prob.exact), dt)
                solver.run_transient(solver.set_initial_state("interpolate"),
                                     cfg, observers=[acc])
                rows.append((1.0 / n, dt, acc.finalize()))
            _CONV_CACHE[key] = rows
        return _CONV_CACHE[key]

    return get


def test_criterion_6_diagonal_rates(convergence_data):
    ok = True
    details = []
    for family in ("triangular", "quad_uniform"):
        rows = convergence_data(family, "diagonal")
        for key in ("E_psi_L2H2", "E_theta_L2H1"):
            rate = fit_rate([(h, e[key]) for h, _, e in rows])
            inside = 0.85 <= rate <= 1.15
            ok = ok and inside
            details.append(f"{family}/{key}: {rate:.3f}")
    assert report("6a", ok, "diagonal rates " + ", ".join(details)
                  + " (window [0.85, 1.15])"), (
        "Observed diagonal rates sit above the stated window at the mandated "
        "coarse levels; the reference table's own diagonal shows the same "
        "pre-asymptotic behavior (see decisions ledger).")


def test_criterion_6_quadratic_rates(convergence_data):
    ok = True
    details = []
    for family in ("triangular", "quad_uniform"):
        rows = convergence_data(family, "quadratic")
        for key in ("E_psi_LinfH1", "E_theta_LinfL2"):
            rate = fit_rate([(h, e[key]) for h, _, e in rows])
            inside = 1.7 <= rate <= 2.3
            ok = ok and inside
            details.append(f"{family}/{key}: {rate:.3f}")
    assert report("6b", ok, "dt~h^2 rates " + ", ".join(details)
                  + " (window [1.7, 2.3])")


def test_criterion_6_absolute_magnitudes(convergence_data):
    rows = convergence_data("quad_uniform", "diagonal")
    row = next(r for r in rows if abs(r[0] - 0.125) < 1e-12)
    refs = {"E_psi_L2H2": 8.42107e-3, "E_theta_L2H1": 7.88174e-3}
    ok = True
    details = []
    for key, ref in refs.items():
        val = row[2][key]
        factor = max(val / ref, ref / val)
        ok = ok and factor <= 3.0
        details.append(f"{key}: {val:.4e} vs {ref:.4e} (x{factor:.2f})")
    assert report("6c", ok, "; ".join(details) + " (within factor 3)")


# -- criterion 7: cavity benchmark ------------------------------------------------------------

# reference maxima (vertical on y=0.5, horizontal on x=0.5) and tolerance
CAVITY_REFS = {1e4: (19.56, 16.15, 0.05), 1e5: (68.46, 34.80, 0.06),
               1e6: (216.37, 65.91, 0.08)}


def _run_cavity_case(ra, n, steady_exit):
    mesh = generate_family("quad_uniform", n)
    solver = BoussinesqSolver(mesh, cavity_problem(rayleigh=ra))
    cfg = TimeStepperConfig(dt=1e-3, t_final=1.0,
                            steady_state_tol=1e-6 if steady_exit else None)
    init = solver.set_initial_state("energy_project")
    summary = solver.run_transient(init, cfg)
    state = summary.final_state
    v_max = velocity_profile(solver, state, "horizontal_midline").max_u2
    u_max = velocity_profile(solver, state, "vertical_midline").max_u1
    return v_max, u_max


def _check_cavity(ra, n, label, steady_exit):
    ref_v, ref_u, tol = CAVITY_REFS[ra]
    v_max, u_max = _run_cavity_case(ra, n, steady_exit)
    dev_v = abs(v_max - ref_v) / ref_v
    dev_u = abs(u_max - ref_u) / ref_u
    ok = dev_v <= tol and dev_u <= tol
    assert report(7, ok,
                  f"Ra={ra:g} ({label}): max vertical {v_max:.2f} vs {ref_v} "
                  f"({dev_v:.1%}), max horizontal {u_max:.2f} vs {ref_u} "
                  f"({dev_u:.1%}), tol {tol:.0%}")


@pytest.mark.parametrize("ra", [1e4, 1e5])
def test_criterion_7_cavity_ci(ra):
    _check_cavity(ra, 32, "CI h=1/32, steady exit", steady_exit=True)


@pytest.mark.slow
@pytest.mark.skipif(not FULL, reason="full reproduction runs (set VEMB_FULL=1)")
@pytest.mark.parametrize("ra", [1e4, 1e5, 1e6])
def test_criterion_7_cavity_full(ra):
    _check_cavity(ra, 64, "full h=1/64, T=1", steady_exit=False)


# -- criterion 8: small-viscosity robustness ---------------------------------------------------

def test_criterion_8_small_viscosity():
    mesh = generate_family("triangular", 16)
    errors = {}
    for nu in (1.0, 1e-1, 1e-2, 1e-3):
        prob = small_viscosity_problem(nu)
        solver = BoussinesqSolver(mesh, prob)
        cfg = TimeStepperConfig(dt=1.0 / 16.0, t_final=1.0)
        acc = ErrorAccumulator(ErrorEvaluator(solver, prob.exact), cfg.dt)
        try:
            solver.run_transient(solver.set_initial_state("interpolate"),
                                 cfg, observers=[acc])
        except NewtonError as exc:
            assert report(8, False, f"Newton failed at nu={nu:g}: {exc}")
        errors[nu] = acc.finalize()["E_psi_L2H2"]
    growth = max(errors.values()) / errors[1.0]
    ok = growth < 100.0
    assert report(8, ok, "stream errors " +
                  ", ".join(f"nu={k:g}: {v:.3e}" for k, v in errors.items()) +
                  f"; growth x{growth:.1f} (< x100)")
