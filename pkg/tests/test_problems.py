"""Computer-algebra verification of the hand-derived manufactured forcings.

The closed forms in vemb.problems are re-derived here from the strong
equations with sympy and compared at random space-time points; this is the
recorded derivation check for the forcing formulas.
"""

import numpy as np
import pytest
import sympy as sp

from vemb.problems import (ProblemDefinition, accuracy_problem,
                           cavity_problem, small_viscosity_problem)

X, Y, T = sp.symbols("x y t", real=True)


def derive_forcings(psi_expr, p_expr, nu, kappa, g_vec):
    """Forcings of the strong Boussinesq system for u = curl(psi)."""
    u1 = sp.diff(psi_expr, Y)
    u2 = -sp.diff(psi_expr, X)
    theta = u1 + u2
    lap = lambda f: sp.diff(f, X, 2) + sp.diff(f, Y, 2)
    f1 = (sp.diff(u1, T) - nu * lap(u1) + u1 * sp.diff(u1, X) + u2 * sp.diff(u1, Y)
          + sp.diff(p_expr, X) - g_vec[0] * theta)
    f2 = (sp.diff(u2, T) - nu * lap(u2) + u1 * sp.diff(u2, X) + u2 * sp.diff(u2, Y)
          + sp.diff(p_expr, Y) - g_vec[1] * theta)
    ft = (sp.diff(theta, T) - kappa * lap(theta)
          + u1 * sp.diff(theta, X) + u2 * sp.diff(theta, Y))
    lam = lambda e: sp.lambdify((X, Y, T), e, "numpy")
    return {
        "f1": lam(f1), "f2": lam(f2), "ftheta": lam(ft),
        "theta": lam(theta),
        "theta_gx": lam(sp.diff(theta, X)), "theta_gy": lam(sp.diff(theta, Y)),
        "psi": lam(psi_expr),
        "psi_gx": lam(sp.diff(psi_expr, X)), "psi_gy": lam(sp.diff(psi_expr, Y)),
        "psi_xx": lam(sp.diff(psi_expr, X, 2)),
        "psi_xy": lam(sp.diff(psi_expr, X, 1, Y, 1)),
        "psi_yy": lam(sp.diff(psi_expr, Y, 2)),
        "div_u": lam(sp.simplify(sp.diff(u1, X) + sp.diff(u2, Y))),
    }


def compare(problem, ref, npts=60):
    rng = np.random.default_rng(12)
    x = rng.uniform(0.02, 0.98, npts)
    y = rng.uniform(0.02, 0.98, npts)
    t = rng.uniform(0.0, 1.0, npts)
    fp = problem.f_psi(x, y, t)
    assert np.abs(fp[:, 0] - ref["f1"](x, y, t)).max() < 1e-12
    assert np.abs(fp[:, 1] - ref["f2"](x, y, t)).max() < 1e-12
    assert np.abs(problem.f_theta(x, y, t) - ref["ftheta"](x, y, t)).max() < 1e-12
    ex = problem.exact
    assert np.abs(ex.psi(x, y, t) - ref["psi"](x, y, t)).max() < 1e-14
    g = ex.psi_grad(x, y, t)
    assert np.abs(g[:, 0] - ref["psi_gx"](x, y, t)).max() < 1e-13
    assert np.abs(g[:, 1] - ref["psi_gy"](x, y, t)).max() < 1e-13
    H = ex.psi_hess(x, y, t)
    for j, key in enumerate(("psi_xx", "psi_xy", "psi_yy")):
        assert np.abs(H[:, j] - ref[key](x, y, t)).max() < 1e-12
    assert np.abs(ex.theta(x, y, t) - ref["theta"](x, y, t)).max() < 1e-13
    tg = ex.theta_grad(x, y, t)
    assert np.abs(tg[:, 0] - ref["theta_gx"](x, y, t)).max() < 1e-12
    assert np.abs(tg[:, 1] - ref["theta_gy"](x, y, t)).max() < 1e-12
    # the manufactured velocity is exactly divergence free
    assert np.abs(ref["div_u"](x, y, t)).max() < 1e-14


def test_accuracy_forcings_match_sympy():
    tau = sp.exp(10 * (T - 1)) - sp.exp(-10)
    psi = tau * X**2 * (1 - X) ** 2 * Y**2 * (1 - Y) ** 2
    p = tau * (sp.sin(X) * sp.cos(Y) + (sp.cos(1) - 1) * sp.sin(1))
    ref = derive_forcings(psi, p, nu=1, kappa=1, g_vec=(0, -1))
    compare(accuracy_problem(), ref)


@pytest.mark.parametrize("nu", [1.0, 1e-2])
def test_small_viscosity_forcings_match_sympy(nu):
    psi = sp.cos(T) * sp.sin(sp.pi * X) * sp.cos(sp.pi * Y) / sp.pi
    p = sp.cos(T) * (sp.sin(sp.pi * X) + sp.cos(sp.pi * Y) - 2 / sp.pi)
    ref = derive_forcings(psi, p, nu=nu, kappa=1, g_vec=(0, -1))
    compare(small_viscosity_problem(nu), ref)


def test_accuracy_solution_clamped_on_boundary():
    ex = accuracy_problem().exact
    s = np.linspace(0, 1, 17)
    for x, y in [(s, np.zeros_like(s)), (s, np.ones_like(s)),
                 (np.zeros_like(s), s), (np.ones_like(s), s)]:
        assert np.abs(ex.psi(x, y, 1.0)).max() < 1e-15
        assert np.abs(ex.psi_grad(x, y, 1.0)).max() < 1e-14
        assert np.abs(ex.theta(x, y, 1.0)).max() < 1e-15


def test_accuracy_initial_data_is_zero():
    ex = accuracy_problem().exact
    x = np.linspace(0, 1, 9)
    assert np.abs(ex.psi(x, x, 0.0)).max() == 0.0
    assert np.abs(ex.theta(x, x, 0.0)).max() == 0.0


def test_small_viscosity_boundary_data_nontrivial():
    # psi is nonzero on the horizontal walls: the essential lift is exercised
    ex = small_viscosity_problem(1.0).exact
    x = np.linspace(0.1, 0.9, 9)
    assert np.abs(ex.psi(x, np.zeros_like(x), 0.0)).max() > 0.1


def test_cavity_problem_fields():
    prob = cavity_problem(prandtl=0.71, rayleigh=1e4)
    assert prob.nu == pytest.approx(0.71)
    assert prob.kappa == 1.0
    assert np.allclose(prob.g, [0.0, 0.71e4])
    assert prob.f_psi is None and prob.f_theta is None
    assert prob.temp_bc["left"][0] == "dirichlet"
    assert prob.temp_bc["left"][1](0.0, 0.5, 0.0) == 1.0
    assert prob.temp_bc["right"][1](1.0, 0.5, 0.0) == 0.0
    assert prob.temp_bc["top"] == ("neumann",)
    assert prob.psi0(0.25, 1.0) == pytest.approx(0.75)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        cavity_problem(rayleigh=-1.0)
    with pytest.raises(ValueError):
        ProblemDefinition(nu=0.0, kappa=1.0)
