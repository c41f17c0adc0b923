"""Experiment definitions: physical data, manufactured solutions, forcings.

The two accuracy problems prescribe closed-form fields and derive their
forcing terms from the strong momentum/energy equations,

    f_u = u_t - nu*Lap(u) + (u.grad)u + grad(p) - g*theta,
    f_T = theta_t - kappa*Lap(theta) + u.grad(theta),

with u = (psi_y, -psi_x).  Every derivative below is written out by hand;
``tests/test_problems.py`` re-derives all of them with a computer algebra
system and checks the two agree at random points, so the formulas here are
machine-verified rather than trusted.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["ExactSolution", "ProblemDefinition", "accuracy_problem",
           "small_viscosity_problem", "cavity_problem", "decay_problem"]


@dataclass
class ExactSolution:
    """Closed-form fields with the derivatives the error norms need."""

    psi: Callable          # (x, y, t) -> value
    psi_grad: Callable     # (x, y, t) -> (..., 2)
    psi_hess: Callable     # (x, y, t) -> (..., 3): (xx, xy, yy)
    theta: Callable
    theta_grad: Callable


@dataclass
class ProblemDefinition:
    """Everything the solver needs to run one configuration."""

    nu: float
    kappa: float
    g: object = None                 # constant (2,) vector or callable(x, y, t)
    g_time_dependent: bool = False
    f_psi: Optional[Callable] = None
    f_theta: Optional[Callable] = None
    stream_bc_value: Optional[Callable] = None   # None means clamped to zero
    stream_bc_grad: Optional[Callable] = None
    temp_bc: dict = field(default_factory=dict)  # wall -> ("dirichlet", fn) | ("neumann",)
    psi0: Optional[Callable] = None
    psi0_grad: Optional[Callable] = None
    psi0_hess: Optional[Callable] = None
    theta0: Optional[Callable] = None
    theta0_grad: Optional[Callable] = None
    exact: Optional[ExactSolution] = None
    convection: bool = True   # False drops both transport terms (linear scheme)

    def __post_init__(self):
        if self.nu <= 0 or self.kappa <= 0:
            raise ValueError("nu and kappa must be positive")


def _dirichlet_all_walls(fn):
    return {w: ("dirichlet", fn) for w in ("left", "right", "bottom", "top")}


# ---------------------------------------------------------------------------
# accuracy test: polynomial bump stream function with exponential ramp-up
# ---------------------------------------------------------------------------

def accuracy_problem(nu=1.0, kappa=1.0, frozen_time=False):
    """Manufactured solution psi = tau(t) x^2(1-x)^2 y^2(1-y)^2, theta = u1+u2.

    The time factor tau = exp(10(t-1)) - exp(-10) vanishes at t=0, ramps up to
    1 - exp(-10) at t=1; the buoyancy vector is (0, -1) and the pressure (which
    enters the forcing through its gradient) is tau*(sin x cos y + const).
    With ``frozen_time`` the factor is pinned at its t=1 value and the forcing
    drops the time-derivative term, giving the stationary variant of the same
    fields (useful for checking that errors become dt-independent).
    """
    e10 = np.exp(-10.0)

    if frozen_time:
        def tau(t):
            return (1.0 - e10) * np.ones_like(np.asarray(t, dtype=float))

        def dtau(t):
            return np.zeros_like(np.asarray(t, dtype=float))
    else:
        def tau(t):
            return np.exp(10.0 * (t - 1.0)) - e10

        def dtau(t):
            return 10.0 * np.exp(10.0 * (t - 1.0))

    def B(s):
        return s * s * (1.0 - s) ** 2

    def B1(s):
        return 2.0 * s - 6.0 * s * s + 4.0 * s**3

    def B2(s):
        return 2.0 - 12.0 * s + 12.0 * s * s

    def B3(s):
        return -12.0 + 24.0 * s

    def psi(x, y, t):
        return tau(t) * B(x) * B(y)

    def psi_grad(x, y, t):
        tt = tau(t)
        return np.stack([tt * B1(x) * B(y), tt * B(x) * B1(y)], axis=-1)

    def psi_hess(x, y, t):
        tt = tau(t)
        return np.stack([tt * B2(x) * B(y), tt * B1(x) * B1(y),
                         tt * B(x) * B2(y)], axis=-1)

    def velocity(x, y, t):
        tt = tau(t)
        return tt * B(x) * B1(y), -tt * B1(x) * B(y)

    def theta(x, y, t):
        u1, u2 = velocity(x, y, t)
        return u1 + u2

    def theta_grad(x, y, t):
        tt = tau(t)
        gx = tt * (B1(x) * B1(y) - B2(x) * B(y))
        gy = tt * (B(x) * B2(y) - B1(x) * B1(y))
        return np.stack([gx, gy], axis=-1)

    def f_psi(x, y, t):
        tt, dt = tau(t), dtau(t)
        u1, u2 = velocity(x, y, t)
        u1_t = dt * B(x) * B1(y)
        u2_t = -dt * B1(x) * B(y)
        lap_u1 = tt * (B2(x) * B1(y) + B(x) * B3(y))
        lap_u2 = -tt * (B3(x) * B(y) + B1(x) * B2(y))
        u1_x = tt * B1(x) * B1(y)
        u1_y = tt * B(x) * B2(y)
        u2_x = -tt * B2(x) * B(y)
        u2_y = -tt * B1(x) * B1(y)
        conv1 = u1 * u1_x + u2 * u1_y
        conv2 = u1 * u2_x + u2 * u2_y
        px = tt * np.cos(x) * np.cos(y)
        py = -tt * np.sin(x) * np.sin(y)
        th = u1 + u2
        # g = (0, -1): the buoyancy contribution -g*theta is (0, +theta)
        f1 = u1_t - nu * lap_u1 + conv1 + px
        f2 = u2_t - nu * lap_u2 + conv2 + py + th
        return np.stack([f1, f2], axis=-1)

    def f_theta(x, y, t):
        tt, dt = tau(t), dtau(t)
        u1, u2 = velocity(x, y, t)
        th_t = dt * (B(x) * B1(y) - B1(x) * B(y))
        lap_th = tt * (B2(x) * B1(y) + B(x) * B3(y)
                       - B3(x) * B(y) - B1(x) * B2(y))
        g = theta_grad(x, y, t)
        return th_t - kappa * lap_th + u1 * g[..., 0] + u2 * g[..., 1]

    exact = ExactSolution(psi, psi_grad, psi_hess, theta, theta_grad)
    return ProblemDefinition(
        nu=nu, kappa=kappa, g=np.array([0.0, -1.0]),
        f_psi=f_psi, f_theta=f_theta,
        temp_bc=_dirichlet_all_walls(theta),
        psi0=lambda x, y: psi(x, y, 0.0),
        psi0_grad=lambda x, y: psi_grad(x, y, 0.0),
        psi0_hess=lambda x, y: psi_hess(x, y, 0.0),
        theta0=lambda x, y: theta(x, y, 0.0),
        theta0_grad=lambda x, y: theta_grad(x, y, 0.0),
        exact=exact,
    )


# ---------------------------------------------------------------------------
# small-viscosity test: trigonometric rotating field
# ---------------------------------------------------------------------------

def small_viscosity_problem(nu, kappa=1.0):
    """Manufactured solution psi = cos(t) sin(pi x) cos(pi y) / pi.

    Unlike the accuracy test, psi and theta are nonzero on parts of the
    boundary, so both essential lifts are exercised.
    """
    pi = np.pi

    def tau(t):
        return np.cos(t)

    def psi(x, y, t):
        return tau(t) * np.sin(pi * x) * np.cos(pi * y) / pi

    def psi_grad(x, y, t):
        tt = tau(t)
        return np.stack([tt * np.cos(pi * x) * np.cos(pi * y),
                         -tt * np.sin(pi * x) * np.sin(pi * y)], axis=-1)

    def psi_hess(x, y, t):
        tt = tau(t)
        return np.stack([-pi * tt * np.sin(pi * x) * np.cos(pi * y),
                         -pi * tt * np.cos(pi * x) * np.sin(pi * y),
                         -pi * tt * np.sin(pi * x) * np.cos(pi * y)], axis=-1)

    def velocity(x, y, t):
        tt = tau(t)
        return (-tt * np.sin(pi * x) * np.sin(pi * y),
                -tt * np.cos(pi * x) * np.cos(pi * y))

    def theta(x, y, t):
        u1, u2 = velocity(x, y, t)
        return u1 + u2

    def theta_grad(x, y, t):
        tt = tau(t)
        gx = pi * tt * (-np.cos(pi * x) * np.sin(pi * y)
                        + np.sin(pi * x) * np.cos(pi * y))
        gy = pi * tt * (-np.sin(pi * x) * np.cos(pi * y)
                        + np.cos(pi * x) * np.sin(pi * y))
        return np.stack([gx, gy], axis=-1)

    def f_psi(x, y, t):
        tt = tau(t)
        dt = -np.sin(t)
        S, C = np.sin(pi * x), np.cos(pi * x)
        Sy, Cy = np.sin(pi * y), np.cos(pi * y)
        u1, u2 = -tt * S * Sy, -tt * C * Cy
        u1_t, u2_t = -dt * S * Sy, -dt * C * Cy
        lap_u1, lap_u2 = -2.0 * pi**2 * u1, -2.0 * pi**2 * u2
        u1_x, u1_y = -pi * tt * C * Sy, -pi * tt * S * Cy
        u2_x, u2_y = pi * tt * S * Cy, pi * tt * C * Sy
        conv1 = u1 * u1_x + u2 * u1_y
        conv2 = u1 * u2_x + u2 * u2_y
        px = pi * tt * C
        py = -pi * tt * Sy
        th = u1 + u2
        f1 = u1_t - nu * lap_u1 + conv1 + px
        f2 = u2_t - nu * lap_u2 + conv2 + py + th
        return np.stack([f1, f2], axis=-1)

    def f_theta(x, y, t):
        dt = -np.sin(t)
        u1, u2 = velocity(x, y, t)
        th = u1 + u2
        th_t = dt * (-np.sin(pi * x) * np.sin(pi * y)
                     - np.cos(pi * x) * np.cos(pi * y))
        lap_th = -2.0 * pi**2 * th
        g = theta_grad(x, y, t)
        return th_t - kappa * lap_th + u1 * g[..., 0] + u2 * g[..., 1]

    exact = ExactSolution(psi, psi_grad, psi_hess, theta, theta_grad)
    return ProblemDefinition(
        nu=nu, kappa=kappa, g=np.array([0.0, -1.0]),
        f_psi=f_psi, f_theta=f_theta,
        stream_bc_value=psi, stream_bc_grad=psi_grad,
        temp_bc=_dirichlet_all_walls(theta),
        psi0=lambda x, y: psi(x, y, 0.0),
        psi0_grad=lambda x, y: psi_grad(x, y, 0.0),
        psi0_hess=lambda x, y: psi_hess(x, y, 0.0),
        theta0=lambda x, y: theta(x, y, 0.0),
        theta0_grad=lambda x, y: theta_grad(x, y, 0.0),
        exact=exact,
    )


# ---------------------------------------------------------------------------
# differentially heated cavity
# ---------------------------------------------------------------------------

def cavity_problem(prandtl=0.71, rayleigh=1e4):
    """Natural convection benchmark: hot left wall, cold right wall.

    No forcing; buoyancy g = Pr*Ra*(0, 1); nu = Pr, kappa = 1; insulated
    horizontal walls; initial data psi0 = -x + y, theta0 = 1 (deliberately
    incompatible with the boundary conditions).
    """
    if rayleigh <= 0 or prandtl <= 0:
        raise ValueError("Pr and Ra must be positive")
    one = lambda x, y, t: np.ones_like(np.asarray(x, dtype=float))
    zero = lambda x, y, t: np.zeros_like(np.asarray(x, dtype=float))
    return ProblemDefinition(
        nu=prandtl, kappa=1.0,
        g=np.array([0.0, prandtl * rayleigh]),
        temp_bc={"left": ("dirichlet", one), "right": ("dirichlet", zero),
                 "bottom": ("neumann",), "top": ("neumann",)},
        psi0=lambda x, y: -x + y,
        psi0_grad=lambda x, y: np.stack([-np.ones_like(x), np.ones_like(y)], axis=-1),
        psi0_hess=lambda x, y: np.zeros(np.shape(x) + (3,)),
        theta0=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
        theta0_grad=lambda x, y: np.zeros(np.shape(x) + (2,)),
    )


# ---------------------------------------------------------------------------
# free decay (no forcing, no buoyancy): used by the stability checks
# ---------------------------------------------------------------------------

def decay_problem(nu=1.0, kappa=1.0, amplitude=1.0):
    """Zero-source problem with smooth compatible initial data."""
    pi = np.pi

    def psi0(x, y):
        return amplitude * (x * (1 - x) * y * (1 - y)) ** 2

    def psi0_grad(x, y):
        b = x * (1 - x) * y * (1 - y)
        bx = (1 - 2 * x) * y * (1 - y)
        by = x * (1 - x) * (1 - 2 * y)
        return amplitude * np.stack([2 * b * bx, 2 * b * by], axis=-1)

    def psi0_hess(x, y):
        b = x * (1 - x) * y * (1 - y)
        bx = (1 - 2 * x) * y * (1 - y)
        by = x * (1 - x) * (1 - 2 * y)
        bxx = -2 * y * (1 - y)
        byy = -2 * x * (1 - x)
        bxy = (1 - 2 * x) * (1 - 2 * y)
        return amplitude * np.stack(
            [2 * (bx * bx + b * bxx), 2 * (bx * by + b * bxy),
             2 * (by * by + b * byy)], axis=-1)

    zero = lambda x, y, t: np.zeros_like(np.asarray(x, dtype=float))
    return ProblemDefinition(
        nu=nu, kappa=kappa, g=None,
        temp_bc=_dirichlet_all_walls(zero),
        psi0=psi0, psi0_grad=psi0_grad, psi0_hess=psi0_hess,
        theta0=lambda x, y: amplitude * np.sin(pi * x) * np.sin(pi * y),
        theta0_grad=lambda x, y: amplitude * pi * np.stack(
            [np.cos(pi * x) * np.sin(pi * y), np.sin(pi * x) * np.cos(pi * y)],
            axis=-1),
    )
