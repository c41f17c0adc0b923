"""Error norms, convergence rates, and benchmark post-processing.

Errors compare exact fields against the elementwise polynomial projections of
the discrete solution: the broken H2 seminorm uses the energy projection of
the stream function, the broken H1 seminorm the gradient projection of the
temperature.  Velocity profiles and wall heat flux evaluate the same cellwise
polynomials at sample points.
"""

from dataclasses import dataclass

import numpy as np

from .polybasis import space_dim

__all__ = ["StepErrors", "ErrorEvaluator", "ErrorAccumulator",
           "convergence_rates", "fit_rate", "CellLocator",
           "velocity_profile", "nusselt_local", "ProfileResult"]


@dataclass
class StepErrors:
    psi_h2: float     # broken |psi(t) - PiD psi_h|_{2,h}
    psi_h1: float     # broken |psi(t) - PiD psi_h|_{1,h}
    theta_h1: float   # broken |theta(t) - PiNabla theta_h|_{1,h}
    theta_l2: float   # ||theta(t) - PiNabla theta_h||_{0}


class ErrorEvaluator:
    """Per-step broken-norm errors against an exact solution."""

    def __init__(self, solver, exact):
        self.solver = solver
        self.exact = exact
        # stack per-cell quadrature data once; grouped like the solver batches
        self._groups = []
        for g in solver.groups:
            cells = g.cells
            k = solver.k
            d_k = space_dim(k)
            hessm = []
            gradm = []
            valsg = []
            gradt = []
            for ic in cells:
                se = solver.stream_elements[ic]
                te = solver.temp_elements[ic]
                pts = se.quad.points
                hm = se.basis.eval_hess(pts)
                gm = se.basis.eval_grad(pts)
                hessm.append(np.einsum("pi,pqs->iqs", se.projectors.PiD, hm))
                gradm.append(np.einsum("pi,pqd->iqd", se.projectors.PiD, gm))
                tv = te.basis.eval(pts)
                tg = te.basis.eval_grad(pts)
                valsg.append(np.einsum("pi,pq->iq", te.projectors.PiNabla, tv))
                gradt.append(np.einsum("pi,pqd->iqd", te.projectors.PiNabla, tg))
            self._groups.append({
                "W": g.W, "x": g.pts[:, :, 0], "y": g.pts[:, :, 1],
                "sdof": g.sdof, "tdof": g.tdof,
                "hess": np.array(hessm), "grad": np.array(gradm),
                "tval": np.array(valsg), "tgrad": np.array(gradt),
            })

    def __call__(self, state):
        ex = self.exact
        t = state.t
        e_h2 = e_h1 = e_th1 = e_tl2 = 0.0
        hw = np.array([1.0, 2.0, 1.0])  # Frobenius weight of (xx, xy, yy)
        for g in self._groups:
            x, y, W = g["x"], g["y"], g["W"]
            ps = state.psi[g["sdof"]]
            th = state.theta[g["tdof"]]
            dh = ex.psi_hess(x, y, t) - np.einsum("ciqs,ci->cqs", g["hess"], ps)
            e_h2 += np.einsum("cq,cqs,s->", W, dh**2, hw)
            dg = ex.psi_grad(x, y, t) - np.einsum("ciqd,ci->cqd", g["grad"], ps)
            e_h1 += np.einsum("cq,cqd->", W, dg**2)
            dt = ex.theta_grad(x, y, t) - np.einsum("ciqd,ci->cqd", g["tgrad"], th)
            e_th1 += np.einsum("cq,cqd->", W, dt**2)
            dv = ex.theta(x, y, t) - np.einsum("ciq,ci->cq", g["tval"], th)
            e_tl2 += np.einsum("cq,cq->", W, dv**2)
        return StepErrors(np.sqrt(e_h2), np.sqrt(e_h1),
                          np.sqrt(e_th1), np.sqrt(e_tl2))


class ErrorAccumulator:
    """Observer accumulating the dt-weighted L2-in-time error sums.

    ``finalize`` returns the four reported quantities: L2-in-time errors of
    the broken H2 (stream) and H1 (temperature) seminorms, and the final-time
    H1 (stream) and L2 (temperature) errors.
    """

    def __init__(self, evaluator, dt):
        self.evaluator = evaluator
        self.dt = dt
        self.sum_psi_h2 = 0.0
        self.sum_theta_h1 = 0.0
        self.last = None

    def __call__(self, record):
        errs = self.evaluator(record.state)
        self.sum_psi_h2 += self.dt * errs.psi_h2**2
        self.sum_theta_h1 += self.dt * errs.theta_h1**2
        self.last = errs

    def finalize(self):
        return {
            "E_psi_L2H2": np.sqrt(self.sum_psi_h2),
            "E_theta_L2H1": np.sqrt(self.sum_theta_h1),
            "E_psi_LinfH1": self.last.psi_h1 if self.last else np.nan,
            "E_theta_LinfL2": self.last.theta_l2 if self.last else np.nan,
        }


def convergence_rates(pairs):
    """Successive rates log(E_i/E_{i+1}) / log(h_i/h_{i+1}).

    Zero errors give None entries (rate undefined).
    """
    rates = []
    for (h0, e0), (h1, e1) in zip(pairs[:-1], pairs[1:]):
        if e0 <= 0.0 or e1 <= 0.0:
            rates.append(None)
        else:
            rates.append(np.log(e0 / e1) / np.log(h0 / h1))
    return rates


def fit_rate(pairs):
    """Least-squares slope of log E against log h over all refinement levels."""
    pairs = [(h, e) for h, e in pairs if e > 0.0]
    if len(pairs) < 2:
        return None
    lh = np.log([h for h, _ in pairs])
    le = np.log([e for _, e in pairs])
    return float(np.polyfit(lh, le, 1)[0])


class CellLocator:
    """Point-to-cell lookup with bounding-box prefilter.

    Points on shared edges resolve to the lowest containing cell index, which
    keeps sampling deterministic.
    """

    def __init__(self, mesh, tol=1e-12):
        self.mesh = mesh
        self.tol = tol
        self._lo = np.array([mesh.cell_vertices(i).min(axis=0)
                             for i in range(mesh.num_cells)])
        self._hi = np.array([mesh.cell_vertices(i).max(axis=0)
                             for i in range(mesh.num_cells)])

    def _inside(self, ic, p):
        v = self.mesh.cell_vertices(ic)
        a, b = v, np.roll(v, -1, axis=0)
        ab = b - a
        ap = p - a
        # on-boundary counts as inside (midlines often run along edges)
        L2 = np.maximum((ab**2).sum(axis=1), 1e-300)
        tpar = np.clip((ap * ab).sum(axis=1) / L2, 0.0, 1.0)
        closest = a + tpar[:, None] * ab
        if np.min(np.linalg.norm(closest - p, axis=1)) < self.tol * max(1.0, np.sqrt(L2.max())):
            return True
        # ray casting handles concave cells
        inside = False
        x, y = p
        for (x1, y1), (x2, y2) in zip(a, b):
            if (y1 > y) != (y2 > y):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                if xint > x:
                    inside = not inside
        return inside

    def locate(self, p):
        p = np.asarray(p, dtype=float)
        tol = self.tol
        mask = np.all((self._lo - tol <= p) & (p <= self._hi + tol), axis=1)
        for ic in np.nonzero(mask)[0]:
            if self._inside(ic, p):
                return int(ic)
        raise ValueError(f"point {p} is outside the mesh")


_AXES = {"vertical_midline": ("x", 0.5), "horizontal_midline": ("y", 0.5)}


@dataclass
class ProfileResult:
    s: np.ndarray        # arclength coordinate along the midline
    u1: np.ndarray       # velocity components sampled on the line
    u2: np.ndarray
    max_u1: float
    max_u1_at: float
    max_u2: float
    max_u2_at: float


def velocity_profile(solver, state, axis, samples=1000):
    """Velocity (curl of the stream function) sampled along a midline.

    ``axis`` is ``vertical_midline`` (the line x = 0.5) or
    ``horizontal_midline`` (y = 0.5); the cellwise degree k-1 projection of
    the curl is evaluated at the sample points.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}")
    fixed, value = _AXES[axis]
    s = np.linspace(0.0, 1.0, samples)
    pts = np.column_stack([np.full(samples, value), s]) if fixed == "x" \
        else np.column_stack([s, np.full(samples, value)])
    locator = CellLocator(solver.mesh)
    u = np.empty((samples, 2))
    for i, p in enumerate(pts):
        ic = locator.locate(p)
        se = solver.stream_elements[ic]
        d1 = space_dim(solver.k - 1)
        vals = se.basis.eval(p[None, :])[:d1, 0]
        loc = state.psi[solver.imap.stream_cell_dofs[ic]]
        u[i, 0] = vals @ (se.projectors.PiCurl[0] @ loc)
        u[i, 1] = vals @ (se.projectors.PiCurl[1] @ loc)
    i1 = int(np.argmax(np.abs(u[:, 0])))
    i2 = int(np.argmax(np.abs(u[:, 1])))
    return ProfileResult(s=s, u1=u[:, 0], u2=u[:, 1],
                         max_u1=abs(u[i1, 0]), max_u1_at=s[i1],
                         max_u2=abs(u[i2, 1]), max_u2_at=s[i2])


def nusselt_local(solver, state, wall, samples=1000):
    """Local wall heat flux -d(theta)/dx along the left or right wall.

    The sign convention keeps both walls positive for the cavity flow (flux
    entering at the hot wall, leaving at the cold one); the linear profile
    theta = 1 - x gives Nu identically 1 on both walls.
    """
    if wall not in ("left", "right"):
        raise ValueError("wall must be 'left' or 'right'")
    x_wall = 0.0 if wall == "left" else 1.0
    mesh = solver.mesh
    if not any(tag == wall for tag in mesh.boundary_markers.values()):
        raise ValueError(f"mesh has no boundary edges tagged {wall!r}")
    s = np.linspace(0.0, 1.0, samples)
    locator = CellLocator(mesh)
    nu_vals = np.empty(samples)
    for i, yv in enumerate(s):
        p = np.array([x_wall, yv])
        ic = locator.locate(p)
        te = solver.temp_elements[ic]
        grads = te.basis.eval_grad(p[None, :])[:, 0, :]
        loc = state.theta[solver.imap.temp_cell_dofs[ic]]
        coeff = te.projectors.PiNabla @ loc
        nu_vals[i] = -(grads[:, 0] @ coeff)
    return s, nu_vals
