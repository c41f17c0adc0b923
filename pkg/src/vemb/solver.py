"""Global assembly and the implicit time stepper for the coupled system.

The global problem couples the C1 stream-function space (clamped on the
whole boundary, with values lifted from the problem's boundary data) with
the C0 temperature space (Dirichlet or natural walls).  Each backward-Euler
step solves the fully coupled nonlinear system with Newton's method and the
exact Jacobian; the transport terms are the only parts reassembled inside
the Newton loop.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import forms
from .polybasis import edge_quadrature, polygon_quadrature, space_dim
from .stream_element import StreamElement
from .temp_element import TempElement

logger = logging.getLogger(__name__)

__all__ = ["SolverError", "NewtonError", "LinearSolverError", "SolutionState",
           "TimeStepperConfig", "GlobalIndexMap", "BoussinesqSolver",
           "linear_solve", "StepRecord", "TrajectorySummary", "EnergyMonitor"]

_WALL_ORDER = ("left", "right", "bottom", "top", "other")


class SolverError(Exception):
    """Base class for solver failures."""


class NewtonError(SolverError):
    """Newton iteration failed to reach the tolerance."""


class LinearSolverError(SolverError):
    """Sparse factorization failed or the residual target was missed."""


@dataclass
class SolutionState:
    """Full dof vectors (constrained entries hold their boundary values)."""

    psi: np.ndarray
    theta: np.ndarray
    n: int = 0
    t: float = 0.0

    def copy(self):
        return SolutionState(self.psi.copy(), self.theta.copy(), self.n, self.t)


@dataclass
class TimeStepperConfig:
    dt: float
    t_final: float
    newton_tol: float = 1e-8
    newton_max_iter: int = 25
    steady_state_tol: float = None  # early stop when |increment|_inf/dt drops below

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must be at least one step")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")


@dataclass
class StepRecord:
    n: int
    t: float
    state: SolutionState
    newton_iters: int
    increment: float      # last Newton increment (inf norm)
    step_change: float    # |state_n - state_{n-1}|_inf over the time step


@dataclass
class TrajectorySummary:
    final_state: SolutionState
    steps: int
    steady: bool
    newton_iters: list = field(default_factory=list)


class GlobalIndexMap:
    """Global dof numbering and Dirichlet bookkeeping for both fields.

    Stream dofs: three per vertex (value, two scaled-gradient slots), then
    the per-edge moment blocks, then per-cell interior moments.  Temperature
    dofs: vertex values, edge moments, interior moments.  The stream space is
    clamped on every boundary edge; temperature walls follow the problem's
    per-wall choice with Dirichlet winning at shared corner vertices.
    """

    def __init__(self, mesh, k, l, temp_bc):
        self.mesh = mesh
        self.k = k
        self.l = l
        khat = max(k, 3)
        self.n3 = max(k - 2, 0)
        self.n4 = max(khat - 3, 0)
        self.n5 = space_dim(k - 4)
        self.tn_edge = max(l - 1, 0)
        self.tn_int = space_dim(l - 2)

        nv, ne, nc = mesh.num_vertices, mesh.num_edges, mesh.num_cells
        per_edge = self.n3 + self.n4
        self.n_stream = 3 * nv + ne * per_edge + nc * self.n5
        self.n_temp = nv + ne * self.tn_edge + nc * self.tn_int
        self._stream_edge_base = 3 * nv
        self._stream_int_base = 3 * nv + ne * per_edge
        self._temp_edge_base = nv
        self._temp_int_base = nv + ne * self.tn_edge

        self.stream_cell_dofs = []
        self.temp_cell_dofs = []
        for ic, loop in enumerate(mesh.cells):
            m = len(loop)
            sd = np.empty(3 * m + m * per_edge + self.n5, dtype=int)
            for j, vid in enumerate(loop):
                sd[3 * j: 3 * j + 3] = (3 * vid, 3 * vid + 1, 3 * vid + 2)
            base = 3 * m
            for i in range(m):
                eid = mesh.cell_edges[ic][i]
                sd[base + i * per_edge: base + (i + 1) * per_edge] = (
                    self._stream_edge_base + eid * per_edge + np.arange(per_edge))
            sd[3 * m + m * per_edge:] = (self._stream_int_base + ic * self.n5
                                         + np.arange(self.n5))
            self.stream_cell_dofs.append(sd)
            td = np.empty(m + m * self.tn_edge + self.tn_int, dtype=int)
            td[:m] = loop
            for i in range(m):
                eid = mesh.cell_edges[ic][i]
                td[m + i * self.tn_edge: m + (i + 1) * self.tn_edge] = (
                    self._temp_edge_base + eid * self.tn_edge + np.arange(self.tn_edge))
            td[m + m * self.tn_edge:] = (self._temp_int_base + ic * self.tn_int
                                         + np.arange(self.tn_int))
            self.temp_cell_dofs.append(td)

        self._mark_constraints(temp_bc)

    def _mark_constraints(self, temp_bc):
        mesh = self.mesh
        per_edge = self.n3 + self.n4
        self.stream_dirichlet = np.zeros(self.n_stream, dtype=bool)
        self.temp_dirichlet = np.zeros(self.n_temp, dtype=bool)
        # stream: clamp value + both gradient slots at boundary vertices and
        # every moment slot of boundary edges
        for vid in np.nonzero(mesh.boundary_vertex)[0]:
            self.stream_dirichlet[3 * vid: 3 * vid + 3] = True
        for eid in np.nonzero(mesh.boundary_edge)[0]:
            s = self._stream_edge_base + eid * per_edge
            self.stream_dirichlet[s: s + per_edge] = True

        temp_bc = temp_bc or {}
        self.temp_vertex_wall = {}
        self.temp_dirichlet_edges = []
        for wall in _WALL_ORDER:
            spec = temp_bc.get(wall)
            if not spec or spec[0] != "dirichlet":
                continue
            for eid, tag in mesh.boundary_markers.items():
                if tag != wall:
                    continue
                self.temp_dirichlet_edges.append((eid, wall))
                s = self._temp_edge_base + eid * self.tn_edge
                self.temp_dirichlet[s: s + self.tn_edge] = True
                for vid in mesh.edges[eid]:
                    vid = int(vid)
                    if vid in self.temp_vertex_wall and self.temp_vertex_wall[vid] != wall:
                        logger.info("corner vertex %d: wall %s keeps precedence over %s",
                                    vid, self.temp_vertex_wall[vid], wall)
                        continue
                    self.temp_vertex_wall.setdefault(vid, wall)
                    self.temp_dirichlet[vid] = True

        self.free_stream = np.nonzero(~self.stream_dirichlet)[0]
        self.free_temp = np.nonzero(~self.temp_dirichlet)[0]
        self.n_free_stream = len(self.free_stream)
        self.n_free_temp = len(self.free_temp)
        self.compact_stream = -np.ones(self.n_stream, dtype=int)
        self.compact_stream[self.free_stream] = np.arange(self.n_free_stream)
        self.compact_temp = -np.ones(self.n_temp, dtype=int)
        self.compact_temp[self.free_temp] = (self.n_free_stream
                                             + np.arange(self.n_free_temp))

    @property
    def n_free(self):
        return self.n_free_stream + self.n_free_temp

    # -- boundary values -----------------------------------------------------

    def stream_bc_values(self, psi_fn, grad_fn, t):
        """Constrained stream dof values at time t (zeros for clamped-to-rest)."""
        out = np.zeros(self.n_stream)
        if psi_fn is None:
            return out
        mesh = self.mesh
        per_edge = self.n3 + self.n4
        vids = np.nonzero(mesh.boundary_vertex)[0]
        x, y = mesh.vertices[vids, 0], mesh.vertices[vids, 1]
        out[3 * vids] = psi_fn(x, y, t)
        g = np.asarray(grad_fn(x, y, t))
        out[3 * vids + 1] = mesh.vertex_scale[vids] * g[..., 0]
        out[3 * vids + 2] = mesh.vertex_scale[vids] * g[..., 1]
        if per_edge:
            khat = max(self.k, 3)
            npts = (max(khat, self.k) + 1) // 2 + 2
            for eid in np.nonzero(mesh.boundary_edge)[0]:
                a, b = mesh.edges[eid]
                rule = edge_quadrature(mesh.vertices[a], mesh.vertices[b], npts)
                w, xi = rule.weights, rule.param
                px, py = rule.points[:, 0], rule.points[:, 1]
                base = self._stream_edge_base + eid * per_edge
                if self.n3:
                    gn = np.asarray(grad_fn(px, py, t)) @ mesh.edge_normal[eid]
                    for j in range(self.n3):
                        out[base + j] = np.sum(w * xi**j * gn)
                if self.n4:
                    fv = psi_fn(px, py, t)
                    for j in range(self.n4):
                        out[base + self.n3 + j] = (np.sum(w * xi**j * fv)
                                                   / mesh.edge_length[eid])
        return out

    def temp_bc_values(self, temp_bc, t):
        out = np.zeros(self.n_temp)
        if not temp_bc:
            return out
        mesh = self.mesh
        by_wall = {}
        for vid, wall in self.temp_vertex_wall.items():
            by_wall.setdefault(wall, []).append(vid)
        for wall, vids in by_wall.items():
            fn = temp_bc[wall][1]
            vids = np.asarray(vids, dtype=int)
            out[vids] = fn(mesh.vertices[vids, 0], mesh.vertices[vids, 1], t)
        if self.tn_edge:
            for eid, wall in self.temp_dirichlet_edges:
                fn = temp_bc[wall][1]
                a, b = mesh.edges[eid]
                rule = edge_quadrature(mesh.vertices[a], mesh.vertices[b], self.l + 1)
                w, xi = rule.weights, rule.param
                fv = fn(rule.points[:, 0], rule.points[:, 1], t)
                base = self._temp_edge_base + eid * self.tn_edge
                for j in range(self.tn_edge):
                    out[base + j] = np.sum(w * xi**j * fv) / mesh.edge_length[eid]
        return out


def linear_solve(J, r, tol=1e-12):
    """Direct sparse solve with iterative refinement.

    The accuracy contract is the normwise relative backward error
    ||J x - r|| <= tol * (||J|| ||x|| + ||r||), the sharpest target a double
    precision factorization can certify for stiff (biharmonic-conditioned)
    systems.  Raises LinearSolverError on singular matrices or if the target
    cannot be met.
    """
    J = J.tocsc()
    try:
        lu = spla.splu(J)
    except RuntimeError as exc:
        raise LinearSolverError(f"sparse factorization failed: {exc}") from None
    x = lu.solve(r)
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("factorization produced non-finite solution")
    rnorm = np.linalg.norm(r)
    if rnorm == 0.0:
        return np.zeros_like(r)
    jnorm = np.abs(J).sum(axis=0).max()  # 1-norm
    for _ in range(4):
        res = r - J @ x
        if np.linalg.norm(res) <= tol * (jnorm * np.linalg.norm(x) + rnorm):
            return x
        x = x + lu.solve(res)
    if np.linalg.norm(r - J @ x) > tol * (jnorm * np.linalg.norm(x) + rnorm):
        raise LinearSolverError("backward error above tolerance after refinement")
    return x


class _CellGroup:
    """Batched per-cell arrays for cells sharing dof counts and rule size."""

    def __init__(self, cells, elements, temps, convs, imap):
        self.cells = np.array(cells, dtype=int)
        self.sdof = np.array([imap.stream_cell_dofs[c] for c in cells])
        self.tdof = np.array([imap.temp_cell_dofs[c] for c in cells])
        self.W = np.array([convs[c].weights for c in cells])
        self.pts = np.array([convs[c].points for c in cells])
        self.Lap = np.array([convs[c].lap for c in cells])
        self.Curl = np.array([convs[c].curl for c in cells])
        self.Grad = np.array([convs[c].grad for c in cells])
        self.GradT = np.array([convs[c].gradt for c in cells])
        self.ValT = np.array([convs[c].valt for c in cells])
        cs, ct = imap.compact_stream, imap.compact_temp
        self.comp_s = cs[self.sdof]
        self.comp_t = ct[self.tdof]
        self._idx_pp = self._pair_index(self.comp_s, self.comp_s)
        self._idx_tt = self._pair_index(self.comp_t, self.comp_t)
        self._idx_tp = self._pair_index(self.comp_t, self.comp_s)
        # static products reused every Newton iteration
        C, n, Q = self.Lap.shape
        self.WL = self.Lap * self.W[:, None, :]
        self.WV = self.ValT * self.W[:, None, :]
        self.Cf = np.ascontiguousarray(self.Curl.reshape(C, n, 2 * Q))

    @staticmethod
    def _pair_index(rows_comp, cols_comp):
        C, nr = rows_comp.shape
        nc = cols_comp.shape[1]
        r = np.repeat(rows_comp[:, :, None], nc, axis=2).ravel()
        c = np.repeat(cols_comp[:, None, :], nr, axis=1).ravel()
        keep = (r >= 0) & (c >= 0)
        return r[keep], c[keep], keep


class BoussinesqSolver:
    """Assembled discrete system plus the backward-Euler/Newton time stepper.

    Parameters
    ----------
    mesh : PolygonalMesh
    problem : ProblemDefinition
        Physical parameters, forcings, boundary and initial data.
    k, l : int
        Stream and temperature polynomial degrees.
    """

    def __init__(self, mesh, problem, k=2, l=1, stab=None):
        self.mesh = mesh
        self.problem = problem
        self.k = k
        self.l = l
        self.stab = stab or forms.StabilizationWeights()
        self.imap = GlobalIndexMap(mesh, k, l, problem.temp_bc)
        order = max(2 * k + 2, 2 * l + 2, 3 * (k - 1), k + 2 * l - 3)
        self.stream_elements = []
        self.temp_elements = []
        self._convs = []
        for ic in range(mesh.num_cells):
            quad = polygon_quadrature(mesh.cell_vertices(ic), order)
            se = StreamElement(mesh, ic, k, quad)
            te = TempElement(mesh, ic, l, quad)
            self.stream_elements.append(se)
            self.temp_elements.append(te)
            self._convs.append(forms.ConvectionData(se, te))
        self._assemble_linear()
        self._build_groups()
        self._coupling_cache = None
        self._jlin_cache = None
        logger.info("assembled %d cells: %d stream dofs (%d free), %d temp dofs (%d free)",
                    mesh.num_cells, self.imap.n_stream, self.imap.n_free_stream,
                    self.imap.n_temp, self.imap.n_free_temp)

    # -- assembly --------------------------------------------------------------

    def _scatter(self, blocks, rowmaps, colmaps, shape):
        rows, cols, data = [], [], []
        for B, rm, cm in zip(blocks, rowmaps, colmaps):
            nr, nc = B.shape
            rows.append(np.repeat(rm, nc))
            cols.append(np.tile(cm, nr))
            data.append(B.ravel())
        coo = sps.coo_matrix((np.concatenate(data),
                              (np.concatenate(rows), np.concatenate(cols))), shape=shape)
        return coo.tocsr()

    def _assemble_linear(self):
        imap = self.imap
        mf_blocks, af_blocks, mt_blocks, at_blocks = [], [], [], []
        for ic in range(self.mesh.num_cells):
            MF, AF = forms.local_MF_AF(self.stream_elements[ic], self.stab)
            MT, AT = forms.local_MT_AT(self.temp_elements[ic], self.stab)
            mf_blocks.append(MF)
            af_blocks.append(AF)
            mt_blocks.append(MT)
            at_blocks.append(AT)
        sdofs = imap.stream_cell_dofs
        tdofs = imap.temp_cell_dofs
        ns, nt = imap.n_stream, imap.n_temp
        self.MF = self._scatter(mf_blocks, sdofs, sdofs, (ns, ns))
        self.AF = self._scatter(af_blocks, sdofs, sdofs, (ns, ns))
        self.MT = self._scatter(mt_blocks, tdofs, tdofs, (nt, nt))
        self.AT = self._scatter(at_blocks, tdofs, tdofs, (nt, nt))
        fs, ft = imap.free_stream, imap.free_temp
        self.MF_ff = self.MF[fs][:, fs].tocsr()
        self.AF_ff = self.AF[fs][:, fs].tocsr()
        self.MT_ff = self.MT[ft][:, ft].tocsr()
        self.AT_ff = self.AT[ft][:, ft].tocsr()

    def assemble_coupling(self, t):
        """Global buoyancy matrix (stream rows, temperature columns) at time t.

        Cached when the problem declares g independent of time.
        """
        if self.problem.g is None:
            ns, nt = self.imap.n_stream, self.imap.n_temp
            return sps.csr_matrix((ns, nt))
        if self._coupling_cache is not None and not self.problem.g_time_dependent:
            return self._coupling_cache
        blocks, rmaps, cmaps = [], [], []
        for ic in range(self.mesh.num_cells):
            Cl = forms.local_C(self._convs[ic], self.problem.g, t)
            blocks.append(Cl.T)  # transpose: stream test rows, temperature columns
            rmaps.append(self.imap.stream_cell_dofs[ic])
            cmaps.append(self.imap.temp_cell_dofs[ic])
        C = self._scatter(blocks, rmaps, cmaps,
                          (self.imap.n_stream, self.imap.n_temp))
        if not self.problem.g_time_dependent:
            self._coupling_cache = C
        return C

    def _build_groups(self):
        keyed = {}
        for ic in range(self.mesh.num_cells):
            key = (self.stream_elements[ic].ndof, self.temp_elements[ic].ndof,
                   len(self._convs[ic].weights))
            keyed.setdefault(key, []).append(ic)
        self.groups = [
            _CellGroup(cells, self.stream_elements, self.temp_elements,
                       self._convs, self.imap)
            for _, cells in sorted(keyed.items())
        ]

    def assemble_loads(self, t):
        """Global load vectors at time t (zero fast path for absent forcings)."""
        imap = self.imap
        Fp = np.zeros(imap.n_stream)
        Ft = np.zeros(imap.n_temp)
        p = self.problem
        for g in self.groups:
            x, y = g.pts[:, :, 0], g.pts[:, :, 1]
            if p.f_psi is not None:
                fv = np.asarray(p.f_psi(x, y, t), dtype=float)
                loc = np.einsum("cq,cqd,cjqd->cj", g.W, fv, g.Curl)
                np.add.at(Fp, g.sdof, loc)
            if p.f_theta is not None:
                fv = np.asarray(p.f_theta(x, y, t), dtype=float)
                loc = np.einsum("cq,cq,cjq->cj", g.W, fv, g.ValT)
                np.add.at(Ft, g.tdof, loc)
        return Fp, Ft

    # -- boundary values ---------------------------------------------------------

    def apply_bc(self, psi, theta, t):
        imap = self.imap
        p = self.problem
        sb = imap.stream_bc_values(p.stream_bc_value, p.stream_bc_grad, t)
        psi[imap.stream_dirichlet] = sb[imap.stream_dirichlet]
        tb = imap.temp_bc_values(p.temp_bc, t)
        theta[imap.temp_dirichlet] = tb[imap.temp_dirichlet]

    # -- nonlinear pieces ----------------------------------------------------------

    def _trilinear_residual(self, psi, theta):
        Rp = np.zeros(self.imap.n_stream)
        Rt = np.zeros(self.imap.n_temp)
        for g in self.groups:
            pl = psi[g.sdof]
            tl = theta[g.tdof]
            lapz = np.einsum("cnq,cn->cq", g.Lap, pl)
            curlp = np.einsum("cnqd,cn->cqd", g.Curl, pl)
            loc = np.einsum("cq,cqd,cjqd->cj", g.W * lapz, curlp, g.Grad)
            np.add.at(Rp, g.sdof, loc)
            Bs = self._bskew_blocks(g, curlp)
            np.add.at(Rt, g.tdof, np.einsum("cji,ci->cj", Bs, tl))
        return Rp, Rt

    @staticmethod
    def _bskew_blocks(g, curlp):
        """Batched skew transport matrices at the frozen stream state."""
        conv = np.einsum("ciqd,cqd->ciq", g.GradT, curlp)
        BT = g.WV @ conv.transpose(0, 2, 1)                   # (c, j, i)
        return 0.5 * (BT - BT.transpose(0, 2, 1))

    def _trilinear_jacobian(self, psi, theta):
        """Compact free-index COO data of the transport Jacobian blocks.

        All contractions are arranged as batched matrix products over the
        quadrature index so they run through BLAS.
        """
        rows, cols, data = [], [], []
        for g in self.groups:
            C, n, Q = g.Lap.shape
            pl = psi[g.sdof]
            tl = theta[g.tdof]
            lapz = np.einsum("cnq,cn->cq", g.Lap, pl)
            curlp = np.einsum("cnqd,cn->cqd", g.Curl, pl)
            CG = np.einsum("cjqd,cqd->cjq", g.Grad, curlp)
            Jpp = CG @ g.WL.transpose(0, 2, 1)                # (c, j, a)
            wz = (g.W * lapz)[:, None, :, None]
            Gf = (g.Grad * wz).reshape(C, n, 2 * Q)
            Jpp += Gf @ g.Cf.transpose(0, 2, 1)
            r, c, keep = g._idx_pp
            rows.append(r)
            cols.append(c)
            data.append(Jpp.ravel()[keep])
            Jtt = self._bskew_blocks(g, curlp)
            r, c, keep = g._idx_tt
            rows.append(r)
            cols.append(c)
            data.append(Jtt.ravel()[keep])
            nt = g.ValT.shape[1]
            gradt_t = np.einsum("ciqd,ci->cqd", g.GradT, tl)
            valt_t = np.einsum("ciq,ci->cq", g.ValT, tl)
            CGT = np.einsum("caqd,cqd->caq", g.Curl, gradt_t)
            Jtp = g.WV @ CGT.transpose(0, 2, 1)               # (c, j, a)
            wv = (g.W * valt_t)[:, None, :, None]
            GTf = (g.GradT * wv).reshape(C, nt, 2 * Q)
            Jtp -= GTf @ g.Cf.transpose(0, 2, 1)
            Jtp *= 0.5
            r, c, keep = g._idx_tp
            rows.append(r)
            cols.append(c)
            data.append(Jtp.ravel()[keep])
        return rows, cols, data

    def residual(self, psi, theta, psi_prev, theta_prev, dt, t, loads=None, C=None):
        """Full-length residual vectors of the backward-Euler system at time t."""
        p = self.problem
        if loads is None:
            loads = self.assemble_loads(t)
        if C is None:
            C = self.assemble_coupling(t)
        Fp, Ft = loads
        Rp = self.MF @ ((psi - psi_prev) / dt) + p.nu * (self.AF @ psi) - Fp
        Rt = self.MT @ ((theta - theta_prev) / dt) + p.kappa * (self.AT @ theta) - Ft
        Rp -= C @ theta
        if not p.convection:
            return Rp, Rt
        Tp, Tt = self._trilinear_residual(psi, theta)
        return Rp + Tp, Rt + Tt

    def _linear_jacobian_coo(self, dt, C):
        """Static part of the free Jacobian in COO arrays (cached per dt).

        Compact numbering puts the free stream dofs first, then the free
        temperature dofs, matching the indices stored in the cell groups.
        """
        key = (dt, self.problem.g_time_dependent and id(C))
        if self._jlin_cache is not None and self._jlin_cache[0] == key:
            return self._jlin_cache[1]
        imap = self.imap
        p = self.problem
        fs, ft = imap.free_stream, imap.free_temp
        Jpp = self.MF_ff / dt + p.nu * self.AF_ff
        Jtt = self.MT_ff / dt + p.kappa * self.AT_ff
        Cff = C[fs].tocsc()[:, ft]
        J_lin = sps.bmat([[Jpp, -Cff], [None, Jtt]], format="coo")
        entry = (J_lin.row.astype(np.int64), J_lin.col.astype(np.int64), J_lin.data)
        self._jlin_cache = (key, entry)
        return entry

    def _free_jacobian(self, psi, theta, dt, C):
        imap = self.imap
        nf = imap.n_free
        lr, lc, ld = self._linear_jacobian_coo(dt, C)
        if not self.problem.convection:
            return sps.coo_matrix((ld, (lr, lc)), shape=(nf, nf)).tocsr()
        rows, cols, data = self._trilinear_jacobian(psi, theta)
        rows.append(lr)
        cols.append(lc)
        data.append(ld)
        J = sps.coo_matrix((np.concatenate(data),
                            (np.concatenate(rows), np.concatenate(cols))),
                           shape=(nf, nf))
        return J.tocsr()

    def newton_step(self, prev, t, cfg):
        """Advance one implicit step: returns (new state, info dict).

        The initial Newton guess is the previous time state except at the very
        first step, where the free dofs start from zero.
        """
        imap = self.imap
        psi = prev.psi.copy()
        theta = prev.theta.copy()
        self.apply_bc(psi, theta, t)
        if prev.n == 0:
            psi[imap.free_stream] = 0.0
            theta[imap.free_temp] = 0.0
        loads = self.assemble_loads(t)
        C = self.assemble_coupling(t)
        fs, ft = imap.free_stream, imap.free_temp
        increment = np.inf
        for it in range(1, cfg.newton_max_iter + 1):
            Rp, Rt = self.residual(psi, theta, prev.psi, prev.theta, cfg.dt, t,
                                   loads=loads, C=C)
            R = np.concatenate([Rp[fs], Rt[ft]])
            J = self._free_jacobian(psi, theta, cfg.dt, C)
            delta = linear_solve(J, -R)
            psi[fs] += delta[: imap.n_free_stream]
            theta[ft] += delta[imap.n_free_stream:]
            increment = np.abs(delta).max() if len(delta) else 0.0
            if increment < cfg.newton_tol:
                return (SolutionState(psi, theta, prev.n + 1, t),
                        {"newton_iters": it, "increment": increment})
        raise NewtonError(
            f"Newton did not reach {cfg.newton_tol:g} within "
            f"{cfg.newton_max_iter} iterations at t={t:g} (last increment {increment:.3e})")

    def run_transient(self, initial, cfg, observers=()):
        """March the scheme from the initial state to t_final (or steady state)."""
        nsteps = int(round(cfg.t_final / cfg.dt))
        if abs(nsteps * cfg.dt - cfg.t_final) > 1e-9 * max(1.0, abs(cfg.t_final)):
            raise ValueError("t_final must be an integer number of steps")
        # the theoretical small-step conditions are not enforced; the run
        # parameters are logged so results can be annotated
        logger.info("run: dt=%g t_final=%g nu=%g kappa=%g (%d steps)",
                    cfg.dt, cfg.t_final, self.problem.nu, self.problem.kappa,
                    nsteps)
        state = initial
        iters = []
        steady = False
        quiet_streak = 0
        for n in range(initial.n + 1, initial.n + nsteps + 1):
            prev = state
            state, info = self.newton_step(prev, n * cfg.dt, cfg)
            iters.append(info["newton_iters"])
            step_change = max(np.abs(state.psi - prev.psi).max(),
                              np.abs(state.theta - prev.theta).max())
            record = StepRecord(n=state.n, t=state.t, state=state,
                                newton_iters=info["newton_iters"],
                                increment=info["increment"],
                                step_change=step_change)
            for obs in observers:
                obs(record)
            if cfg.steady_state_tol is not None:
                # a single quiet step can be a turning point of a start-up
                # oscillation; demand a sustained stretch before stopping
                if step_change / cfg.dt < cfg.steady_state_tol:
                    quiet_streak += 1
                    if quiet_streak >= 3:
                        steady = True
                        break
                else:
                    quiet_streak = 0
        return TrajectorySummary(final_state=state, steps=len(iters),
                                 steady=steady, newton_iters=iters)

    # -- initial data ----------------------------------------------------------------

    def set_initial_state(self, mode="interpolate"):
        """Discrete initial data: dof interpolation or the discrete energy
        projections of the initial fields, with boundary values overriding the
        constrained dofs either way."""
        p = self.problem
        imap = self.imap
        psi = np.zeros(imap.n_stream)
        theta = np.zeros(imap.n_temp)
        if mode == "interpolate":
            if p.psi0 is not None:
                for ic, se in enumerate(self.stream_elements):
                    psi[imap.stream_cell_dofs[ic]] = se.interpolate(
                        lambda x, y: p.psi0(x, y), lambda x, y: p.psi0_grad(x, y))
            if p.theta0 is not None:
                for ic, te in enumerate(self.temp_elements):
                    theta[imap.temp_cell_dofs[ic]] = te.interpolate(
                        lambda x, y: p.theta0(x, y))
            self.apply_bc(psi, theta, 0.0)
        elif mode == "energy_project":
            psi, theta = self._energy_project_initial()
        else:
            raise ValueError(f"unknown initial mode {mode!r}")
        return SolutionState(psi, theta, 0, 0.0)

    def _energy_project_initial(self):
        p = self.problem
        imap = self.imap
        psi = np.zeros(imap.n_stream)
        theta = np.zeros(imap.n_temp)
        self.apply_bc(psi, theta, 0.0)
        fs, ft = imap.free_stream, imap.free_temp
        if p.psi0 is not None:
            if p.psi0_hess is None:
                raise ValueError("energy_project mode needs psi0_hess")
            b = np.zeros(imap.n_stream)
            for ic, se in enumerate(self.stream_elements):
                pts, w = se.quad.points, se.quad.weights
                H0 = np.asarray(p.psi0_hess(pts[:, 0], pts[:, 1]))
                Hm = se.basis.eval_hess(pts)
                Hp = np.einsum("pi,pqs->iqs", se.projectors.PiD, Hm)
                wgt = np.array([1.0, 2.0, 1.0])
                loc = np.einsum("q,qs,s,iqs->i", w, H0, wgt, Hp)
                np.add.at(b, imap.stream_cell_dofs[ic], loc)
            rhs = b[fs] - self.AF[fs][:, imap.stream_dirichlet] @ psi[imap.stream_dirichlet]
            psi[fs] = linear_solve(self.AF_ff, rhs)
        if p.theta0 is not None:
            if p.theta0_grad is None:
                raise ValueError("energy_project mode needs theta0_grad")
            b = np.zeros(imap.n_temp)
            for ic, te in enumerate(self.temp_elements):
                pts, w = te.quad.points, te.quad.weights
                f0 = np.asarray(p.theta0(pts[:, 0], pts[:, 1]))
                g0 = np.asarray(p.theta0_grad(pts[:, 0], pts[:, 1]))
                vals = te.basis.eval(pts)
                Pl = np.einsum("pi,pq->iq", te.projectors.PiL2_l, vals)
                d1 = space_dim(te.l - 1)
                Pg = np.stack([np.einsum("pi,pq->iq", te.projectors.PiGradT[0], vals[:d1]),
                               np.einsum("pi,pq->iq", te.projectors.PiGradT[1], vals[:d1])],
                              axis=-1)
                loc = np.einsum("q,q,iq->i", w, f0, Pl)
                loc += np.einsum("q,qd,iqd->i", w, g0, Pg)
                np.add.at(b, imap.temp_cell_dofs[ic], loc)
            K = (self.MT + self.AT).tocsr()
            K_ff = K[ft][:, ft].tocsr()
            rhs = b[ft] - K[ft][:, imap.temp_dirichlet] @ theta[imap.temp_dirichlet]
            theta[ft] = linear_solve(K_ff, rhs)
        return psi, theta

    # -- diagnostics ---------------------------------------------------------------

    def energy(self, state):
        """Discrete energy: the squared mass-form norms of both fields."""
        return float(state.psi @ (self.MF @ state.psi)
                     + state.theta @ (self.MT @ state.theta))


class EnergyMonitor:
    """Observer recording the discrete energy along a trajectory."""

    def __init__(self, solver, initial=None):
        self.solver = solver
        self.times = []
        self.energies = []
        if initial is not None:
            self.times.append(initial.t)
            self.energies.append(solver.energy(initial))

    def __call__(self, record):
        self.times.append(record.t)
        self.energies.append(self.solver.energy(record.state))
