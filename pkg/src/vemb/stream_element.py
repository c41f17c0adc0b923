"""Local C1-conforming virtual element for the stream function.

Per cell this module reconstructs edge traces from the degrees of freedom,
builds the Hessian-energy projector onto P_k, the gradient-inner-product
projector, and the L2-type projections of the function, its Laplacian,
gradient and curl.  Nothing here ever evaluates a virtual function in the
cell interior: every right-hand side is obtained through integration by
parts against edge polynomials plus the stored interior moments.

Degrees of freedom, in local slot order (vertices CCW, then edges CCW, then
interior, all in the global edge frame):

* per vertex: value, then the two components of the h_v-scaled gradient;
* per edge: moments of the normal derivative against edge monomials up to
  degree k-3, then length-scaled trace moments up to degree khat-4, where
  khat = max(k, 3);
* interior: diameter-scaled moments against cell monomials up to degree k-4.

Edge quantities use the global frame of each edge: the tangent points from
the lower-indexed endpoint to the higher one and the normal is the tangent
rotated by -90 degrees, so shared dofs are single-valued across cells.
"""

import logging

import numpy as np

from .polybasis import (ScaledMonomialBasis, edge_monomial_moments,
                        edge_quadrature, monomial_derivatives,
                        polygon_quadrature, space_dim)

logger = logging.getLogger(__name__)

__all__ = ["StreamDofLayout", "StreamProjectors", "StreamElement"]


class StreamDofLayout:
    """Slot bookkeeping for the local stream space of degree k on an m-gon."""

    def __init__(self, k, num_vertices):
        if k < 2:
            raise ValueError("stream space needs k >= 2")
        self.k = k
        self.khat = max(k, 3)
        m = num_vertices
        self.num_vertices = m
        self.n_edge_normal = max(k - 2, 0)          # D_W3 slots per edge
        self.n_edge_trace = max(self.khat - 3, 0)   # D_W4 slots per edge
        self.n_interior = space_dim(k - 4)          # D_W5 slots
        self.value_slots = 3 * np.arange(m)
        self.gx_slots = self.value_slots + 1
        self.gy_slots = self.value_slots + 2
        per_edge = self.n_edge_normal + self.n_edge_trace
        base = 3 * m
        self.edge_normal_slots = np.array(
            [base + i * per_edge + np.arange(self.n_edge_normal) for i in range(m)],
            dtype=int).reshape(m, self.n_edge_normal)
        self.edge_trace_slots = np.array(
            [base + i * per_edge + self.n_edge_normal + np.arange(self.n_edge_trace)
             for i in range(m)], dtype=int).reshape(m, self.n_edge_trace)
        self.interior_slots = base + m * per_edge + np.arange(self.n_interior)
        self.ndof = base + m * per_edge + self.n_interior


class StreamProjectors:
    """Dense projector matrices mapping local dofs to polynomial coefficients."""

    def __init__(self, PiD, PiC, PiL2_km2, PiLap, PiGrad, PiCurl):
        self.PiD = PiD            # (dim P_k, ndof)
        self.PiC = PiC            # (dim P_k, ndof)
        self.PiL2_km2 = PiL2_km2  # (dim P_{k-2}, ndof)
        self.PiLap = PiLap        # (dim P_{k-2}, ndof)
        self.PiGrad = PiGrad      # (2, dim P_{k-1}, ndof)
        self.PiCurl = PiCurl      # (2, dim P_{k-1}, ndof)


class _EdgeFrame:
    __slots__ = ("eid", "tangent", "normal", "length", "sigma",
                 "loc_a", "loc_b", "rule")

    def __init__(self, eid, tangent, normal, length, sigma, loc_a, loc_b, rule):
        self.eid = eid
        self.tangent = tangent
        self.normal = normal
        self.length = length
        self.sigma = sigma      # +1 when the CCW loop runs along the global tangent
        self.loc_a = loc_a      # local vertex index of the lower global endpoint
        self.loc_b = loc_b
        self.rule = rule


def _edge_frames(mesh, ic, npts):
    loop = mesh.cells[ic]
    m = len(loop)
    frames = []
    for i in range(m):
        eid = mesh.cell_edges[ic][i]
        sigma = int(mesh.cell_edge_orient[ic][i])
        loc_a, loc_b = (i, (i + 1) % m) if sigma == 1 else ((i + 1) % m, i)
        a, b = mesh.edges[eid]
        rule = edge_quadrature(mesh.vertices[a], mesh.vertices[b], npts)
        frames.append(_EdgeFrame(eid, mesh.edge_tangent[eid], mesh.edge_normal[eid],
                                 mesh.edge_length[eid], sigma, loc_a, loc_b, rule))
    return frames


class StreamElement:
    """All computable per-cell machinery of the degree-k stream space."""

    def __init__(self, mesh, ic, k, quad=None):
        self.cell_index = ic
        loop = mesh.cells[ic]
        self.layout = StreamDofLayout(k, len(loop))
        self.k = k
        self.khat = self.layout.khat
        self.verts = mesh.cell_vertices(ic)
        self.h = float(mesh.cell_diameter[ic])
        self.area = float(mesh.cell_area[ic])
        self.centroid = mesh.cell_centroid[ic]
        self.vertex_scale = mesh.vertex_scale[loop]
        self.basis = ScaledMonomialBasis(self.centroid, self.h, k)
        self.tables = monomial_derivatives(self.basis)
        self.nP = self.basis.dim
        self.ndof = self.layout.ndof
        if quad is None:
            quad = polygon_quadrature(self.verts, order=2 * k + 2)
        self.quad = quad
        npts_edge = (self.khat + 1 + 1) // 2 + 1
        self.edges = _edge_frames(mesh, ic, npts_edge)

        self._build_grams()
        self._build_trace_maps()
        self._build_dof_matrix()
        PiD = self._build_pi_energy()
        moments = self._build_moments(PiD)
        PiC = self._build_pi_grad_avg(moments)
        PiL2_km2, PiLap, PiGrad, PiCurl = self._build_l2_projections(moments)
        self.moments = moments
        self.projectors = StreamProjectors(PiD, PiC, PiL2_km2, PiLap, PiGrad, PiCurl)

    # -- dense Gram matrices on the monomial basis ---------------------------

    def _build_grams(self):
        pts, w = self.quad.points, self.quad.weights
        vals = self.basis.eval(pts)
        grads = self.basis.eval_grad(pts)
        hess = self.basis.eval_hess(pts)
        self._vals_q = vals
        self.mass = np.einsum("iq,q,jq->ij", vals, w, vals)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("cell %d: monomial Gram condition %.3e",
                         self.cell_index, np.linalg.cond(self.mass))
        self.grad_gram = np.einsum("iqd,q,jqd->ij", grads, w, grads)
        self.hess_gram = (np.einsum("iq,q,jq->ij", hess[:, :, 0], w, hess[:, :, 0])
                          + 2.0 * np.einsum("iq,q,jq->ij", hess[:, :, 1], w, hess[:, :, 1])
                          + np.einsum("iq,q,jq->ij", hess[:, :, 2], w, hess[:, :, 2]))

    # -- boundary reconstruction ---------------------------------------------

    def _build_trace_maps(self):
        """Per edge, dof-to-coefficient maps of the trace (P_khat) and the
        normal derivative (P_{k-1}) in the global edge coordinate."""
        lay = self.layout
        k, khat = self.k, self.khat
        self.trace_maps = []
        self.normal_maps = []
        mom = edge_monomial_moments(max(khat, k), max(khat, k))
        for i, fr in enumerate(self.edges):
            t, n, he = fr.tangent, fr.normal, fr.length
            # trace p in P_khat: endpoint values + tangential derivatives + moments
            nt = khat + 1
            A = np.zeros((nt, nt))
            rhs = np.zeros((nt, self.ndof))
            for row, (xi, loc) in enumerate(((-0.5, fr.loc_a), (0.5, fr.loc_b))):
                A[row] = xi ** np.arange(nt)
                rhs[row, lay.value_slots[loc]] = 1.0
            for row, (xi, loc) in enumerate(((-0.5, fr.loc_a), (0.5, fr.loc_b)), start=2):
                A[row, 1:] = np.arange(1, nt) * xi ** np.arange(nt - 1)
                hv = self.vertex_scale[loc]
                rhs[row, lay.gx_slots[loc]] = he * t[0] / hv
                rhs[row, lay.gy_slots[loc]] = he * t[1] / hv
            for j in range(lay.n_edge_trace):
                A[4 + j] = mom[j, :nt]
                rhs[4 + j, lay.edge_trace_slots[i, j]] = 1.0
            self.trace_maps.append(np.linalg.solve(A, rhs))
            # normal derivative r in P_{k-1}: endpoint normal derivatives + moments
            nn = k
            An = np.zeros((nn, nn))
            rhsn = np.zeros((nn, self.ndof))
            for row, (xi, loc) in enumerate(((-0.5, fr.loc_a), (0.5, fr.loc_b))):
                An[row] = xi ** np.arange(nn)
                hv = self.vertex_scale[loc]
                rhsn[row, lay.gx_slots[loc]] = n[0] / hv
                rhsn[row, lay.gy_slots[loc]] = n[1] / hv
            for j in range(lay.n_edge_normal):
                An[2 + j] = he * mom[j, :nn]
                rhsn[2 + j, lay.edge_normal_slots[i, j]] = 1.0
            self.normal_maps.append(np.linalg.solve(An, rhsn))

    def edge_trace(self, local_edge, dofs):
        """Trace and normal-derivative polynomials of a dof vector on one edge.

        Returns coefficient vectors in powers of the scaled arclength
        coordinate; the normal derivative is taken along the edge's global
        normal (multiply by the frame's sigma for the cell-outward one).
        """
        return (self.trace_maps[local_edge] @ dofs,
                self.normal_maps[local_edge] @ dofs)

    def _edge_eval(self, fr, max_deg):
        """Vandermonde of powers of xi at the edge rule points: (max_deg+1, Q)."""
        return fr.rule.param[None, :] ** np.arange(max_deg + 1)[:, None]

    # -- dofs of polynomials --------------------------------------------------

    def _build_dof_matrix(self):
        """D[i, j] = i-th dof of the j-th scaled monomial."""
        lay = self.layout
        D = np.zeros((self.ndof, self.nP))
        vals_v = self.basis.eval(self.verts)
        grads_v = self.basis.eval_grad(self.verts)
        D[lay.value_slots] = vals_v.T
        D[lay.gx_slots] = (self.vertex_scale[:, None] * grads_v[:, :, 0].T)
        D[lay.gy_slots] = (self.vertex_scale[:, None] * grads_v[:, :, 1].T)
        for i, fr in enumerate(self.edges):
            w, pts = fr.rule.weights, fr.rule.points
            powers = self._edge_eval(fr, max(self.khat, 1))
            if lay.n_edge_normal:
                gn = self.basis.eval_grad(pts) @ fr.normal
                for j in range(lay.n_edge_normal):
                    D[lay.edge_normal_slots[i, j]] = (w * powers[j]) @ gn.T
            if lay.n_edge_trace:
                mv = self.basis.eval(pts)
                for j in range(lay.n_edge_trace):
                    D[lay.edge_trace_slots[i, j]] = (w * powers[j]) @ mv.T / fr.length
        if lay.n_interior:
            D[lay.interior_slots] = self.mass[:lay.n_interior] / self.h**2
        self.dof_matrix = D

    def _p0_rows(self):
        """Vertex-average of monomials and of their gradient components."""
        vals_v = self.basis.eval(self.verts)
        grads_v = self.basis.eval_grad(self.verts)
        return vals_v.mean(axis=1), grads_v[:, :, 0].mean(axis=1), grads_v[:, :, 1].mean(axis=1)

    def _p0_dof_rows(self):
        lay = self.layout
        m = lay.num_vertices
        r0 = np.zeros(self.ndof)
        r0[lay.value_slots] = 1.0 / m
        r1 = np.zeros(self.ndof)
        r1[lay.gx_slots] = 1.0 / (m * self.vertex_scale)
        r2 = np.zeros(self.ndof)
        r2[lay.gy_slots] = 1.0 / (m * self.vertex_scale)
        return r0, r1, r2

    # -- energy projector -----------------------------------------------------

    def _build_pi_energy(self):
        """Hessian-seminorm projector onto P_k.

        The variational rows test against all monomials; its P_1 kernel is
        pinned by matching the vertex averages of the function and of its
        gradient.  The right-hand side uses only boundary polynomials and
        interior moments: integrating the Hessian product by parts twice
        leaves edge terms in the trace/normal-derivative polynomials plus a
        bilaplacian volume term of degree k-4.
        """
        lay = self.layout
        G = self.hess_gram.copy()
        B = np.zeros((self.nP, self.ndof))
        dxlap = self.tables.dx @ self.tables.lap
        dylap = self.tables.dy @ self.tables.lap
        for i, fr in enumerate(self.edges):
            w, pts, he = fr.rule.weights, fr.rule.points, fr.length
            n_out = fr.sigma * fr.normal
            powers = self._edge_eval(fr, self.khat)
            dpow = np.zeros_like(powers[: self.khat + 1])
            dpow[1:] = powers[:-1] * np.arange(1, self.khat + 1)[:, None]
            trace_vals = powers[: self.khat + 1].T @ self.trace_maps[i]     # (Q, ndof)
            trace_der = (dpow.T @ self.trace_maps[i]) / he
            normal_vals = powers[: self.k].T @ self.normal_maps[i]
            grad_phi = (trace_der[:, None, :] * fr.tangent[None, :, None]
                        + normal_vals[:, None, :] * fr.normal[None, :, None])
            hess = self.basis.eval_hess(pts)
            hn = np.stack([hess[:, :, 0] * n_out[0] + hess[:, :, 1] * n_out[1],
                           hess[:, :, 1] * n_out[0] + hess[:, :, 2] * n_out[1]], axis=-1)
            B += np.einsum("iqd,q,qdj->ij", hn, w, grad_phi)
            vals_e = self.basis.eval(pts)
            glap_n = (vals_e.T @ dxlap) * n_out[0] + (vals_e.T @ dylap) * n_out[1]
            B -= np.einsum("qi,q,qj->ij", glap_n, w, trace_vals)
        if lay.n_interior:
            bl = self.tables.bilap[: lay.n_interior]
            B[:, lay.interior_slots] += self.h**2 * bl.T
        p0m, p0gx, p0gy = self._p0_rows()
        G[0], G[1], G[2] = p0m, p0gx, p0gy
        r0, r1, r2 = self._p0_dof_rows()
        B[0], B[1], B[2] = r0, r1, r2
        return np.linalg.solve(G, B)

    # -- computable moments up to degree k-2 -----------------------------------

    def _build_moments(self, PiD):
        """Map dofs -> integrals of the virtual function against monomials of
        degree <= k-2: stored interior moments below k-3, energy-projection
        moments (the enhancement constraint) at degrees k-3 and k-2."""
        lay = self.layout
        d_km2 = space_dim(self.k - 2)
        Mom = np.zeros((d_km2, self.ndof))
        if lay.n_interior:
            Mom[: lay.n_interior, lay.interior_slots] = self.h**2 * np.eye(lay.n_interior)
        if d_km2 > lay.n_interior:
            Mom[lay.n_interior:] = (self.mass @ PiD)[lay.n_interior:d_km2]
        return Mom

    # -- gradient-average projector (for the velocity mass form) ---------------

    def _build_pi_grad_avg(self, moments):
        """Projector defined through the gradient inner product on P_k.

        The variational system only sees gradients, so the constant mode is
        fixed by matching the vertex average of the function (the same rank
        fix the energy projector uses for its P_1 kernel).
        """
        d_km2 = space_dim(self.k - 2)
        H = self.grad_gram.copy()
        B = np.zeros((self.nP, self.ndof))
        lap = self.tables.lap[:d_km2]
        B -= lap.T @ moments
        for i, fr in enumerate(self.edges):
            w, pts = fr.rule.weights, fr.rule.points
            powers = self._edge_eval(fr, self.khat)
            trace_vals = powers[: self.khat + 1].T @ self.trace_maps[i]
            gn = self.basis.eval_grad(pts) @ (fr.sigma * fr.normal)
            B += np.einsum("iq,q,qj->ij", gn, w, trace_vals)
        p0m, _, _ = self._p0_rows()
        H[0] = p0m
        r0, _, _ = self._p0_dof_rows()
        B[0] = r0
        return np.linalg.solve(H, B)

    # -- L2-type projections ----------------------------------------------------

    def _build_l2_projections(self, moments):
        lay = self.layout
        d_km2 = space_dim(self.k - 2)
        d_km1 = space_dim(self.k - 1)
        V2 = self.mass[:d_km2, :d_km2]
        V1 = self.mass[:d_km1, :d_km1]
        PiL2_km2 = np.linalg.solve(V2, moments)

        # moments of the Laplacian against monomials of degree <= k-2
        L = np.zeros((d_km2, self.ndof))
        lap = self.tables.lap[: lay.n_interior, :d_km2]
        if lay.n_interior:
            L[:, lay.interior_slots] += self.h**2 * lap.T
        for i, fr in enumerate(self.edges):
            w, pts = fr.rule.weights, fr.rule.points
            powers = self._edge_eval(fr, self.khat)
            trace_vals = powers[: self.khat + 1].T @ self.trace_maps[i]
            normal_out = fr.sigma * (powers[: self.k].T @ self.normal_maps[i])
            vals_e = self.basis.eval(pts)[:d_km2]
            gn = self.basis.eval_grad(pts)[:d_km2] @ (fr.sigma * fr.normal)
            L += np.einsum("iq,q,qj->ij", vals_e, w, normal_out)
            L -= np.einsum("iq,q,qj->ij", gn, w, trace_vals)
        PiLap = np.linalg.solve(V2, L)

        # moments of the gradient against vector monomials of degree <= k-1
        Gx = np.zeros((d_km1, self.ndof))
        Gy = np.zeros((d_km1, self.ndof))
        Gx -= self.tables.dx[:d_km2, :d_km1].T @ moments
        Gy -= self.tables.dy[:d_km2, :d_km1].T @ moments
        for i, fr in enumerate(self.edges):
            w, pts = fr.rule.weights, fr.rule.points
            n_out = fr.sigma * fr.normal
            powers = self._edge_eval(fr, self.khat)
            trace_vals = powers[: self.khat + 1].T @ self.trace_maps[i]
            vals_e = self.basis.eval(pts)[:d_km1]
            common = np.einsum("iq,q,qj->ij", vals_e, w, trace_vals)
            Gx += n_out[0] * common
            Gy += n_out[1] * common
        PiGradX = np.linalg.solve(V1, Gx)
        PiGradY = np.linalg.solve(V1, Gy)
        PiGrad = np.stack([PiGradX, PiGradY])
        PiCurl = np.stack([PiGradY, -PiGradX])
        return PiL2_km2, PiLap, PiGrad, PiCurl

    # -- interpolation ------------------------------------------------------------

    def interpolate(self, f, fgrad):
        """Local dof vector of a smooth function given its gradient.

        Vertex slots come from point evaluation; moment slots from edge/cell
        quadrature of the defining functionals.
        """
        lay = self.layout
        dofs = np.zeros(self.ndof)
        x, y = self.verts[:, 0], self.verts[:, 1]
        dofs[lay.value_slots] = f(x, y)
        g = np.asarray(fgrad(x, y))
        dofs[lay.gx_slots] = self.vertex_scale * g[..., 0]
        dofs[lay.gy_slots] = self.vertex_scale * g[..., 1]
        for i, fr in enumerate(self.edges):
            w, pts = fr.rule.weights, fr.rule.points
            powers = self._edge_eval(fr, max(self.khat, 1))
            if lay.n_edge_normal:
                gn = np.asarray(fgrad(pts[:, 0], pts[:, 1])) @ fr.normal
                for j in range(lay.n_edge_normal):
                    dofs[lay.edge_normal_slots[i, j]] = np.sum(w * powers[j] * gn)
            if lay.n_edge_trace:
                fv = f(pts[:, 0], pts[:, 1])
                for j in range(lay.n_edge_trace):
                    dofs[lay.edge_trace_slots[i, j]] = np.sum(w * powers[j] * fv) / fr.length
        if lay.n_interior:
            pts, w = self.quad.points, self.quad.weights
            fv = f(pts[:, 0], pts[:, 1])
            mv = self._vals_q[: lay.n_interior]
            dofs[lay.interior_slots] = (mv * w) @ fv / self.h**2
        return dofs

    def polynomial_dofs(self, coeffs):
        """Dofs of the polynomial with the given monomial coefficients."""
        return self.dof_matrix @ coeffs
