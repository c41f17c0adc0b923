"""Local C0-conforming virtual element for the temperature field.

Slot order per cell: vertex values (CCW), then per-edge length-scaled trace
moments up to degree l-2, then diameter-scaled interior moments up to degree
l-2.  Edge moments live in the global edge frame, like the stream element.
"""

import numpy as np

from .polybasis import (ScaledMonomialBasis, edge_monomial_moments,
                        edge_quadrature, monomial_derivatives,
                        polygon_quadrature, space_dim)

__all__ = ["TempDofLayout", "TempProjectors", "TempElement"]


class TempDofLayout:
    def __init__(self, l, num_vertices):
        if l < 1:
            raise ValueError("temperature space needs l >= 1")
        self.l = l
        m = num_vertices
        self.num_vertices = m
        self.n_edge = max(l - 1, 0)
        self.n_interior = space_dim(l - 2)
        self.value_slots = np.arange(m)
        self.edge_slots = np.array(
            [m + i * self.n_edge + np.arange(self.n_edge) for i in range(m)],
            dtype=int).reshape(m, self.n_edge)
        self.interior_slots = m + m * self.n_edge + np.arange(self.n_interior)
        self.ndof = m + m * self.n_edge + self.n_interior


class TempProjectors:
    def __init__(self, PiNabla, PiL2_l, PiL2_lm1, PiGradT):
        self.PiNabla = PiNabla      # (dim P_l, ndof)
        self.PiL2_l = PiL2_l        # (dim P_l, ndof)
        self.PiL2_lm1 = PiL2_lm1    # (dim P_{l-1}, ndof)
        self.PiGradT = PiGradT      # (2, dim P_{l-1}, ndof)


class TempElement:
    """Per-cell projectors of the degree-l temperature space."""

    def __init__(self, mesh, ic, l, quad=None):
        self.cell_index = ic
        loop = mesh.cells[ic]
        self.layout = TempDofLayout(l, len(loop))
        self.l = l
        self.verts = mesh.cell_vertices(ic)
        self.h = float(mesh.cell_diameter[ic])
        self.area = float(mesh.cell_area[ic])
        self.centroid = mesh.cell_centroid[ic]
        self.basis = ScaledMonomialBasis(self.centroid, self.h, l)
        self.tables = monomial_derivatives(self.basis)
        self.nP = self.basis.dim
        self.ndof = self.layout.ndof
        if quad is None:
            quad = polygon_quadrature(self.verts, order=2 * l + 2)
        self.quad = quad
        self._build_edges(mesh, ic)
        self._build_grams()
        self._build_trace_maps()
        self._build_dof_matrix()
        self._build_projectors()

    def _build_edges(self, mesh, ic):
        loop = mesh.cells[ic]
        m = len(loop)
        npts = self.l + 1
        self.edges = []
        for i in range(m):
            eid = mesh.cell_edges[ic][i]
            sigma = int(mesh.cell_edge_orient[ic][i])
            loc_a, loc_b = (i, (i + 1) % m) if sigma == 1 else ((i + 1) % m, i)
            a, b = mesh.edges[eid]
            rule = edge_quadrature(mesh.vertices[a], mesh.vertices[b], npts)
            self.edges.append((eid, sigma, loc_a, loc_b,
                               mesh.edge_tangent[eid], mesh.edge_normal[eid],
                               mesh.edge_length[eid], rule))

    def _build_grams(self):
        pts, w = self.quad.points, self.quad.weights
        vals = self.basis.eval(pts)
        grads = self.basis.eval_grad(pts)
        self._vals_q = vals
        self.mass = np.einsum("iq,q,jq->ij", vals, w, vals)
        self.grad_gram = np.einsum("iqd,q,jqd->ij", grads, w, grads)

    def _build_trace_maps(self):
        """Dof-to-coefficient maps of the P_l edge traces (global frame)."""
        lay = self.layout
        l = self.l
        mom = edge_monomial_moments(l, l)
        self.trace_maps = []
        for i, (eid, sigma, loc_a, loc_b, t, n, he, rule) in enumerate(self.edges):
            nt = l + 1
            A = np.zeros((nt, nt))
            rhs = np.zeros((nt, self.ndof))
            for row, (xi, loc) in enumerate(((-0.5, loc_a), (0.5, loc_b))):
                A[row] = xi ** np.arange(nt)
                rhs[row, lay.value_slots[loc]] = 1.0
            for j in range(lay.n_edge):
                A[2 + j] = mom[j, :nt]
                rhs[2 + j, lay.edge_slots[i, j]] = 1.0
            self.trace_maps.append(np.linalg.solve(A, rhs))

    def edge_trace(self, local_edge, dofs):
        return self.trace_maps[local_edge] @ dofs

    def _build_dof_matrix(self):
        lay = self.layout
        D = np.zeros((self.ndof, self.nP))
        D[lay.value_slots] = self.basis.eval(self.verts).T
        for i, (eid, sigma, loc_a, loc_b, t, n, he, rule) in enumerate(self.edges):
            if lay.n_edge:
                w = rule.weights
                powers = rule.param[None, :] ** np.arange(self.l + 1)[:, None]
                mv = self.basis.eval(rule.points)
                for j in range(lay.n_edge):
                    D[lay.edge_slots[i, j]] = (w * powers[j]) @ mv.T / he
        if lay.n_interior:
            D[lay.interior_slots] = self.mass[: lay.n_interior] / self.h**2
        self.dof_matrix = D

    def _build_projectors(self):
        lay = self.layout
        l = self.l
        d_lm1 = space_dim(l - 1)
        d_lm2 = space_dim(l - 2)

        # gradient projector with the vertex-average constraint on the kernel
        G = self.grad_gram.copy()
        B = np.zeros((self.nP, self.ndof))
        if lay.n_interior:
            lap = self.tables.lap[:d_lm2]
            B[:, lay.interior_slots] -= self.h**2 * lap.T
        for i, (eid, sigma, loc_a, loc_b, t, n, he, rule) in enumerate(self.edges):
            w = rule.weights
            powers = rule.param[None, :] ** np.arange(l + 1)[:, None]
            trace_vals = powers.T @ self.trace_maps[i]
            gn = self.basis.eval_grad(rule.points) @ (sigma * n)
            B += np.einsum("iq,q,qj->ij", gn, w, trace_vals)
        G[0] = self.basis.eval(self.verts).mean(axis=1)
        B[0] = 0.0
        B[0, lay.value_slots] = 1.0 / lay.num_vertices
        PiNabla = np.linalg.solve(G, B)

        # computable moments up to degree l: stored ones below l-1, projector
        # moments (enhancement constraint) at degrees l-1 and l
        Mom = np.zeros((self.nP, self.ndof))
        if lay.n_interior:
            Mom[:d_lm2, lay.interior_slots] = self.h**2 * np.eye(d_lm2)
        Mom[d_lm2:] = (self.mass @ PiNabla)[d_lm2:]
        self.moments = Mom
        PiL2_l = np.linalg.solve(self.mass, Mom)
        PiL2_lm1 = np.linalg.solve(self.mass[:d_lm1, :d_lm1], Mom[:d_lm1])

        # gradient moments against vector monomials of degree <= l-1
        Gx = np.zeros((d_lm1, self.ndof))
        Gy = np.zeros((d_lm1, self.ndof))
        if d_lm2:
            Gx -= self.tables.dx[:d_lm2, :d_lm1].T @ Mom[:d_lm2]
            Gy -= self.tables.dy[:d_lm2, :d_lm1].T @ Mom[:d_lm2]
        for i, (eid, sigma, loc_a, loc_b, t, n, he, rule) in enumerate(self.edges):
            w = rule.weights
            n_out = sigma * n
            powers = rule.param[None, :] ** np.arange(l + 1)[:, None]
            trace_vals = powers.T @ self.trace_maps[i]
            vals_e = self.basis.eval(rule.points)[:d_lm1]
            common = np.einsum("iq,q,qj->ij", vals_e, w, trace_vals)
            Gx += n_out[0] * common
            Gy += n_out[1] * common
        V1 = self.mass[:d_lm1, :d_lm1]
        PiGradT = np.stack([np.linalg.solve(V1, Gx), np.linalg.solve(V1, Gy)])
        self.projectors = TempProjectors(PiNabla, PiL2_l, PiL2_lm1, PiGradT)

    def interpolate(self, f):
        """Local dof vector of a continuous function."""
        lay = self.layout
        dofs = np.zeros(self.ndof)
        dofs[lay.value_slots] = f(self.verts[:, 0], self.verts[:, 1])
        for i, (eid, sigma, loc_a, loc_b, t, n, he, rule) in enumerate(self.edges):
            if lay.n_edge:
                w = rule.weights
                powers = rule.param[None, :] ** np.arange(self.l + 1)[:, None]
                fv = f(rule.points[:, 0], rule.points[:, 1])
                for j in range(lay.n_edge):
                    dofs[lay.edge_slots[i, j]] = np.sum(w * powers[j] * fv) / he
        if lay.n_interior:
            pts, w = self.quad.points, self.quad.weights
            fv = f(pts[:, 0], pts[:, 1])
            dofs[lay.interior_slots] = (self._vals_q[: lay.n_interior] * w) @ fv / self.h**2
        return dofs

    def polynomial_dofs(self, coeffs):
        return self.dof_matrix @ coeffs
