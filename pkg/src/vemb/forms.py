"""Local discrete forms: stabilized mass/stiffness matrices, convection
tensors, buoyancy coupling and load vectors.

The mass and stiffness forms follow the classical projector-plus-dof-product
construction: the polynomial part is evaluated exactly through the element
Gram matrices and the remainder is stabilized by the scaled Euclidean product
of the dof vectors of the projection residual.  Convection terms integrate
products of the elementwise polynomial projections with a cell quadrature
rule, so the skew structure of the transport form holds at the matrix level.
"""

from dataclasses import dataclass

import numpy as np

from .polybasis import space_dim

__all__ = ["StabilizationWeights", "local_MF_AF", "local_MT_AT",
           "ConvectionData", "local_C", "load_psi", "load_theta"]


@dataclass
class StabilizationWeights:
    """Unit multipliers of the four dof-product stabilizers (kept configurable)."""

    mf: float = 1.0
    af: float = 1.0
    mt: float = 1.0
    at: float = 1.0


def local_MF_AF(stream, weights=None):
    """Velocity-mass and Hessian-stiffness matrices of one stream element.

    MF pairs the gradient inner product of the P_k projections with the plain
    dof product of the projection remainder; AF pairs the Hessian inner
    product with an h^-2-scaled dof product.
    """
    w = weights or StabilizationWeights()
    P = stream.projectors
    D = stream.dof_matrix
    I = np.eye(stream.ndof)
    RC = I - D @ P.PiC
    MF = P.PiC.T @ stream.grad_gram @ P.PiC + w.mf * RC.T @ RC
    RD = I - D @ P.PiD
    AF = (P.PiD.T @ stream.hess_gram @ P.PiD
          + w.af * stream.h ** (-2) * RD.T @ RD)
    return MF, AF


def local_MT_AT(temp, weights=None):
    """Temperature mass and stiffness matrices of one temperature element."""
    w = weights or StabilizationWeights()
    P = temp.projectors
    D = temp.dof_matrix
    I = np.eye(temp.ndof)
    RM = I - D @ P.PiL2_l
    MT = P.PiL2_l.T @ temp.mass @ P.PiL2_l + w.mt * temp.h**2 * RM.T @ RM
    RN = I - D @ P.PiNabla
    d1 = space_dim(temp.l - 1)
    V1 = temp.mass[:d1, :d1]
    AT = (P.PiGradT[0].T @ V1 @ P.PiGradT[0]
          + P.PiGradT[1].T @ V1 @ P.PiGradT[1]
          + w.at * RN.T @ RN)
    return MT, AT


class ConvectionData:
    """Quadrature-point evaluations of the projections entering the
    convection, coupling and load terms of one cell.

    Arrays (Q = number of cell quadrature points):

    * ``lap``  (n, Q): degree k-2 projection of the Laplacian of each stream
      dof basis function;
    * ``curl`` (n, Q, 2) and ``grad`` (n, Q, 2): degree k-1 projections of the
      curl/gradient; curl is the exact rotation of grad, which is what makes
      the fluid transport form vanish on equal arguments;
    * ``gradt`` (nt, Q, 2) and ``valt`` (nt, Q): degree l-1 projections of the
      temperature dof basis gradients/values.
    """

    def __init__(self, stream, temp):
        quad = stream.quad
        self.points = quad.points
        self.weights = quad.weights
        k, l = stream.k, temp.l
        d_km2, d_km1 = space_dim(k - 2), space_dim(k - 1)
        vals = stream.basis.eval(quad.points)
        P = stream.projectors
        self.lap = np.einsum("pi,pq->iq", P.PiLap, vals[:d_km2])
        self.curl = np.stack(
            [np.einsum("pi,pq->iq", P.PiCurl[0], vals[:d_km1]),
             np.einsum("pi,pq->iq", P.PiCurl[1], vals[:d_km1])], axis=-1)
        self.grad = np.stack(
            [np.einsum("pi,pq->iq", P.PiGrad[0], vals[:d_km1]),
             np.einsum("pi,pq->iq", P.PiGrad[1], vals[:d_km1])], axis=-1)
        d_lm1 = space_dim(l - 1)
        tvals = temp.basis.eval(quad.points)
        T = temp.projectors
        self.valt = np.einsum("pi,pq->iq", T.PiL2_lm1, tvals[:d_lm1])
        self.gradt = np.stack(
            [np.einsum("pi,pq->iq", T.PiGradT[0], tvals[:d_lm1]),
             np.einsum("pi,pq->iq", T.PiGradT[1], tvals[:d_lm1])], axis=-1)

    # -- fluid transport form -------------------------------------------------

    def bf_matrix(self, zeta):
        """Matrix of the fluid convection form frozen at transport state zeta.

        Entry (j, i): form evaluated with trial dof i and test dof j, so the
        product with a dof vector gives the test-side residual contribution.
        """
        lapz = np.einsum("iq,i->q", self.lap, zeta)
        return np.einsum("q,iqd,jqd->ji", self.weights * lapz, self.curl, self.grad)

    def bf_residual(self, psi):
        lapz = np.einsum("iq,i->q", self.lap, psi)
        curlp = np.einsum("iqd,i->qd", self.curl, psi)
        return np.einsum("q,qd,jqd->j", self.weights * lapz, curlp, self.grad)

    def bf_jacobian(self, psi):
        """Derivative of ``bf_residual`` with respect to the state dofs."""
        lapz = np.einsum("iq,i->q", self.lap, psi)
        curlp = np.einsum("iqd,i->qd", self.curl, psi)
        J = np.einsum("q,aq,qd,jqd->ja", self.weights, self.lap, curlp, self.grad)
        J += np.einsum("q,aqd,jqd->ja", self.weights * lapz, self.curl, self.grad)
        return J

    # -- skew-symmetric heat transport form ------------------------------------

    def _bt_matrix(self, psi):
        curlp = np.einsum("iqd,i->qd", self.curl, psi)
        conv = np.einsum("qd,iqd->iq", curlp, self.gradt)
        return np.einsum("q,iq,jq->ji", self.weights, conv, self.valt)

    def bskew_matrix(self, psi):
        """Exactly antisymmetrized temperature transport matrix at stream state psi."""
        BT = self._bt_matrix(psi)
        return 0.5 * (BT - BT.T)

    def bskew_residual(self, psi, theta):
        return self.bskew_matrix(psi) @ theta

    def bskew_jac_psi(self, theta):
        """Derivative of the skew transport residual with respect to the stream dofs."""
        valt_theta = np.einsum("iq,i->q", self.valt, theta)
        gradt_theta = np.einsum("iqd,i->qd", self.gradt, theta)
        # d/dpsi of 0.5*(BT(psi; theta, w_j) - BT(psi; w_j, theta))
        J = 0.5 * np.einsum("q,aqd,qd,jq->ja", self.weights, self.curl, gradt_theta, self.valt)
        J -= 0.5 * np.einsum("q,aqd,jqd,q->ja", self.weights, self.curl, self.gradt, valt_theta)
        return J


def local_C(conv, g, t):
    """Buoyancy coupling matrix: rows are temperature dofs, columns stream dofs.

    ``g`` is sampled at the quadrature points (no polynomial approximation);
    it may be a constant 2-vector or a callable g(x, y, t) -> (..., 2).
    """
    pts = conv.points
    if callable(g):
        gv = np.asarray(g(pts[:, 0], pts[:, 1], t), dtype=float)
        gv = np.broadcast_to(gv, (len(pts), 2))
    else:
        gv = np.broadcast_to(np.asarray(g, dtype=float), (len(pts), 2))
    gcurl = np.einsum("qd,jqd->jq", gv, conv.curl)
    return np.einsum("q,iq,jq->ij", conv.weights, conv.valt, gcurl)


def load_psi(conv, f_psi, t):
    """Fluid load vector: forcing dotted with the projected curl of each test dof."""
    pts = conv.points
    fv = np.asarray(f_psi(pts[:, 0], pts[:, 1], t), dtype=float)
    fv = np.broadcast_to(fv, (len(pts), 2))
    return np.einsum("q,qd,jqd->j", conv.weights, fv, conv.curl)


def load_theta(conv, f_theta, t):
    """Temperature load vector against the projected value of each test dof."""
    pts = conv.points
    fv = np.broadcast_to(np.asarray(f_theta(pts[:, 0], pts[:, 1], t), dtype=float),
                         (len(pts),))
    return np.einsum("q,q,iq->i", conv.weights, fv, conv.valt)
