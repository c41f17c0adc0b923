"""Scaled monomial bases and quadrature over polygons and edges.

All polynomial spaces in the library are spanned by monomials scaled by a
cell's centroid and diameter, ordered graded-lexicographically.  That fixed
ordering is what every projector and form matrix in the package is written
against, so it lives here and nowhere else.
"""

import numpy as np

__all__ = [
    "monomial_exponents",
    "ScaledMonomialBasis",
    "DerivativeTables",
    "monomial_derivatives",
    "QuadratureRule",
    "polygon_quadrature",
    "edge_quadrature",
    "polygon_area_centroid",
    "polygon_kernel",
]


def monomial_exponents(degree):
    """Exponent pairs (a, b) with a+b <= degree in graded lexicographic order.

    Within each total degree d the x-power descends: (d,0), (d-1,1), ..., (0,d).
    """
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


def space_dim(degree):
    """Dimension of the polynomials of total degree <= degree (0 if negative)."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


class ScaledMonomialBasis:
    """Monomials ((x-xc)/h)^a ((y-yc)/h)^b, a+b <= degree, on one cell.

    Parameters
    ----------
    centroid : (2,) array_like
        Scaling center x_c.
    diameter : float
        Scaling length h.
    degree : int
        Maximal total degree.
    """

    def __init__(self, centroid, diameter, degree):
        self.centroid = np.asarray(centroid, dtype=float)
        self.diameter = float(diameter)
        self.degree = int(degree)
        self.exponents = monomial_exponents(self.degree)
        self.dim = len(self.exponents)
        self._index = {ab: i for i, ab in enumerate(self.exponents)}
        self._expa = np.array([a for a, _ in self.exponents])
        self._expb = np.array([b for _, b in self.exponents])

    def index(self, a, b):
        return self._index[(a, b)]

    def _scaled(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.centroid) / self.diameter

    def eval(self, points):
        """Values of all basis functions: shape (dim, npoints)."""
        s = self._scaled(points)
        return s[:, 0] ** self._expa[:, None] * s[:, 1] ** self._expb[:, None]

    def eval_grad(self, points):
        """Gradients of all basis functions: shape (dim, npoints, 2)."""
        s = self._scaled(points)
        x, y = s[:, 0], s[:, 1]
        out = np.zeros((self.dim, len(s), 2))
        for i, (a, b) in enumerate(self.exponents):
            if a > 0:
                out[i, :, 0] = a * x ** (a - 1) * y**b / self.diameter
            if b > 0:
                out[i, :, 1] = b * x**a * y ** (b - 1) / self.diameter
        return out

    def eval_hess(self, points):
        """Second derivatives (xx, xy, yy) of all basis functions: (dim, npoints, 3)."""
        s = self._scaled(points)
        x, y = s[:, 0], s[:, 1]
        h2 = self.diameter**2
        out = np.zeros((self.dim, len(s), 3))
        for i, (a, b) in enumerate(self.exponents):
            if a > 1:
                out[i, :, 0] = a * (a - 1) * x ** (a - 2) * y**b / h2
            if a > 0 and b > 0:
                out[i, :, 1] = a * b * x ** (a - 1) * y ** (b - 1) / h2
            if b > 1:
                out[i, :, 2] = b * (b - 1) * x**a * y ** (b - 2) / h2
        return out


class DerivativeTables:
    """Exact differentiation matrices on a scaled monomial basis.

    Each matrix maps coefficient vectors to coefficient vectors of the
    derivative, expressed in the same (graded) basis; the image always sits in
    the lower-degree prefix.  Entries are integer combinatorics divided by
    powers of the cell diameter, so differentiation is exact.
    """

    def __init__(self, basis):
        n, h = basis.dim, basis.diameter
        dx = np.zeros((n, n))
        dy = np.zeros((n, n))
        for j, (a, b) in enumerate(basis.exponents):
            if a > 0:
                dx[basis.index(a - 1, b), j] = a / h
            if b > 0:
                dy[basis.index(a, b - 1), j] = b / h
        self.dx = dx
        self.dy = dy
        self.dxx = dx @ dx
        self.dxy = dx @ dy
        self.dyy = dy @ dy
        self.lap = self.dxx + self.dyy
        self.bilap = self.lap @ self.lap


def monomial_derivatives(basis):
    """Derivative tables (gradient, Hessian, Laplacian, bilaplacian) for a basis."""
    return DerivativeTables(basis)


class QuadratureRule:
    """Points and positive weights; weights sum to the measure of the domain."""

    def __init__(self, points, weights, param=None):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        # param: for edge rules, the scaled arclength coordinate in [-1/2, 1/2]
        self.param = None if param is None else np.asarray(param, dtype=float)

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def polygon_area_centroid(vertices):
    """Signed area and centroid of a simple polygon (CCW loops are positive)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, np.array([np.nan, np.nan])
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def _point_in_kernel(vertices, point, tol=1e-12):
    """Whether ``point`` sees every edge of the CCW polygon from its left side."""
    v = np.asarray(vertices, dtype=float)
    d = np.roll(v, -1, axis=0) - v
    rel = np.asarray(point) - v
    cross = d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0]
    scale = np.linalg.norm(d, axis=1) * max(np.abs(rel).max(), 1e-30)
    return np.all(cross >= -tol * np.maximum(scale, 1e-30))


def polygon_kernel(vertices):
    """Chebyshev center and radius of the star-shape kernel of a CCW polygon.

    The kernel is the intersection of the half-planes to the left of each
    directed edge; the largest inscribed ball is found by the standard linear
    program max r s.t. n_e . x - r >= n_e . p_e with unit inward normals.
    Returns (center, radius); radius <= 0 means the kernel is empty.
    """
    from scipy.optimize import linprog

    v = np.asarray(vertices, dtype=float)
    d = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(d, axis=1)
    n_in = np.column_stack([-d[:, 1], d[:, 0]]) / lengths[:, None]
    # variables (x, y, r): maximize r subject to n_in.(p - v_e) >= r
    A_ub = np.column_stack([-n_in, np.ones(len(v))])
    b_ub = -np.einsum("ij,ij->i", n_in, v)
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    bounds = [(lo[0], hi[0]), (lo[1], hi[1]), (None, None)]
    res = linprog(c=[0.0, 0.0, -1.0], A_ub=A_ub, b_ub=b_ub, bounds=bounds,
                  method="highs")
    if not res.success:
        return None, -np.inf
    return res.x[:2].copy(), res.x[2]


_TRI_RULE_CACHE = {}


def _reference_triangle_rule(order):
    """Gauss rule on the triangle (0,0),(1,0),(0,1), exact for degree <= order.

    Built by collapsing a tensor Gauss-Legendre rule through the Duffy map
    (x, y) = (u, v(1-u)); the extra Jacobian factor (1-u) raises the required
    u-degree by one.  All weights stay positive.
    """
    if order in _TRI_RULE_CACHE:
        return _TRI_RULE_CACHE[order]
    nu = (order + 2 + 1) // 2
    nv = (order + 1 + 1) // 2
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xv, wv = np.polynomial.legendre.leggauss(nv)
    u = 0.5 * (xu + 1.0)
    v = 0.5 * (xv + 1.0)
    wu = 0.5 * wu
    wv = 0.5 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * (1.0 - U)
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    rule = (pts, W.ravel())
    _TRI_RULE_CACHE[order] = rule
    return rule


def polygon_quadrature(vertices, order, fan_point=None):
    """Quadrature exact for polynomials of total degree <= order on a polygon.

    The polygon is fanned into triangles from an interior point that sees the
    whole boundary: the centroid when the cell is star-shaped with respect to
    it, otherwise the kernel's Chebyshev center.  A mapped triangle Gauss rule
    is applied on each fan triangle.

    Raises
    ------
    ValueError
        If the polygon has an empty kernel (no valid fan point exists).
    """
    v = np.asarray(vertices, dtype=float)
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    if fan_point is None:
        _, centroid = polygon_area_centroid(v)
        fan_point = centroid
        if not _point_in_kernel(v, fan_point):
            fan_point, radius = polygon_kernel(v)
            if fan_point is None or radius <= 0.0:
                raise ValueError("polygon has empty kernel; cannot build a fan quadrature")
    ref_pts, ref_w = _reference_triangle_rule(order)
    pts = []
    wts = []
    m = len(v)
    for i in range(m):
        a, b = v[i], v[(i + 1) % m]
        e1 = a - fan_point
        e2 = b - fan_point
        det = e1[0] * e2[1] - e1[1] * e2[0]
        mapped = fan_point + np.outer(ref_pts[:, 0], e1) + np.outer(ref_pts[:, 1], e2)
        pts.append(mapped)
        wts.append(ref_w * det)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts))


def edge_quadrature(p0, p1, npts):
    """Gauss-Legendre rule along the segment p0-p1, exact for degree <= 2*npts-1.

    The returned rule carries ``param``, the scaled arclength coordinate
    ((x - midpoint) . t) / length in [-1/2, 1/2], used to evaluate edge
    monomials.
    """
    if npts < 1:
        raise ValueError("npts must be >= 1")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    x, w = np.polynomial.legendre.leggauss(npts)
    xi = 0.5 * x  # in [-1/2, 1/2]
    length = np.linalg.norm(p1 - p0)
    mid = 0.5 * (p0 + p1)
    pts = mid + np.outer(xi, p1 - p0)
    return QuadratureRule(pts, 0.5 * w * length, param=xi)


def edge_monomial_moments(max_i, max_j):
    """Closed-form matrix of integrals over [-1/2, 1/2] of xi^(i+j)."""
    out = np.zeros((max_i + 1, max_j + 1))
    for i in range(max_i + 1):
        for j in range(max_j + 1):
            n = i + j
            if n % 2 == 0:
                out[i, j] = 1.0 / ((n + 1) * 2**n)
    return out
