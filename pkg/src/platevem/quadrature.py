"""Scaled monomial bases and quadrature on edges, triangles, and polygons.

All polynomial spaces on an element K use the scaled monomial basis

    m_a(x) = ((x - x_K) / h_K)^a,   |a| <= degree,

ordered graded-lexicographically: (0,0), (1,0), (0,1), (2,0), (1,1), ...
The same scaling convention is used on edges with the midpoint as center
and the edge length as diameter, so the 1D coordinate lives in [-1/2, 1/2].
Bases of different degrees on the same element are nested prefixes of each
other, which the projector code relies on throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def poly_dim(degree: int) -> int:
    """Dimension of the space of 2D polynomials of total degree <= degree."""
    if degree < 0:
        return 0
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> np.ndarray:
    """Exponent pairs of the graded-lex monomial basis, shape (dim, 2)."""
    exps = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    out = np.array(exps, dtype=np.int64).reshape(-1, 2)
    out.setflags(write=False)
    return out


def _falling(n: np.ndarray, k: int) -> np.ndarray:
    """Falling factorial n (n-1) ... (n-k+1), elementwise."""
    out = np.ones_like(n, dtype=np.float64)
    for i in range(k):
        out = out * (n - i)
    return out


@lru_cache(maxsize=None)
def _deriv_tables(degree: int, dx: int, dy: int):
    """Reduced exponents and factorial weights of d^(dx,dy) m_a, precomputed."""
    exps = monomial_exponents(degree)
    ax = exps[:, 0] - dx
    ay = exps[:, 1] - dy
    coef = _falling(exps[:, 0], dx) * _falling(exps[:, 1], dy)
    valid = (ax >= 0) & (ay >= 0)
    ax = np.where(valid, ax, 0)
    ay = np.where(valid, ay, 0)
    coef = np.where(valid, coef, 0.0)
    for arr in (ax, ay, coef):
        arr.setflags(write=False)
    return ax, ay, coef


@dataclass(frozen=True)
class ScaledMonomialBasis:
    """Scaled monomials on one element: center x_K, diameter h_K, max degree."""

    center: tuple[float, float]
    diameter: float
    degree: int

    @property
    def dim(self) -> int:
        return poly_dim(self.degree)

    def eval(self, pts: np.ndarray, deriv: tuple[int, int] = (0, 0)) -> np.ndarray:
        """Evaluate d^deriv m_a at pts, returning shape (npts, dim).

        Derivatives of a scaled monomial stay in the family:
        d_x m_(a,b) = (a / h_K) m_(a-1,b), so the table is exact.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        dx, dy = deriv
        ax, ay, coef = _deriv_tables(self.degree, dx, dy)
        sx = (pts[:, 0] - self.center[0]) / self.diameter
        sy = (pts[:, 1] - self.center[1]) / self.diameter
        vals = sx[:, None] ** ax * sy[:, None] ** ay
        return vals * (coef / self.diameter ** (dx + dy))

    def deriv_matrix(self, deriv: tuple[int, int], degree_in: int | None = None) -> np.ndarray:
        """Coefficient map M_degree_in -> M_(degree_in - |deriv|) for d^deriv.

        Columns index input monomials, rows index the (lower-degree) output
        basis; each column has at most one nonzero entry.
        """
        if degree_in is None:
            degree_in = self.degree
        dx, dy = deriv
        deg_out = degree_in - dx - dy
        exps_in = monomial_exponents(degree_in)
        out = np.zeros((poly_dim(deg_out), poly_dim(degree_in)))
        if deg_out < 0:
            return out
        index_out = {(int(a), int(b)): i for i, (a, b) in enumerate(monomial_exponents(deg_out))}
        coef = _falling(exps_in[:, 0], dx) * _falling(exps_in[:, 1], dy)
        coef = coef / self.diameter ** (dx + dy)
        for j, (a, b) in enumerate(exps_in):
            ra, rb = int(a) - dx, int(b) - dy
            if ra >= 0 and rb >= 0:
                out[index_out[(ra, rb)], j] = coef[j]
        return out


def eval_basis(basis: ScaledMonomialBasis, pts: np.ndarray,
               deriv: tuple[int, int] = (0, 0)) -> np.ndarray:
    """Functional alias for ScaledMonomialBasis.eval."""
    return basis.eval(pts, deriv)


# ---------------------------------------------------------------------------
# quadrature rules


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (n, 2) physical coordinates
    weights: np.ndarray  # (n,), sum equals the measure of the domain

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def gauss_01(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]; exact to degree 2 npts - 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1.0) / 2.0, w / 2.0


def edge_rule(p0: np.ndarray, p1: np.ndarray, order: int) -> QuadratureRule:
    """Gauss rule along the segment p0 -> p1, exact for degree <= order."""
    npts = max(1, (order + 2) // 2)
    t, w = gauss_01(npts)
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    length = float(np.hypot(*(p1 - p0)))
    return QuadratureRule(pts, w * length)


@lru_cache(maxsize=None)
def edge_monomial_integrals(max_power: int) -> np.ndarray:
    """I_m = int_{-1/2}^{1/2} s^m ds for m = 0..max_power."""
    m = np.arange(max_power + 1)
    vals = np.where(m % 2 == 0, 0.5 ** m / (m + 1.0), 0.0)
    return vals


@lru_cache(maxsize=None)
def triangle_rule_reference(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed-square Gauss rule on the triangle (0,0), (1,0), (0,1).

    The Duffy map x = a, y = b (1 - a) turns a degree-p integrand into a
    polynomial of degree p+1 in a (Jacobian included) and p in b, so the
    tensor rule below is exact for total degree <= order.
    """
    na = max(1, (order + 3) // 2)
    nb = max(1, (order + 2) // 2)
    a, wa = gauss_01(na)
    b, wb = gauss_01(nb)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = A.ravel()
    y = (B * (1.0 - A)).ravel()
    w = (WA * WB * (1.0 - A)).ravel()
    pts = np.column_stack([x, y])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def _map_to_triangle(tri: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    ref_pts, ref_w = triangle_rule_reference(order)
    v0, v1, v2 = tri
    jac = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1])
    pts = v0[None, :] + np.outer(ref_pts[:, 0], v1 - v0) + np.outer(ref_pts[:, 1], v2 - v0)
    return pts, ref_w * jac


def polygon_area_centroid(coords: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed area and area centroid of a simple polygon (shoelace)."""
    x = coords[:, 0]
    y = coords[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    if abs(area) < 1e-300:
        raise ValueError("degenerate polygon with zero area")
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return area, np.array([cx, cy])


def _earclip(coords: np.ndarray) -> list[np.ndarray]:
    """Triangulate a simple CCW polygon by ear clipping (small n only)."""
    idx = list(range(len(coords)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise ValueError("ear clipping failed; polygon may self-intersect")
        n = len(idx)
        clipped = False
        for pos in range(n):
            i0, i1, i2 = idx[pos - 1], idx[pos], idx[(pos + 1) % n]
            a, b, c = coords[i0], coords[i1], coords[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 0.0:
                continue
            # no remaining vertex may sit inside the candidate ear
            ear_ok = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = coords[j]
                d0 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                d1 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
                d2 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
                if d0 >= 0 and d1 >= 0 and d2 >= 0:
                    ear_ok = False
                    break
            if ear_ok:
                tris.append(np.array([a, b, c]))
                idx.pop(pos)
                clipped = True
                break
        if not clipped:
            raise ValueError("ear clipping failed; polygon may self-intersect")
    tris.append(coords[idx])
    return tris


def polygon_rule(coords: np.ndarray, order: int,
                 centroid: np.ndarray | None = None,
                 subdivide: int = 0) -> QuadratureRule:
    """Quadrature on a simple polygon, exact for degree <= order.

    Fans the polygon from the area centroid; non-star-shaped cells (a fan
    triangle with non-positive area) fall back to ear clipping.  With
    subdivide = s > 0 every triangle is split 4^s-fold through edge
    midpoints before the rule is laid down, which is used to tame nearly
    singular integrands without raising the order.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if centroid is None:
        _, centroid = polygon_area_centroid(coords)
    tris = []
    n = len(coords)
    star = True
    for i in range(n):
        a, b = coords[i], coords[(i + 1) % n]
        jac = (a[0] - centroid[0]) * (b[1] - centroid[1]) - (b[0] - centroid[0]) * (a[1] - centroid[1])
        if jac <= 0.0:
            star = False
            break
        tris.append(np.array([centroid, a, b]))
    if not star:
        tris = _earclip(coords)
    for _ in range(subdivide):
        finer = []
        for tri in tris:
            m01 = 0.5 * (tri[0] + tri[1])
            m12 = 0.5 * (tri[1] + tri[2])
            m20 = 0.5 * (tri[2] + tri[0])
            finer += [np.array([tri[0], m01, m20]), np.array([m01, tri[1], m12]),
                      np.array([m20, m12, tri[2]]), np.array([m01, m12, m20])]
        tris = finer
    all_pts = []
    all_w = []
    for tri in tris:
        pts, w = _map_to_triangle(tri, order)
        all_pts.append(pts)
        all_w.append(w)
    return QuadratureRule(np.vstack(all_pts), np.concatenate(all_w))
