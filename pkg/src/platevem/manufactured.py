"""Manufactured solution cases, error norms, and convergence-rate tables.

Each case packages exact fields, loads derived from the strong form

    u + bilap(u) + alpha lap(p) = f
    beta p - alpha lap(u) - gamma lap(p) = g,

boundary labeling, and the boundary data needed when the exact solution
does not satisfy the homogeneous natural conditions (bending moment on
simply supported edges, combined flux on pressure-Neumann edges).

Errors are measured against the projected discrete solution: broken H2
seminorm of u - pd(u_h), broken H1 seminorm of p - pg(p_h), their L2
counterparts, and the parameter-weighted combined norm

    ||(v, q)||^2 = ||v||^2 + |v|_2^2 + beta ||q||^2 + gamma |q|_1^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .assembly import AssembledSystem, ModelParams
from .mesh import BoundaryLabel, PolygonalMesh
from .quadrature import poly_dim


Pointwise = Callable[[np.ndarray], np.ndarray]


@dataclass
class ManufacturedCase:
    name: str
    params: ModelParams
    labeler: Callable
    pressure_dirichlet_on_clamped: bool
    domain: str                      # "unit-square" or "lshape"
    u: Pointwise
    grad_u: Pointwise                # (n, 2)
    hess_u: Pointwise                # (n, 3): xx, xy, yy
    p: Pointwise
    grad_p: Pointwise
    f: Pointwise
    g: Pointwise
    singular_points: tuple[tuple[float, float], ...] = ()

    def bending_moment_data(self, pts: np.ndarray, normal: np.ndarray) -> np.ndarray:
        H = self.hess_u(pts)
        nx, ny = normal
        return H[:, 0] * nx * nx + 2.0 * H[:, 1] * nx * ny + H[:, 2] * ny * ny

    def pressure_flux_data(self, pts: np.ndarray, normal: np.ndarray) -> np.ndarray:
        gp = self.grad_p(pts) @ normal
        gu = self.grad_u(pts) @ normal
        return self.params.gamma * gp + self.params.alpha * gu

    def singular_cells(self, mesh: PolygonalMesh, tol: float = 1e-10) -> frozenset[int]:
        if not self.singular_points:
            return frozenset()
        pts = np.asarray(self.singular_points)
        hits = set()
        for c in range(mesh.ncells):
            coords = mesh.cell_coords(c)
            d = np.linalg.norm(coords[:, None, :] - pts[None, :, :], axis=2)
            if d.min() < tol:
                hits.add(c)
        return frozenset(hits)


# ---------------------------------------------------------------------------
# case constructors


def _wrap(fn) -> Pointwise:
    def w(pts: np.ndarray) -> np.ndarray:
        out = fn(pts[:, 0], pts[:, 1])
        return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()
    return w


def case_from_expressions(name: str, u_expr, p_expr, params: ModelParams,
                          labeler, pressure_dirichlet_on_clamped: bool,
                          domain: str) -> ManufacturedCase:
    """Build every closure from two sympy expressions in x, y."""
    x, y = sp.symbols("x y")
    lap = lambda e: sp.diff(e, x, 2) + sp.diff(e, y, 2)
    f_expr = u_expr + lap(lap(u_expr)) + params.alpha * lap(p_expr)
    g_expr = params.beta * p_expr - params.alpha * lap(u_expr) \
        - params.gamma * lap(p_expr)

    def lam(e):
        return _wrap(sp.lambdify((x, y), sp.expand(e), "numpy"))

    ux, uy = sp.diff(u_expr, x), sp.diff(u_expr, y)
    uxf, uyf = lam(ux), lam(uy)
    hxx, hxy, hyy = lam(sp.diff(ux, x)), lam(sp.diff(ux, y)), lam(sp.diff(uy, y))
    pxf, pyf = lam(sp.diff(p_expr, x)), lam(sp.diff(p_expr, y))
    return ManufacturedCase(
        name=name, params=params, labeler=labeler,
        pressure_dirichlet_on_clamped=pressure_dirichlet_on_clamped,
        domain=domain,
        u=lam(u_expr),
        grad_u=lambda pts: np.stack([uxf(pts), uyf(pts)], axis=1),
        hess_u=lambda pts: np.stack([hxx(pts), hxy(pts), hyy(pts)], axis=1),
        p=lam(p_expr),
        grad_p=lambda pts: np.stack([pxf(pts), pyf(pts)], axis=1),
        f=lam(f_expr), g=lam(g_expr))


def smooth_square_labeler(edge_mid: np.ndarray, tol: float = 1e-12) -> BoundaryLabel:
    """Clamped on the two coordinate axes, simply supported elsewhere."""
    if edge_mid[0] < tol or edge_mid[1] < tol:
        return BoundaryLabel.CLAMPED
    return BoundaryLabel.SIMPLY_SUPPORTED


def _all_clamped(edge_mid: np.ndarray) -> BoundaryLabel:
    return BoundaryLabel.CLAMPED


def smooth_case(params: ModelParams | None = None) -> ManufacturedCase:
    """Trigonometric solution on the unit square with mixed boundary parts."""
    params = params if params is not None else ModelParams(1.0, 1.0, 1.0)
    x, y = sp.symbols("x y")
    u = sp.sin(sp.pi * x) ** 2 * sp.sin(sp.pi * y) ** 2
    p = sp.cos(sp.pi * x * y)
    return case_from_expressions("smooth", u, p, params, smooth_square_labeler,
                                 False, "unit-square")


def polynomial_case(k: int, l: int, params: ModelParams | None = None,
                    seed: int = 7, domain: str = "unit-square") -> ManufacturedCase:
    """Dense random polynomials of exactly the discrete degrees.

    Both fields carry every monomial up to degree k respectively l, so a
    scheme only passes when all dof classes and all data terms are exact.
    """
    params = params if params is not None else ModelParams(1.0, 1.0, 1.0)
    rng = np.random.default_rng(seed)
    x, y = sp.symbols("x y")

    def poly(deg):
        e = sp.Integer(0)
        for d in range(deg + 1):
            for ix in range(d, -1, -1):
                c = sp.Rational(int(rng.integers(-9, 10)), 4)
                e += c * x ** ix * y ** (d - ix)
        return e

    u = poly(k)
    p = poly(l)
    return case_from_expressions(f"poly-k{k}-l{l}", u, p, params, _all_clamped,
                                 True, domain)


def lshape_case(params: ModelParams | None = None) -> ManufacturedCase:
    """Corner-singular harmonic pair on the L-shaped domain.

    u = r^(5/3) sin(5 theta / 3) and p = r^(2/3) sin(2 theta / 3) with the
    angle measured from the positive x axis; both are harmonic, so the
    loads collapse to f = u and g = beta p.  The deflection is clamped and
    the pressure is Dirichlet on the whole boundary.
    """
    params = params if params is not None else ModelParams(1.0, 1.0, 1.0)
    a = 5.0 / 3.0
    c = 2.0 / 3.0

    def polar(pts):
        r = np.hypot(pts[:, 0], pts[:, 1])
        th = np.arctan2(pts[:, 1], pts[:, 0])
        th = np.where(th < 0.0, th + 2.0 * np.pi, th)
        return r, th

    def rpow(r, e):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0.0, r ** e, 0.0)
        return out

    def u(pts):
        r, th = polar(pts)
        return r ** a * np.sin(a * th)

    def grad_u(pts):
        r, th = polar(pts)
        s = a * rpow(r, a - 1.0)
        return np.stack([s * np.sin((a - 1.0) * th), s * np.cos((a - 1.0) * th)], axis=1)

    def hess_u(pts):
        r, th = polar(pts)
        s = a * (a - 1.0) * rpow(r, a - 2.0)
        return np.stack([s * np.sin((a - 2.0) * th), s * np.cos((a - 2.0) * th),
                         -s * np.sin((a - 2.0) * th)], axis=1)

    def p(pts):
        r, th = polar(pts)
        return r ** c * np.sin(c * th)

    def grad_p(pts):
        r, th = polar(pts)
        s = c * rpow(r, c - 1.0)
        return np.stack([s * np.sin((c - 1.0) * th), s * np.cos((c - 1.0) * th)], axis=1)

    beta = params.beta
    return ManufacturedCase(
        name="lshape", params=params, labeler=_all_clamped,
        pressure_dirichlet_on_clamped=True, domain="lshape",
        u=u, grad_u=grad_u, hess_u=hess_u, p=p, grad_p=grad_p,
        f=u, g=lambda pts: beta * p(pts),
        singular_points=((0.0, 0.0),))


_CASES = {"smooth": smooth_case, "lshape": lshape_case}


def get_case(name: str, params: ModelParams | None = None, k: int = 2,
             l: int = 1, **kw) -> ManufacturedCase:
    if name in _CASES:
        return _CASES[name](params)
    if name.startswith("poly"):
        return polynomial_case(k, l, params, **kw)
    raise KeyError(f"unknown case {name!r}; have {sorted(_CASES) + ['poly']}")


# ---------------------------------------------------------------------------
# error measurement


@dataclass
class ErrorReport:
    h: float
    ndof: int
    err_u_h2: float
    err_p_h1: float
    err_u_l2: float
    err_p_l2: float
    energy: float
    osc_f: float
    osc_g: float
    cell_energy2: np.ndarray = field(repr=False, default=None)


def compute_errors(system: AssembledSystem, U: np.ndarray, P: np.ndarray,
                   case: ManufacturedCase, order: int | None = None,
                   singular_subdivide: int = 3) -> ErrorReport:
    k = system.space_u.degree
    l = system.space_p.degree
    order = order if order is not None else 2 * k + 4
    beta, gamma = system.params.beta, system.params.gamma
    singular = case.singular_cells(system.mesh)

    e_u2 = e_p1 = e_u0 = e_p0 = 0.0
    osc_f = osc_g = 0.0
    cell_energy2 = np.zeros(system.mesh.ncells)
    for op in system.elements:
        cell = op.cell
        sub = singular_subdivide if cell in singular else 0
        rule = op.ctx.rule(order, sub)
        pts, w = rule.points, rule.weights
        uloc = U[system.dof_u.cell_dofs[cell]]
        ploc = P[system.dof_p.cell_dofs[cell]]

        cu = op.defl.pd @ uloc
        cu0 = op.defl.l2 @ uloc
        cp = op.pres.pg[l] @ ploc
        cp0 = op.pres.l2 @ ploc
        nk, nl = poly_dim(k), poly_dim(l)
        Vu = op.ctx.basis.eval(pts)[:, :nk]
        Vxx = op.ctx.basis.eval(pts, (2, 0))[:, :nk]
        Vxy = op.ctx.basis.eval(pts, (1, 1))[:, :nk]
        Vyy = op.ctx.basis.eval(pts, (0, 2))[:, :nk]
        Hex = case.hess_u(pts)
        d_xx = Hex[:, 0] - Vxx @ cu
        d_xy = Hex[:, 1] - Vxy @ cu
        d_yy = Hex[:, 2] - Vyy @ cu
        k_u2 = float(w @ (d_xx ** 2 + 2.0 * d_xy ** 2 + d_yy ** 2))
        k_u0 = float(w @ (case.u(pts) - Vu @ cu0) ** 2)

        Vp = op.ctx.basis.eval(pts)[:, :nl]
        Vpx = op.ctx.basis.eval(pts, (1, 0))[:, :nl]
        Vpy = op.ctx.basis.eval(pts, (0, 1))[:, :nl]
        Gex = case.grad_p(pts)
        d_px = Gex[:, 0] - Vpx @ cp
        d_py = Gex[:, 1] - Vpy @ cp
        k_p1 = float(w @ (d_px ** 2 + d_py ** 2))
        k_p0 = float(w @ (case.p(pts) - Vp @ cp0) ** 2)

        e_u2 += k_u2; e_u0 += k_u0; e_p1 += k_p1; e_p0 += k_p0
        cell_energy2[cell] = k_u0 + k_u2 + beta * k_p0 + gamma * k_p1

        h4 = op.ctx.diameter ** 4
        h2 = op.ctx.diameter ** 2
        for fn, n, wt, acc in ((case.f, nk, h4, "f"), (case.g, nl, h2, "g")):
            V = op.ctx.basis.eval(pts)[:, :n]
            vals = fn(pts)
            coeff = np.linalg.solve((V * w[:, None]).T @ V, (V * w[:, None]).T @ vals)
            o = wt * float(w @ (vals - V @ coeff) ** 2)
            if acc == "f":
                osc_f += o
            else:
                osc_g += o

    energy = math.sqrt(e_u0 + e_u2 + beta * e_p0 + gamma * e_p1)
    return ErrorReport(system.mesh.h, system.ndof, math.sqrt(e_u2),
                       math.sqrt(e_p1), math.sqrt(e_u0), math.sqrt(e_p0), energy,
                       math.sqrt(osc_f), math.sqrt(osc_g), cell_energy2)


# ---------------------------------------------------------------------------
# rate tables


def rates_against(hs, errs) -> list[float | None]:
    """Rate printed on row i compares levels i and i+1; the last row gets None."""
    out: list[float | None] = []
    for i in range(len(hs) - 1):
        out.append(math.log(errs[i + 1] / errs[i]) / math.log(hs[i + 1] / hs[i]))
    out.append(None)
    return out


def rate_table(hs, columns: dict[str, list[float]]) -> list[dict[str, object]]:
    """Rows of h, then err/rate pairs per named column, rates per rates_against."""
    rows: list[dict[str, object]] = []
    rate_cols = {name: rates_against(hs, vals) for name, vals in columns.items()}
    for i, h in enumerate(hs):
        row: dict[str, object] = {"h": h}
        for name, vals in columns.items():
            row[name] = vals[i]
            r = rate_cols[name][i]
            row[f"rate({name})"] = "*" if r is None else r
        rows.append(row)
    return rows


def format_rate_table(rows: list[dict[str, object]]) -> str:
    if not rows:
        return ""
    keys = list(rows[0].keys())
    lines = ["  ".join(f"{k:>14s}" for k in keys)]
    for row in rows:
        parts = []
        for k in keys:
            v = row[k]
            if isinstance(v, str):
                parts.append(f"{v:>14s}")
            else:
                parts.append(f"{v:14.5e}" if abs(v) < 1e-2 or abs(v) >= 1e3
                             else f"{v:14.4f}")
        lines.append("  ".join(parts))
    return "\n".join(lines)
