"""Local forms, global assembly, and the linear solve for the coupled model.

One implicit step of the coupled bending/flow system reads: find the
deflection u and pressure p with

    (u, v) + (hess u, hess v) - alpha (grad p, grad v) = (f, v)
    beta (p, q) + alpha (grad u, grad q) + gamma (grad p, grad q) = (g, q)

for all admissible v, q.  Element matrices combine polynomial-consistency
terms built from the projections with diagonal-free dof-style
stabilisation of the complementary part; scalings follow the natural
dimensions of each norm (h^2 for mass terms, h^-2 for bending, 1 for the
pressure gradient).

Manufactured solutions that do not satisfy the homogeneous natural
conditions contribute boundary data terms: the bending moment d_nn(u) on
simply supported edges enters the first equation, and the combined flux
gamma d_n(p) + alpha d_n(u) on pressure-Neumann edges enters the second.
Both are consumed through the canonical edge moment tables, so they stay
computable for every family.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import BoundaryLabel, PolygonalMesh
from .projectors import (ElementContext, ElementProjectors,
                         build_deflection_projectors, build_pressure_projectors)
from .quadrature import poly_dim
from .spaces import DofMap, Family, SpaceKind, build_dof_map


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless coefficients of the one-step coupled system."""
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def validate(self) -> None:
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")


def derive_params(lam: float, mu: float, alpha: float, c0: float) -> ModelParams:
    """Map physical poroelastic constants to the dimensionless triple."""
    if mu <= 0:
        raise ValueError("shear modulus must be positive")
    gamma = (lam + mu) / mu
    beta = (c0 * (lam + 2.0 * mu) + alpha ** 2) * gamma
    return ModelParams(alpha=alpha, beta=beta, gamma=gamma)


@dataclass
class ElementOperators:
    """Everything element-local the scheme and the estimator reuse."""
    cell: int
    ctx: ElementContext
    defl: ElementProjectors
    pres: ElementProjectors
    A1: np.ndarray
    B: np.ndarray
    A3: np.ndarray


@dataclass
class AssembledSystem:
    mesh: PolygonalMesh
    space_u: SpaceKind
    space_p: SpaceKind
    params: ModelParams
    dof_u: DofMap
    dof_p: DofMap
    K: sp.csr_matrix
    elements: list[ElementOperators]
    pressure_dirichlet_on_clamped: bool = False
    data_order: int | None = None
    singular_cells: frozenset[int] = field(default_factory=frozenset)
    singular_subdivide: int = 0

    @property
    def ndof(self) -> int:
        return self.dof_u.ndof + self.dof_p.ndof


# ---------------------------------------------------------------------------
# element matrices


def _stiffness_gram(ctx: ElementContext, n: int) -> np.ndarray:
    w = ctx.rule(ctx.vol_order, 0).weights
    Vx = ctx.vtab((1, 0))[:, :n]
    Vy = ctx.vtab((0, 1))[:, :n]
    return (Vx * w[:, None]).T @ Vx + (Vy * w[:, None]).T @ Vy


def build_element(mesh: PolygonalMesh, cell: int, space_u: SpaceKind,
                  space_p: SpaceKind, params: ModelParams,
                  singular_subdivide: int = 0,
                  coupling_degree: int | None = None) -> ElementOperators:
    k = space_u.degree
    l = space_p.degree
    ctx = ElementContext(mesh, cell, max_degree=max(k, l),
                         singular_subdivide=singular_subdivide)
    h = ctx.diameter

    gu_default = k - 2 if coupling_degree is None else coupling_degree
    grad_degrees = tuple(sorted({k - 1, max(l - 1, 0), gu_default}))
    extra_pg = (k - 2,) if (k - 2 >= 1 and k - 2 != l) else ()
    P_u = build_deflection_projectors(ctx, space_u, pg_degrees=(l,),
                                      grad_degrees=grad_degrees)
    P_p = build_pressure_projectors(ctx, space_p, extra_pg_degrees=extra_pg)

    nk = poly_dim(k)
    nl = poly_dim(l)
    Hk = ctx.H[:nk, :nk]
    Hl = ctx.H[:nl, :nl]

    # deflection form: mass plus full Hessian, each with its own scaling
    S0 = np.eye(P_u.ndof) - P_u.D @ P_u.l2
    S2 = np.eye(P_u.ndof) - P_u.D @ P_u.pd
    Hxx, Hxy, Hyy = P_u.hess
    nh = poly_dim(k - 2)
    Hh = ctx.H[:nh, :nh]
    A1 = P_u.l2.T @ Hk @ P_u.l2 + (h * h) * (S0.T @ S0) \
        + Hxx.T @ Hh @ Hxx + 2.0 * (Hxy.T @ Hh @ Hxy) + Hyy.T @ Hh @ Hyy \
        + (S2.T @ S2) / (h * h)

    # pressure form: projected mass and projected-gradient terms
    T0 = np.eye(P_p.ndof) - P_p.D @ P_p.l2
    T1 = np.eye(P_p.ndof) - P_p.D @ P_p.pg[l]
    gp = max(l - 1, 0)
    ngp = poly_dim(gp)
    Hgp = ctx.H[:ngp, :ngp]
    Gxp, Gyp = P_p.grads[gp]
    A3 = params.beta * (P_p.l2.T @ Hl @ P_p.l2 + (h * h) * (T0.T @ T0)) \
        + params.gamma * (Gxp.T @ Hgp @ Gxp + Gyp.T @ Hgp @ Gyp + T1.T @ T1)

    # coupling: pressure gradient at degree l-1 against the deflection
    # gradient at the configured degree (one below full keeps it matched)
    gu = gu_default
    Gxu, Gyu = P_u.grads[gu]
    Hcross = ctx.H[:poly_dim(gu), :ngp]
    B = params.alpha * (Gxu.T @ Hcross @ Gxp + Gyu.T @ Hcross @ Gyp)

    return ElementOperators(cell, ctx, P_u, P_p, A1, B, A3)


# ---------------------------------------------------------------------------
# global assembly


def assemble_system(mesh: PolygonalMesh, space_u: SpaceKind, space_p: SpaceKind,
                    params: ModelParams, *,
                    pressure_dirichlet_on_clamped: bool = False,
                    threads: int = 1,
                    singular_cells: frozenset[int] | set[int] = frozenset(),
                    singular_subdivide: int = 1,
                    data_order: int | None = None,
                    coupling_degree: int | None = None) -> AssembledSystem:
    """Build every element operator and scatter into one sparse block matrix.

    Element builds are independent, so they may run on a thread pool; the
    scatter happens sequentially in cell order either way, which keeps the
    assembled matrix bit-identical for any thread count.
    """
    params.validate()
    dof_u = build_dof_map(mesh, space_u)
    dof_p = build_dof_map(mesh, space_p)
    singular_cells = frozenset(singular_cells)

    def make(cell: int) -> ElementOperators:
        sub = singular_subdivide if cell in singular_cells else 0
        return build_element(mesh, cell, space_u, space_p, params,
                             singular_subdivide=sub,
                             coupling_degree=coupling_degree)

    cells = range(mesh.ncells)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            elements = list(pool.map(make, cells))
    else:
        elements = [make(c) for c in cells]

    n_u = dof_u.ndof
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for op in elements:
        gu = dof_u.cell_dofs[op.cell]
        gp = dof_p.cell_dofs[op.cell] + n_u
        ru, cu = np.meshgrid(gu, gu, indexing="ij")
        rows.append(ru.ravel()); cols.append(cu.ravel()); vals.append(op.A1.ravel())
        rup, cup = np.meshgrid(gu, gp, indexing="ij")
        rows.append(rup.ravel()); cols.append(cup.ravel()); vals.append((-op.B).ravel())
        rows.append(cup.ravel()); cols.append(rup.ravel()); vals.append(op.B.ravel())
        rp, cp = np.meshgrid(gp, gp, indexing="ij")
        rows.append(rp.ravel()); cols.append(cp.ravel()); vals.append(op.A3.ravel())

    n = n_u + dof_p.ndof
    K = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return AssembledSystem(mesh, space_u, space_p, params, dof_u, dof_p, K,
                           elements, pressure_dirichlet_on_clamped,
                           data_order, singular_cells, singular_subdivide)


# ---------------------------------------------------------------------------
# right-hand side


def _cell_moments(op: ElementOperators, fn, order: int, n: int) -> np.ndarray:
    rule = op.ctx.rule(order)
    V = op.ctx.basis.eval(rule.points)[:, :n]
    return (V * rule.weights[:, None]).T @ fn(rule.points)


def _pressure_natural_edges(system: AssembledSystem, op: ElementOperators):
    """Boundary edges of this cell where the pressure condition is natural."""
    out = []
    for j, e in enumerate(op.ctx.edges):
        edge = system.mesh.edges[e.eid]
        if not edge.is_boundary:
            continue
        if edge.label is BoundaryLabel.SIMPLY_SUPPORTED:
            continue
        if system.pressure_dirichlet_on_clamped:
            continue
        out.append(j)
    return out


def assemble_rhs(system: AssembledSystem, f, g, *,
                 bending_moment_data=None, pressure_flux_data=None) -> np.ndarray:
    """Volume loads against the L2 projections plus natural boundary data.

    f and g take an (n, 2) array of points; the optional data callbacks take
    (points, normal) for one boundary edge and return the scalar trace of
    d_nn(u) respectively gamma d_n(p) + alpha d_n(u).
    """
    k = system.space_u.degree
    l = system.space_p.degree
    order = system.data_order if system.data_order is not None else 2 * k + 4
    n_u = system.dof_u.ndof
    F = np.zeros(n_u + system.dof_p.ndof)
    for op in system.elements:
        gu = system.dof_u.cell_dofs[op.cell]
        gp = system.dof_p.cell_dofs[op.cell] + n_u
        fm = _cell_moments(op, f, order, poly_dim(k))
        gm = _cell_moments(op, g, order, poly_dim(l))
        loc_u = op.defl.l2.T @ fm
        loc_p = op.pres.l2.T @ gm

        if bending_moment_data is not None:
            n_mu = op.defl.normal_moments[0].shape[0]
            for j, e in enumerate(op.ctx.edges):
                edge = system.mesh.edges[e.eid]
                if not (edge.is_boundary and edge.label is BoundaryLabel.SIMPLY_SUPPORTED):
                    continue
                data = bending_moment_data(e.pts, e.normal)
                coeff = op.ctx.efit(j, data, n_mu - 1)
                loc_u += op.defl.normal_moments[j].T @ coeff

        if pressure_flux_data is not None:
            for j in _pressure_natural_edges(system, op):
                e = op.ctx.edges[j]
                data = pressure_flux_data(e.pts, e.normal)
                nv = op.pres.value_moments[j].shape[0]
                coeff = op.ctx.efit(j, data, nv - 1)
                loc_p += op.pres.value_moments[j].T @ coeff

        np.add.at(F, gu, loc_u)
        np.add.at(F, gp, loc_p)
    return F


# ---------------------------------------------------------------------------
# solve


def solve_system(system: AssembledSystem, F: np.ndarray,
                 method: str = "direct", tol: float = 1e-12):
    """Eliminate essential dofs by lifting and solve the free block.

    Returns the full coefficient vectors (U, P) with boundary values filled
    back in.
    """
    n_u = system.dof_u.ndof
    constrained = np.concatenate([system.dof_u.constrained, system.dof_p.constrained])
    lift = np.concatenate([system.dof_u.values, system.dof_p.values])
    lift = np.where(constrained, lift, 0.0)
    free = ~constrained

    K = system.K
    rhs = F - K @ lift
    Kff = K[free][:, free].tocsc()
    if method == "direct":
        x = spla.splu(Kff).solve(rhs[free])
    elif method == "gmres":
        ilu = spla.spilu(Kff, drop_tol=1e-8, fill_factor=20)
        M = spla.LinearOperator(Kff.shape, ilu.solve)
        x, info = spla.gmres(Kff, rhs[free], rtol=tol, atol=0.0, M=M,
                             restart=200, maxiter=2000)
        if info != 0:
            raise RuntimeError(f"gmres failed to converge (info={info})")
    else:
        raise ValueError(f"unknown solve method {method!r}")

    full = lift.copy()
    full[free] = x
    return full[:n_u], full[n_u:]
