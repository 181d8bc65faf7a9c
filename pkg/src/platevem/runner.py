"""Experiment drivers shared by the command line and the test suite.

The drivers wire a manufactured case to the assembly/solve/estimate
pipeline: uniform convergence ladders on Voronoi, structured, or L-shaped
meshes, the patch solve with operator-synthesized data, and the two-step
time discretisation where previous states feed the right-hand side
through their projected polynomial representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import (AssembledSystem, assemble_rhs, assemble_system,
                       solve_system)
from .estimator import EstimatorReport, estimate
from .manufactured import (ErrorReport, ManufacturedCase, compute_errors)
from .mesh import (PolygonalMesh, generate_lshape, generate_structured,
                   generate_voronoi, uniform_refine)
from .quadrature import poly_dim
from .spaces import Family, SpaceKind, apply_essential_bc, interpolate


def spaces_for(family: Family, k: int, l: int) -> tuple[SpaceKind, SpaceKind]:
    return (SpaceKind("deflection", family, k), SpaceKind("pressure", family, l))


# ---------------------------------------------------------------------------
# mesh ladders


def voronoi_ladder(case: ManufacturedCase, counts, seed: int = 0,
                   lloyd_iters: int = 5) -> list[PolygonalMesh]:
    """Independent smoothed Voronoi meshes of the requested cell counts."""
    return [generate_voronoi(int(n), lloyd_iters=lloyd_iters,
                             seed=seed + 101 * j, labeler=case.labeler)
            for j, n in enumerate(counts)]


def structured_ladder(case: ManufacturedCase, n0: int,
                      levels: int) -> list[PolygonalMesh]:
    return [generate_structured(n0 * 2 ** j, n0 * 2 ** j, labeler=case.labeler)
            for j in range(levels)]


def lshape_ladder(n0: int, levels: int) -> list[PolygonalMesh]:
    meshes = [generate_lshape(n0)]
    for _ in range(levels - 1):
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


# ---------------------------------------------------------------------------
# single solves


def solve_case(case: ManufacturedCase, mesh: PolygonalMesh, family: Family,
               k: int, l: int, *, threads: int = 1, solver: str = "direct",
               coupling_degree: int | None = None,
               singular_subdivide: int = 1):
    """Assemble, apply the case data and boundary values, and solve."""
    space_u, space_p = spaces_for(family, k, l)
    system = assemble_system(
        mesh, space_u, space_p, case.params,
        pressure_dirichlet_on_clamped=case.pressure_dirichlet_on_clamped,
        threads=threads,
        singular_cells=case.singular_cells(mesh),
        singular_subdivide=singular_subdivide,
        coupling_degree=coupling_degree)
    F = assemble_rhs(system, case.f, case.g,
                     bending_moment_data=case.bending_moment_data,
                     pressure_flux_data=case.pressure_flux_data)
    apply_essential_bc(system.dof_u, mesh, value=case.u, grad=case.grad_u)
    apply_essential_bc(
        system.dof_p, mesh, value=case.p,
        pressure_dirichlet_on_clamped=case.pressure_dirichlet_on_clamped)
    U, P = solve_system(system, F, method=solver)
    return system, U, P


def solve_patch(case: ManufacturedCase, mesh: PolygonalMesh, family: Family,
                k: int, l: int, *, threads: int = 1) -> ErrorReport:
    """Solve with data synthesized by the assembled operator itself.

    The right-hand side is the operator applied to the interpolant of the
    exact polynomial pair, so the discrete solution must reproduce that
    interpolant exactly; any deviation points at the assembly, scatter,
    boundary, or solve stages.
    """
    space_u, space_p = spaces_for(family, k, l)
    system = assemble_system(
        mesh, space_u, space_p, case.params,
        pressure_dirichlet_on_clamped=case.pressure_dirichlet_on_clamped,
        threads=threads)
    UI = interpolate(mesh, system.dof_u, case.u, case.grad_u)
    PI = interpolate(mesh, system.dof_p, case.p)
    F = system.K @ np.concatenate([UI, PI])
    apply_essential_bc(system.dof_u, mesh, value=case.u, grad=case.grad_u)
    apply_essential_bc(
        system.dof_p, mesh, value=case.p,
        pressure_dirichlet_on_clamped=case.pressure_dirichlet_on_clamped)
    U, P = solve_system(system, F)
    return compute_errors(system, U, P, case)


# ---------------------------------------------------------------------------
# uniform convergence studies


@dataclass
class LevelResult:
    h: float
    ncells: int
    ndof: int
    report: ErrorReport
    est: EstimatorReport | None


def run_convergence(case: ManufacturedCase, meshes, family: Family,
                    k: int, l: int, *, threads: int = 1,
                    solver: str = "direct", with_estimator: bool = True,
                    coupling_degree: int | None = None,
                    singular_subdivide: int = 1) -> list[LevelResult]:
    out: list[LevelResult] = []
    for mesh in meshes:
        system, U, P = solve_case(case, mesh, family, k, l, threads=threads,
                                  solver=solver,
                                  coupling_degree=coupling_degree,
                                  singular_subdivide=singular_subdivide)
        report = compute_errors(system, U, P, case)
        est = None
        if with_estimator:
            est = estimate(system, U, P, f=case.f, g=case.g,
                           bending_moment_data=case.bending_moment_data,
                           pressure_flux_data=case.pressure_flux_data,
                           grad_u_data=case.grad_u, pressure_trace_data=case.p)
        out.append(LevelResult(mesh.h, mesh.ncells, system.ndof, report, est))
    return out


def fit_loglog_slope(x, y, tail: int = 4) -> float:
    """Least-squares slope of log y against log x over the last tail points."""
    x = np.asarray(x, dtype=np.float64)[-tail:]
    y = np.asarray(y, dtype=np.float64)[-tail:]
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# time stepping


def assemble_projected_mass(system: AssembledSystem) -> sp.csr_matrix:
    """Block-diagonal mass actions (Pi_k ., Pi_k .) for both fields.

    Previous-step states multiply this operator when they enter the next
    right-hand side, so only their projected polynomial parts are carried
    forward.
    """
    k = system.space_u.degree
    l = system.space_p.degree
    nk, nl = poly_dim(k), poly_dim(l)
    n_u = system.dof_u.ndof
    rows, cols, vals = [], [], []
    for op in system.elements:
        gu = system.dof_u.cell_dofs[op.cell]
        gp = system.dof_p.cell_dofs[op.cell] + n_u
        Mu = op.defl.l2.T @ op.ctx.H[:nk, :nk] @ op.defl.l2
        Mp = op.pres.l2.T @ op.ctx.H[:nl, :nl] @ op.pres.l2
        ru, cu = np.meshgrid(gu, gu, indexing="ij")
        rows.append(ru.ravel()); cols.append(cu.ravel()); vals.append(Mu.ravel())
        rp, cp = np.meshgrid(gp, gp, indexing="ij")
        rows.append(rp.ravel()); cols.append(cp.ravel()); vals.append(Mp.ravel())
    n = n_u + system.dof_p.ndof
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def timestep_driver(system: AssembledSystem, f, g, *, steps: int,
                    u0: np.ndarray, p0: np.ndarray,
                    u_prev: np.ndarray | None = None,
                    bending_moment_data=None, pressure_flux_data=None,
                    solver: str = "direct") -> list[tuple[np.ndarray, np.ndarray]]:
    """March the one-step system with unit time step.

    f and g are called as f(points, step) for step = 1..steps.  Each step
    solves the static system with the composed sources f + 2 u_n - u_{n-1}
    and g + p_n, the previous states acting through the projected mass.
    Boundary values must already be applied to the system's DoF maps and
    are held fixed over the march.
    """
    if u_prev is None:
        u_prev = u0.copy()
    M = assemble_projected_mass(system)
    un, um1, pn = u0.copy(), u_prev.copy(), p0.copy()
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for step in range(1, steps + 1):
        F = assemble_rhs(system, lambda pts, s=step: f(pts, s),
                         lambda pts, s=step: g(pts, s),
                         bending_moment_data=bending_moment_data,
                         pressure_flux_data=pressure_flux_data)
        F = F + M @ np.concatenate([2.0 * un - um1, pn])
        U, P = solve_system(system, F, method=solver)
        out.append((U, P))
        um1, un, pn = un, U, P
    return out


def steady_timestep_state(system: AssembledSystem, F: np.ndarray):
    """Fixed point of the time march for step-independent data.

    Subtracting the projected-mass feedback from the operator and solving
    once gives the state that the march reproduces identically.
    """
    M = assemble_projected_mass(system)
    shifted = AssembledSystem(
        system.mesh, system.space_u, system.space_p, system.params,
        system.dof_u, system.dof_p, (system.K - M).tocsr(), system.elements,
        system.pressure_dirichlet_on_clamped, system.data_order,
        system.singular_cells, system.singular_subdivide)
    return solve_system(shifted, F)
