"""Static condensation onto the skeleton, sparse solve and local recovery.

The global system is never formed in the production path: each element's
interior block is eliminated locally,

    S = sum_K (A_tt - A_tu A_uu^{-1} A_ut),   g = sum_K (b_t - A_tu A_uu^{-1} b_u),

the condensed system S uhat = g is solved with a sparse direct factorization,
and interior unknowns are recovered element by element.  The uncondensed
system assembled by :func:`hdgcd.assembly.assemble_monolithic` serves as the
reference the condensed path is verified against.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from hdgcd import assembly
from hdgcd.assembly import assemble_local_systems, assemble_monolithic, check_problem
from hdgcd.fespace import build_dofmap

COND_LIMIT = 1e14
RESIDUAL_RTOL = 1e-10
RECOVERY_RTOL = 1e-11


class ElementSolvabilityError(RuntimeError):
    """An element-interior block is numerically singular."""


class SingularSystemError(RuntimeError):
    """The condensed skeleton system could not be solved reliably."""


@dataclass
class CondensedSystem:
    """Skeleton system together with the element data needed for recovery."""

    S: sp.csr_matrix
    g: np.ndarray
    dofmap: object
    elem_lu: list
    elem_interior: list      # interior blocks A_uu (kept for residual checks)
    elem_coupling: list      # coupling blocks A_ut restricted to active columns
    elem_load: list          # interior loads b_u
    elem_trace_gids: list    # active global trace indices per element

    @property
    def n_trace(self):
        return self.g.size


@dataclass
class HdgSolution:
    """Discrete solution: per-element coefficients and skeleton trace.

    ``u`` has shape (n_elements, ndof_elem) in the nodal element basis;
    ``uhat`` holds the active trace dofs (Dirichlet values are implicit
    zeros).  ``info`` records sizes and solver diagnostics.
    """

    mesh: object
    dofmap: object
    u: np.ndarray
    uhat: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def degree(self):
        return self.dofmap.degree

    def trace_on_edge(self, edge):
        """Trace coefficients on one skeleton edge, zeros where constrained."""
        gids = self.dofmap.edge_dofs[edge]
        out = np.zeros(gids.size)
        act = gids >= 0
        out[act] = self.uhat[gids[act]]
        return out


def condense(local_systems, dofmap, cond_limit=COND_LIMIT):
    """Eliminate interior unknowns from every local block.

    Raises :class:`ElementSolvabilityError` when an interior block has an
    estimated condition number beyond ``cond_limit`` or fails to factor.
    """
    n_active = dofmap.n_trace_active
    rows, cols, vals = [], [], []
    g = np.zeros(n_active)
    elem_lu, elem_interior, elem_coupling, elem_load, elem_gids = [], [], [], [], []
    for blk in local_systems:
        t = blk.element
        cond = np.linalg.cond(blk.A_uu)
        if not np.isfinite(cond) or cond > cond_limit:
            raise ElementSolvabilityError(
                f"element {t}: interior block condition estimate {cond:.3e} exceeds {cond_limit:.1e}")
        try:
            lu = sla.lu_factor(blk.A_uu)
        except sla.LinAlgError as exc:
            raise ElementSolvabilityError(f"element {t}: interior block factorization failed: {exc}") from exc
        act = np.nonzero(blk.trace_gids >= 0)[0]
        gt = blk.trace_gids[act]
        a_ut = blk.A_ut[:, act]
        a_tu = blk.A_tu[act, :]
        ws = sla.lu_solve(lu, np.column_stack([a_ut, blk.b_u]))
        elem_lu.append(lu)
        elem_interior.append(blk.A_uu.copy())
        elem_coupling.append(a_ut)
        elem_load.append(blk.b_u.copy())
        elem_gids.append(gt)
        if act.size:
            s_loc = blk.A_tt[np.ix_(act, act)] - a_tu @ ws[:, :-1]
            g_loc = blk.b_t[act] - a_tu @ ws[:, -1]
            rows.append(np.repeat(gt, gt.size))
            cols.append(np.tile(gt, gt.size))
            vals.append(s_loc.ravel())
            np.add.at(g, gt, g_loc)
    if rows:
        s_mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_active, n_active)).tocsr()
    else:
        s_mat = sp.csr_matrix((n_active, n_active))
    return CondensedSystem(S=s_mat, g=g, dofmap=dofmap, elem_lu=elem_lu,
                           elem_interior=elem_interior, elem_coupling=elem_coupling,
                           elem_load=elem_load, elem_trace_gids=elem_gids)


def solve_skeleton(system):
    """Solve the condensed system with a sparse direct factorization.

    The residual is verified against RESIDUAL_RTOL * (|S| |x| + |g|); a
    violation or non-finite solution raises :class:`SingularSystemError`.
    """
    if system.n_trace == 0:
        return np.zeros(0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        x = spla.spsolve(system.S.tocsc(), system.g)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("skeleton system is singular (non-finite solution)")
    resid = float(np.abs(system.S @ x - system.g).max())
    s_norm = float(np.abs(system.S).sum(axis=1).max()) if system.S.nnz else 0.0
    bound = RESIDUAL_RTOL * (s_norm * float(np.abs(x).max(initial=0.0))
                             + float(np.abs(system.g).max(initial=0.0)))
    if resid > bound:
        raise SingularSystemError(
            f"skeleton residual {resid:.3e} exceeds tolerance {bound:.3e}")
    return x


def recover_interior(traces, system):
    """Back-substitute the trace solution into every element.

    Each element touches only its own three edges, so recovery is local.
    The per-element residual of the interior solve is recorded in
    ``info["max_recovery_residual"]``.
    """
    dofmap = system.dofmap
    mesh = dofmap.mesh
    traces = np.asarray(traces, dtype=float)
    u = np.empty((mesh.n_elements, dofmap.ndof_elem))
    max_resid = 0.0
    for t in range(mesh.n_elements):
        rhs = system.elem_load[t] - system.elem_coupling[t] @ traces[system.elem_trace_gids[t]]
        u[t] = sla.lu_solve(system.elem_lu[t], rhs)
        resid = np.abs(system.elem_interior[t] @ u[t] - rhs).max(initial=0.0)
        scale = 1.0 + np.abs(rhs).max(initial=0.0)
        max_resid = max(max_resid, float(resid / scale))
    return HdgSolution(mesh=mesh, dofmap=dofmap, u=u, uhat=traces,
                       info={"max_recovery_residual": max_resid})


def _solution_info(dofmap, eta, degree, skeleton_mode, quad_order, method):
    return {
        "dofs_interior": dofmap.n_interior,
        "dofs_skeleton": dofmap.n_trace_active,
        "dofs_trace_total": dofmap.n_trace_total,
        "dofs_total": dofmap.n_total,
        "eta": float(eta),
        "degree": degree,
        "skeleton_mode": skeleton_mode,
        "quad_order": quad_order if quad_order is not None else assembly.default_quad_order(degree),
        "method": method,
    }


def solve_hdg(problem, mesh, degree=1, eta=None, skeleton_mode="dg",
              quad_order=None, check=True):
    """Full driver: validate, assemble, condense, solve, recover.

    Returns an :class:`HdgSolution` whose ``info`` dict records dof counts
    (interior, skeleton, total), the penalty used and the quadrature order.
    """
    if eta is None:
        eta = assembly.default_eta(degree)
    if check:
        report = check_problem(problem, mesh)
        if not report.ok:
            raise ValueError("problem is not well posed on this mesh: "
                             + "; ".join(report.messages))
    dofmap = build_dofmap(mesh, degree, skeleton_mode)
    systems = assemble_local_systems(mesh, dofmap, problem, eta=eta, quad_order=quad_order)
    condensed = condense(systems, dofmap)
    traces = solve_skeleton(condensed)
    sol = recover_interior(traces, condensed)
    sol.info.update(_solution_info(dofmap, eta, degree, skeleton_mode, quad_order, "condensed"))
    return sol


def solve_monolithic(problem, mesh, degree=1, eta=None, skeleton_mode="dg",
                     quad_order=None, check=True):
    """Reference driver solving the uncondensed coupled system directly."""
    if eta is None:
        eta = assembly.default_eta(degree)
    if check:
        report = check_problem(problem, mesh)
        if not report.ok:
            raise ValueError("problem is not well posed on this mesh: "
                             + "; ".join(report.messages))
    dofmap = build_dofmap(mesh, degree, skeleton_mode)
    mat, rhs = assemble_monolithic(mesh, dofmap, problem, eta=eta, quad_order=quad_order)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        x = spla.spsolve(mat.tocsc(), rhs)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("uncondensed system is singular (non-finite solution)")
    n_int = dofmap.n_interior
    u = x[:n_int].reshape(mesh.n_elements, dofmap.ndof_elem)
    sol = HdgSolution(mesh=mesh, dofmap=dofmap, u=u, uhat=x[n_int:])
    sol.info.update(_solution_info(dofmap, eta, degree, skeleton_mode, quad_order, "monolithic"))
    return sol


def save_solution(solution, path):
    """Write the solution as plain text records.

    One line per element, ``K <index> <coefficients...>``, followed by one
    line per skeleton edge, ``E <index> <coefficients...>`` (constrained
    trace entries appear as explicit zeros).
    """
    lines = []
    for t in range(solution.mesh.n_elements):
        coeffs = " ".join(f"{c:.17g}" for c in solution.u[t])
        lines.append(f"K {t} {coeffs}")
    for e in solution.dofmap.skeleton_edges:
        coeffs = " ".join(f"{c:.17g}" for c in solution.trace_on_edge(e))
        lines.append(f"E {e} {coeffs}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
