"""Local and global assembly of the hybridized convection-diffusion forms.

Element-local blocks couple interior unknowns u with the trace unknowns
uhat on the element's three edge slots.  Rows are test functions, columns
trial functions:

    [ A_uu  A_ut ] [ u    ]   [ b_u ]
    [ A_tu  A_tt ] [ uhat ] = [ b_t ]

The diffusive part consists of the broken stiffness term, the two
adjoint-consistent flux terms against (uhat - u) and the edge penalty
epsilon * eta / h_e.  The convective part adds the volume transport term
and the upwind coupling built from the positive/negative parts of b . n.
Trace terms live on every element edge except Neumann boundary edges;
Neumann edges only receive the flux load against the interior test
function.  Trace dofs on Dirichlet edges are fixed to zero and never
enter the global index space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from hdgcd.fespace import (REF_VERTICES, get_edge_basis, get_element_basis,
                           quad_edge, quad_triangle)
from hdgcd.mesh import BoundaryTag, verify_inflow_in_dirichlet

_NEUMANN = int(BoundaryTag.NEUMANN)


def default_eta(degree):
    """Default penalty parameter, 10 k^2."""
    return 10.0 * degree * degree


def default_quad_order(degree):
    """Default assembly quadrature exactness, 2k + 2."""
    return 2 * degree + 2


def bracket(x):
    """Positive and negative parts (max(0, x), max(0, -x)) of b . n.

    Elementwise exact: plus - minus == x and plus + minus == |x|.
    """
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0), np.maximum(-x, 0.0)


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients and boundary data of one convection-diffusion problem.

    ``b`` maps coordinate arrays to the two velocity components; ``c``,
    ``f``, ``g_N`` and ``div_b`` are scalar fields (None means zero).
    ``boundary`` is the edge-midpoint tagging rule handed to the mesh
    generator; None tags the whole boundary Dirichlet.  ``rho0`` is the
    claimed lower bound of rho = c - div(b)/2.
    """

    epsilon: float
    b: Callable
    f: Callable
    c: Optional[Callable] = None
    g_N: Optional[Callable] = None
    boundary: Optional[Callable] = None
    rho0: float = 0.0
    div_b: Optional[Callable] = None

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"diffusion coefficient must be positive, got {self.epsilon!r}")
        if self.rho0 < 0.0:
            raise ValueError(f"rho0 must be non-negative, got {self.rho0!r}")
        if not callable(self.b):
            raise ValueError("velocity b must be callable")
        if not callable(self.f):
            raise ValueError("source f must be callable")


@dataclass(frozen=True)
class ProblemReport:
    """Outcome of the well-posedness checks for a (problem, mesh) pair."""

    ok: bool
    min_rho: float
    inflow_ok: bool
    messages: tuple


def _as_field(values, shape):
    out = np.asarray(values, dtype=float)
    if out.shape != shape:
        out = np.broadcast_to(out, shape).astype(float)
    return out


def _eval_scalar(func, x, y):
    if func is None:
        return None
    return _as_field(func(x, y), x.shape)


def _eval_velocity(b, x, y):
    bx, by = b(x, y)
    return _as_field(bx, x.shape), _as_field(by, x.shape)


def check_problem(problem, mesh, quad_order=4, rho_tol=1e-10, inflow_tol=1e-12):
    """Verify reaction positivity and inflow/Dirichlet compatibility.

    rho = c - div(b)/2 must stay above ``problem.rho0`` (up to ``rho_tol``)
    at the volume quadrature points, and the velocity must not enter the
    domain through a non-Dirichlet boundary edge.
    """
    rule = quad_triangle(quad_order)
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    pts = v0[:, None, :] + np.einsum("qd,tad->tqa", rule.points, mesh.jacobians)
    x, y = pts[..., 0], pts[..., 1]
    cv = _eval_scalar(problem.c, x, y)
    dv = _eval_scalar(problem.div_b, x, y)
    rho = np.zeros(x.shape)
    if cv is not None:
        rho += cv
    if dv is not None:
        rho -= 0.5 * dv
    min_rho = float(rho.min())
    messages = []
    if min_rho < problem.rho0 - rho_tol:
        messages.append(
            f"rho = c - div(b)/2 drops to {min_rho:.3e}, below the declared bound {problem.rho0:.3e}")
    inflow = verify_inflow_in_dirichlet(mesh, problem.b, tol=inflow_tol)
    if not inflow.ok:
        e, (px, py) = inflow.violations[0]
        messages.append(
            f"inflow crosses non-Dirichlet boundary edge {e} near ({px:.4f}, {py:.4f})")
    return ProblemReport(ok=not messages, min_rho=min_rho,
                         inflow_ok=inflow.ok, messages=tuple(messages))


@dataclass
class LocalBlocks:
    """Element-local system blocks in the interior/trace partition.

    Trace columns are grouped by local edge slot, ``ndof_edge`` entries
    per slot in canonical edge orientation.  ``trace_gids`` holds the
    matching global active-trace indices, -1 for constrained slots.
    """

    element: int
    A_uu: np.ndarray
    A_ut: np.ndarray
    A_tu: np.ndarray
    A_tt: np.ndarray
    b_u: np.ndarray
    b_t: np.ndarray
    trace_gids: np.ndarray = field(default=None)

    @classmethod
    def zeros(cls, element, ndof_elem, ndof_trace):
        return cls(element=element,
                   A_uu=np.zeros((ndof_elem, ndof_elem)),
                   A_ut=np.zeros((ndof_elem, ndof_trace)),
                   A_tu=np.zeros((ndof_trace, ndof_elem)),
                   A_tt=np.zeros((ndof_trace, ndof_trace)),
                   b_u=np.zeros(ndof_elem),
                   b_t=np.zeros(ndof_trace),
                   trace_gids=np.full(ndof_trace, -1, dtype=np.int64))

    def full_matrix(self):
        """Dense (interior + trace) local matrix, test rows x trial cols."""
        top = np.hstack([self.A_uu, self.A_ut])
        bot = np.hstack([self.A_tu, self.A_tt])
        return np.vstack([top, bot])


class AssemblyContext:
    """Reference evaluation tables and physical quadrature geometry.

    Element traces along an edge are tabulated for both traversal
    directions so that every edge quantity is expressed in the canonical
    (ascending vertex index) parameterization shared by the trace basis.
    """

    def __init__(self, mesh, basis, edge_basis, quad_order):
        self.mesh = mesh
        self.basis = basis
        self.edge_basis = edge_basis
        self.quad_order = quad_order
        self.vol = quad_triangle(quad_order)
        self.edge = quad_edge(quad_order)
        self.N = basis.values(self.vol.points)
        self.dN = basis.gradients(self.vol.points)
        t = self.edge.points
        self.E = edge_basis.values(t)
        nqe = t.size
        n_tr = np.empty((3, 2, nqe, basis.dim))
        dn_tr = np.empty((3, 2, nqe, basis.dim, 2))
        for s in range(3):
            r0 = REF_VERTICES[s]
            r1 = REF_VERTICES[(s + 1) % 3]
            for o, tt in ((0, 1.0 - t), (1, t)):
                pts = r0[None, :] + tt[:, None] * (r1 - r0)[None, :]
                n_tr[s, o] = basis.values(pts)
                dn_tr[s, o] = basis.gradients(pts)
        self.N_tr = n_tr
        self.dN_tr = dn_tr
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        self.X_vol = v0[:, None, :] + np.einsum("qd,tad->tqa", self.vol.points, mesh.jacobians)
        va = mesh.vertices[mesh.edges[:, 0]]
        vb = mesh.vertices[mesh.edges[:, 1]]
        self.X_edge = va[:, None, :] + t[None, :, None] * (vb - va)[:, None, :]


@lru_cache(maxsize=32)
def _context_cached(mesh, basis, edge_basis, quad_order):
    return AssemblyContext(mesh, basis, edge_basis, quad_order)


def get_context(mesh, basis=None, edge_basis=None, quad_order=None, degree=None):
    """Cached AssemblyContext; bases default to the shared instances."""
    if basis is None:
        basis = get_element_basis(degree)
    if edge_basis is None:
        edge_basis = get_edge_basis(basis.degree)
    if quad_order is None:
        quad_order = default_quad_order(basis.degree)
    return _context_cached(mesh, basis, edge_basis, int(quad_order))


def _accumulate(ctx, element, out, epsilon=None, eta=None, conv=None, load=None):
    """Add the requested parts of the local form for one element.

    ``conv`` is (bx_vol, by_vol, c_vol, edge_b) with edge_b a per-slot list
    of (bx, by) arrays at the canonical edge quadrature points; ``load`` is
    (f_vol, g_slots) with g_slots a per-slot list (None off Neumann edges).
    """
    mesh = ctx.mesh
    t = element
    inv_jt = mesh.inv_jacobians_t[t]
    wq = ctx.vol.weights * mesh.det_jacobians[t]
    eids = mesh.elem_edges[t]
    k1 = ctx.edge_basis.dim

    need_grad = epsilon is not None or conv is not None
    if need_grad:
        G = ctx.dN @ inv_jt.T  # (nq, nd, 2) physical gradients

    if epsilon is not None:
        out.A_uu += epsilon * np.einsum("q,qia,qja->ij", wq, G, G)
    if conv is not None:
        bx_v, by_v, c_v, _ = conv
        bgrad = bx_v[:, None] * G[:, :, 0] + by_v[:, None] * G[:, :, 1]
        trial = bgrad if c_v is None else bgrad + c_v[:, None] * ctx.N
        out.A_uu += ctx.N.T @ (wq[:, None] * trial)
    if load is not None and load[0] is not None:
        out.b_u += ctx.N.T @ (wq * load[0])

    for s in range(3):
        e = eids[s]
        o = 1 if mesh.edge_forward[t, s] else 0
        we = ctx.edge.weights * mesh.h_e[e]
        Nq = ctx.N_tr[s, o]
        if mesh.edge_tags[e] == _NEUMANN:
            if load is not None and load[1] is not None and load[1][s] is not None:
                out.b_u += Nq.T @ (we * load[1][s])
            continue
        E = ctx.E
        c0 = s * k1
        c1 = c0 + k1
        if epsilon is not None:
            nrm = mesh.normals[t, s]
            Gq = ctx.dN_tr[s, o] @ inv_jt.T
            dn = Gq[:, :, 0] * nrm[0] + Gq[:, :, 1] * nrm[1]  # (nq, nd)
            wdn = we[:, None] * dn
            # consistency term <eps dn(u), vhat - v> and its adjoint
            out.A_tu[c0:c1, :] += epsilon * (E.T @ wdn)
            out.A_uu -= epsilon * (Nq.T @ wdn)
            out.A_ut[:, c0:c1] += epsilon * (wdn.T @ E)
            out.A_uu -= epsilon * (wdn.T @ Nq)
            # penalty eps * eta / h_e <uhat - u, vhat - v>
            pen = epsilon * eta / mesh.h_e[e]
            we_e = we[:, None] * E
            out.A_tt[c0:c1, c0:c1] += pen * (E.T @ we_e)
            out.A_ut[:, c0:c1] -= pen * (Nq.T @ we_e)
            out.A_tu[c0:c1, :] -= pen * (we_e.T @ Nq)
            out.A_uu += pen * (Nq.T @ (we[:, None] * Nq))
        if conv is not None:
            bx_e, by_e = conv[3][s]
            nrm = mesh.normals[t, s]
            bn = bx_e * nrm[0] + by_e * nrm[1]
            bp, bm = bracket(bn)
            # upwind coupling <uhat - u, [bn]+ vhat - [bn]- v>
            wbp = (we * bp)[:, None]
            wbm = (we * bm)[:, None]
            out.A_tt[c0:c1, c0:c1] += E.T @ (wbp * E)
            out.A_tu[c0:c1, :] -= E.T @ (wbp * Nq)
            out.A_ut[:, c0:c1] -= Nq.T @ (wbm * E)
            out.A_uu += Nq.T @ (wbm * Nq)


def _check_element(mesh, element):
    if not 0 <= element < mesh.n_elements:
        raise ValueError(f"element index {element} out of range")


def local_diffusion(mesh, element, basis, edge_basis, epsilon, eta, quad_order=None):
    """Diffusive local blocks of one element (stiffness, flux, penalty)."""
    _check_element(mesh, element)
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    if not eta > 0.0:
        raise ValueError(f"penalty eta must be positive, got {eta!r}")
    ctx = get_context(mesh, basis, edge_basis, quad_order)
    out = LocalBlocks.zeros(element, basis.dim, 3 * edge_basis.dim)
    _accumulate(ctx, element, out, epsilon=epsilon, eta=eta)
    return out


def local_convection(mesh, element, basis, edge_basis, b, c=None, quad_order=None):
    """Convective-reactive local blocks of one element."""
    _check_element(mesh, element)
    ctx = get_context(mesh, basis, edge_basis, quad_order)
    xv = ctx.X_vol[element]
    bx_v, by_v = _eval_velocity(b, xv[:, 0], xv[:, 1])
    c_v = _eval_scalar(c, xv[:, 0], xv[:, 1])
    edge_b = []
    for s in range(3):
        xe = ctx.X_edge[mesh.elem_edges[element, s]]
        edge_b.append(_eval_velocity(b, xe[:, 0], xe[:, 1]))
    out = LocalBlocks.zeros(element, basis.dim, 3 * edge_basis.dim)
    _accumulate(ctx, element, out, conv=(bx_v, by_v, c_v, edge_b))
    return out


def local_load(mesh, element, basis, edge_basis, f, g_N=None, quad_order=None):
    """Local load vector: volume source plus Neumann flux data."""
    _check_element(mesh, element)
    ctx = get_context(mesh, basis, edge_basis, quad_order)
    xv = ctx.X_vol[element]
    f_v = _eval_scalar(f, xv[:, 0], xv[:, 1])
    g_slots = None
    if g_N is not None:
        g_slots = [None, None, None]
        for s in range(3):
            e = mesh.elem_edges[element, s]
            if mesh.edge_tags[e] == _NEUMANN:
                xe = ctx.X_edge[e]
                g_slots[s] = _as_field(g_N(xe[:, 0], xe[:, 1]), xe[:, 0].shape)
    out = LocalBlocks.zeros(element, basis.dim, 3 * edge_basis.dim)
    _accumulate(ctx, element, out, load=(f_v, g_slots))
    return out


def assemble_local_systems(mesh, dofmap, problem, eta=None, quad_order=None,
                           parts=("diffusion", "convection", "load")):
    """Local blocks of the full form for every element.

    Field coefficients are evaluated once on the whole mesh; the element
    loop is pure small dense algebra.  ``parts`` restricts the assembled
    terms (used by diagnostics and tests).
    """
    unknown = set(parts) - {"diffusion", "convection", "load"}
    if unknown:
        raise ValueError(f"unknown assembly parts {sorted(unknown)}")
    degree = dofmap.degree
    if eta is None:
        eta = default_eta(degree)
    if not eta > 0.0:
        raise ValueError(f"penalty eta must be positive, got {eta!r}")
    ctx = get_context(mesh, get_element_basis(degree), get_edge_basis(degree), quad_order)

    xv = ctx.X_vol
    xe = ctx.X_edge
    do_diff = "diffusion" in parts
    do_conv = "convection" in parts
    do_load = "load" in parts

    if do_conv:
        bx_v, by_v = _eval_velocity(problem.b, xv[..., 0], xv[..., 1])
        c_v = _eval_scalar(problem.c, xv[..., 0], xv[..., 1])
        bx_e, by_e = _eval_velocity(problem.b, xe[..., 0], xe[..., 1])
    if do_load:
        f_v = _eval_scalar(problem.f, xv[..., 0], xv[..., 1])
        g_e = None
        if problem.g_N is not None and np.any(mesh.edge_tags == _NEUMANN):
            g_e = _eval_scalar(problem.g_N, xe[..., 0], xe[..., 1])

    nd = ctx.basis.dim
    ntr = 3 * ctx.edge_basis.dim
    systems = []
    for t in range(mesh.n_elements):
        out = LocalBlocks.zeros(t, nd, ntr)
        if do_diff:
            _accumulate(ctx, t, out, epsilon=problem.epsilon, eta=eta)
        if do_conv:
            eids = mesh.elem_edges[t]
            edge_b = [(bx_e[e], by_e[e]) for e in eids]
            _accumulate(ctx, t, out, conv=(bx_v[t], by_v[t], c_v[t] if c_v is not None else None, edge_b))
        if do_load:
            g_slots = None
            if g_e is not None:
                g_slots = [g_e[e] if mesh.edge_tags[e] == _NEUMANN else None
                           for e in mesh.elem_edges[t]]
            _accumulate(ctx, t, out, load=(f_v[t], g_slots))
        out.trace_gids = dofmap.element_trace_dofs(t)
        systems.append(out)
    return systems


def assemble_monolithic(mesh, dofmap, problem, eta=None, quad_order=None,
                        parts=("diffusion", "convection", "load")):
    """Uncondensed sparse system over interior plus active trace dofs.

    This is the reference path the condensed solver is checked against.
    Returns (A, rhs) with A in CSR format.
    """
    systems = assemble_local_systems(mesh, dofmap, problem, eta=eta,
                                     quad_order=quad_order, parts=parts)
    n_int = dofmap.n_interior
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.n_total)
    for blk in systems:
        gi = dofmap.element_dofs(blk.element)
        act = np.nonzero(blk.trace_gids >= 0)[0]
        gt = n_int + blk.trace_gids[act]
        rows.append(np.repeat(gi, gi.size))
        cols.append(np.tile(gi, gi.size))
        vals.append(blk.A_uu.ravel())
        if act.size:
            rows.append(np.repeat(gi, gt.size))
            cols.append(np.tile(gt, gi.size))
            vals.append(blk.A_ut[:, act].ravel())
            rows.append(np.repeat(gt, gi.size))
            cols.append(np.tile(gi, gt.size))
            vals.append(blk.A_tu[act, :].ravel())
            rows.append(np.repeat(gt, gt.size))
            cols.append(np.tile(gt, gt.size))
            vals.append(blk.A_tt[np.ix_(act, act)].ravel())
            np.add.at(rhs, gt, blk.b_t[act])
        rhs[gi] += blk.b_u
    n = dofmap.n_total
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    return mat, rhs


def dump_matrix(matrix, path):
    """Write a sparse matrix as 'row col value' triplets, sorted by row, col."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")
