"""Manufactured convection-diffusion cases used by the studies and tests.

Each case bundles a :class:`~hdgcd.assembly.ProblemSpec` with the exact
solution, its gradient, the measurement region, the exact maximum (for
overshoot checks) and a quadrature hint for data with sharp gradients.
Sources are hard-coded analytically; :func:`verify_source_term`
cross-checks them against finite differences of the exact solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize

from hdgcd.analysis import FULL_REGION, Region, subsquare
from hdgcd.assembly import ProblemSpec
from hdgcd.mesh import ON_BOUNDARY_TOL, dirichlet_where

CASE_NAMES = ("smooth", "layer", "reduced_limit")


@dataclass(frozen=True)
class ManufacturedCase:
    """A problem with known exact solution and measurement metadata.

    ``reduced_exact`` marks cases whose ``exact`` solves the limiting
    first-order problem (epsilon = 0) rather than the full equation; for
    those the source check drops the diffusion term.
    """

    name: str
    problem: ProblemSpec
    exact: Callable
    exact_grad: Callable
    region: Region
    exact_max: float
    sample_box: Tuple[Tuple[float, float], Tuple[float, float]]
    quad_order: Optional[int] = None
    reduced_exact: bool = False


def _check_epsilon(epsilon):
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    return float(epsilon)


def case_smooth(epsilon):
    """u = sin(pi x) sin(pi y), b = (1, 1), c = 0, homogeneous Dirichlet."""
    eps = _check_epsilon(epsilon)

    def exact(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def exact_grad(x, y):
        return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))

    def f(x, y):
        sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
        sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
        return 2.0 * eps * np.pi ** 2 * sx * sy + np.pi * (cx * sy + sx * cy)

    problem = ProblemSpec(epsilon=eps, b=lambda x, y: (np.ones_like(x), np.ones_like(y)),
                          f=f, c=None, g_N=None, boundary=None, rho0=0.0)
    return ManufacturedCase(name="smooth", problem=problem, exact=exact,
                            exact_grad=exact_grad, region=FULL_REGION,
                            exact_max=1.0,
                            sample_box=((0.01, 0.99), (0.01, 0.99)))


def _layer_profile(eps):
    """1-D factor A(t) = sin(pi t / 2) (1 - exp((t - 1) / eps)) and derivatives."""

    def a(t):
        s = np.sin(0.5 * np.pi * t)
        e = np.exp((t - 1.0) / eps)
        return s * (1.0 - e)

    def da(t):
        s = np.sin(0.5 * np.pi * t)
        ds = 0.5 * np.pi * np.cos(0.5 * np.pi * t)
        e = np.exp((t - 1.0) / eps)
        return ds * (1.0 - e) - s * e / eps

    def d2a(t):
        s = np.sin(0.5 * np.pi * t)
        ds = 0.5 * np.pi * np.cos(0.5 * np.pi * t)
        d2s = -(0.5 * np.pi) ** 2 * s
        e = np.exp((t - 1.0) / eps)
        return d2s * (1.0 - e) - 2.0 * ds * e / eps - s * e / eps ** 2

    return a, da, d2a


def _layer_max(a, eps):
    """Global maximum of the 1-D profile, located inside the outflow layer."""
    grid = np.concatenate([np.linspace(0.0, 1.0, 4001),
                           1.0 - eps * np.linspace(0.0, 80.0, 4001)])
    grid = grid[(grid >= 0.0) & (grid <= 1.0)]
    vals = a(grid)
    t0 = grid[int(np.argmax(vals))]
    span = max(eps, 1e-3)
    res = optimize.minimize_scalar(lambda t: -a(t),
                                   bounds=(max(0.0, t0 - span), min(1.0, t0 + span)),
                                   method="bounded",
                                   options={"xatol": 1e-14})
    return float(max(vals.max(), -res.fun))


def case_layer(epsilon):
    """Tensor-product solution with exponential layers along x = 1 and y = 1.

    u = sin(pi x / 2) sin(pi y / 2) (1 - e^{(x-1)/eps}) (1 - e^{(y-1)/eps}),
    b = (1, 1), c = 0, homogeneous Dirichlet everywhere.  Errors are
    measured on (0, 0.9)^2 where the solution is layer-free; the data
    quadrature is elevated because f varies on the eps scale.
    """
    eps = _check_epsilon(epsilon)
    a, da, d2a = _layer_profile(eps)

    def exact(x, y):
        return a(x) * a(y)

    def exact_grad(x, y):
        return da(x) * a(y), a(x) * da(y)

    def f(x, y):
        return -eps * (d2a(x) * a(y) + a(x) * d2a(y)) + da(x) * a(y) + a(x) * da(y)

    amax = _layer_max(a, eps)
    problem = ProblemSpec(epsilon=eps, b=lambda x, y: (np.ones_like(x), np.ones_like(y)),
                          f=f, c=None, g_N=None, boundary=None, rho0=0.0)
    return ManufacturedCase(name="layer", problem=problem, exact=exact,
                            exact_grad=exact_grad, region=subsquare(0.9),
                            exact_max=amax * amax,
                            sample_box=((0.01, 0.89), (0.01, 0.89)),
                            quad_order=12)


def case_reduced_limit(epsilon):
    """Family approaching the first-order limit: u0 = x e^{-x}.

    b = (1, 0), c = 1, f = e^{-x}; u0 solves b . grad(u0) + c u0 = f with
    u0 = 0 on the inflow boundary x = 0.  Only the inflow is Dirichlet;
    the rest is Neumann with g_N = 0, so the epsilon-problem tends to the
    transport problem without closing a boundary layer in the measured
    distance.  rho = c - div(b)/2 = 1.
    """
    eps = _check_epsilon(epsilon)

    def exact(x, y):
        return x * np.exp(-x) * np.ones_like(y)

    def exact_grad(x, y):
        return (1.0 - x) * np.exp(-x) * np.ones_like(y), np.zeros_like(y)

    def f(x, y):
        return np.exp(-x) * np.ones_like(y)

    problem = ProblemSpec(epsilon=eps,
                          b=lambda x, y: (np.ones_like(x), np.zeros_like(y)),
                          f=f, c=lambda x, y: np.ones_like(x), g_N=None,
                          boundary=dirichlet_where(lambda x, y: x < ON_BOUNDARY_TOL),
                          rho0=1.0)
    return ManufacturedCase(name="reduced_limit", problem=problem, exact=exact,
                            exact_grad=exact_grad, region=FULL_REGION,
                            exact_max=float(np.exp(-1.0)),
                            sample_box=((0.01, 0.99), (0.01, 0.99)),
                            reduced_exact=True)


def get_case(name, epsilon):
    """Look up a case constructor by name."""
    table = {"smooth": case_smooth, "layer": case_layer, "reduced_limit": case_reduced_limit}
    if name not in table:
        raise ValueError(f"unknown case {name!r}; available: {', '.join(CASE_NAMES)}")
    return table[name](epsilon)


def _fd_step(eps):
    # Resolve the layer scale when it matters but keep the step large
    # enough that double-precision roundoff stays below the tolerance.
    return min(1e-3, max(2e-4, 0.02 * eps))


def _fd_second(func, x, y, h, axis):
    # 4th-order central second derivative.
    def at(shift):
        if axis == 0:
            return func(x + shift * h, y)
        return func(x, y + shift * h)

    return (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0)
            + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * h * h)


def _fd_first(func, x, y, h, axis):
    # 4th-order central first derivative.
    def at(shift):
        if axis == 0:
            return func(x + shift * h, y)
        return func(x, y + shift * h)

    return (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)


def verify_source_term(case, n_points=1000, seed=20240214, tol=1e-8, grad_tol=1e-7):
    """Cross-check the hard-coded source against finite differences.

    At random sample points inside the case's sample box, the stated
    gradient is compared with a finite-difference gradient, and f is
    compared with -eps lap(u) + b . grad(u) + c u using a finite-difference
    laplacian (the diffusion term is dropped for reduced-limit cases).
    Residuals are scaled by 1 + |value|; the maximum scaled residual is
    returned, and a ValueError reports a failure.
    """
    rng = np.random.default_rng(seed)
    (xlo, xhi), (ylo, yhi) = case.sample_box
    x = rng.uniform(xlo, xhi, n_points)
    y = rng.uniform(ylo, yhi, n_points)
    problem = case.problem
    h = _fd_step(problem.epsilon)

    gx, gy = case.exact_grad(x, y)
    fx = _fd_first(case.exact, x, y, h, axis=0)
    fy = _fd_first(case.exact, x, y, h, axis=1)
    grad_resid = np.maximum(np.abs(gx - fx) / (1.0 + np.abs(gx)),
                            np.abs(gy - fy) / (1.0 + np.abs(gy)))
    worst_grad = float(grad_resid.max())
    if worst_grad > grad_tol:
        i = int(np.argmax(grad_resid))
        raise ValueError(
            f"case {case.name}: gradient mismatch {worst_grad:.3e} at ({x[i]:.4f}, {y[i]:.4f})")

    bx, by = problem.b(x, y)
    pde = np.asarray(bx) * gx + np.asarray(by) * gy
    if problem.c is not None:
        pde = pde + np.asarray(problem.c(x, y)) * case.exact(x, y)
    if not case.reduced_exact:
        lap = (_fd_second(case.exact, x, y, h, axis=0)
               + _fd_second(case.exact, x, y, h, axis=1))
        pde = pde - problem.epsilon * lap
    fv = np.asarray(problem.f(x, y), dtype=float)
    resid = np.abs(fv - pde) / (1.0 + np.abs(fv))
    worst = float(resid.max())
    if worst > tol:
        i = int(np.argmax(resid))
        raise ValueError(
            f"case {case.name}: source mismatch {worst:.3e} at ({x[i]:.4f}, {y[i]:.4f})")
    return max(worst, worst_grad)
