"""The dual problem of the Nash system with quadratic auxiliary potential.

The dual variable ``a`` is a vector field with ``a(T) = 0``. It generates the
pair ``E = d_t a``, ``B = L* a``, which satisfies the linear constraint
identically. Inside the DtP zone (``I + 2B`` positive definite) the primal
velocity is recovered pointwise as ``v = (I + 2B)^-1 (vbar - E)``.

Sign convention: :func:`dual_objective` returns the concave quantity that
the dual problem maximizes,

    J(a) = int [ -(v0, E) + 1/2 (vbar, vbar) ] dt + K(E - vbar, B),

and the gradient flow descends ``S(a) = -J(a)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import GridMismatchError, InvalidDensityError, ShapeError, ZoneExitError
from .fields import (
    SpaceTimeGrid,
    apply_L_adjoint,
    average_field,
    inner_spacetime,
    integrate_time,
    inner_space,
    norm_spacetime,
    spatial_gradient,
    time_derivative,
    time_derivative_adjoint,
)
from .flow import Evaluation
from .operators import PlayerConfig, apply_U_vv

EPS_PSD = 1e-10
EPS_RANGE = 1e-8
EPS_ZONE = 1e-3
NEG_INF = -np.inf


@dataclass(frozen=True)
class DtPZoneReport:
    """Zone diagnostics: smallest eigenvalue of ``I + 2B`` per node."""

    min_margin: float
    violating_fraction: float
    margin_field: np.ndarray
    eps_zone: float

    @property
    def inside(self):
        return self.violating_fraction == 0.0


def _flat_matrices(M, n):
    return np.ascontiguousarray(M).reshape(-1, n, n)


def zone_margin(B, eps_zone=EPS_ZONE):
    """Smallest eigenvalue of ``I + 2B`` at every node, with aggregates."""
    B = np.asarray(B, dtype=float)
    n = B.shape[-1]
    if B.shape[-2] != n:
        raise ShapeError("B must be a field of square matrices")
    M = np.eye(n) + 2.0 * B
    lam = kernels.min_eigenvalues(_flat_matrices(M, n)).reshape(B.shape[:-2])
    frac = float(np.mean(lam <= eps_zone)) if lam.size else 0.0
    return DtPZoneReport(float(np.min(lam)), frac, lam, eps_zone)


def eb_from_a(a, grid: SpaceTimeGrid, cfg: PlayerConfig):
    """``(E, B) = (d_t a, L* a)``."""
    a = grid.check_vector(a, cfg.n)
    return time_derivative(a, grid), apply_L_adjoint(a, grid, cfg)


def _dtp_solve(E, B, vbar, shift):
    E = np.asarray(E, dtype=float)
    B = np.asarray(B, dtype=float)
    vbar = np.asarray(vbar, dtype=float)
    n = vbar.shape[-1]
    if E.shape != vbar.shape or B.shape != vbar.shape + (n,):
        raise ShapeError("E, B and vbar do not conform")
    M = np.eye(n) + 2.0 * B
    x, status = kernels.spd_solve(_flat_matrices(M, n), (vbar - E).reshape(-1, n), shift)
    return x.reshape(vbar.shape), status.reshape(vbar.shape[:-1])


def dtp_map(E, B, vbar):
    """Pointwise ``v = (I + 2B)^-1 (vbar - E)``.

    Raises :class:`ZoneExitError` (with a :class:`DtPZoneReport`) when
    ``I + 2B`` fails to be positive definite at some node.
    """
    v, status = _dtp_solve(E, B, vbar, 0.0)
    if np.any(status == 0):
        raise ZoneExitError("I + 2B is not positive definite at some node", zone_margin(B, 0.0))
    return v


def k_functional(Q, B, grid: SpaceTimeGrid, eps_psd=EPS_PSD, eps_range=EPS_RANGE):
    """Closed form of the functional ``K(Q, B)``; ``-inf`` where it is unbounded.

    Inside the zone this is ``-1/2 int <Q, (I + 2B)^-1 Q> dt``. At nodes where
    ``I + 2B`` is singular but PSD the pseudo-inverse is used, provided
    ``Q`` lies in its range.
    """
    Q = np.asarray(Q, dtype=float)
    B = np.asarray(B, dtype=float)
    n = Q.shape[-1]
    if B.shape != Q.shape + (n,):
        raise ShapeError("Q and B do not conform")
    if Q.shape[:-1] != grid.shape:
        raise GridMismatchError("K is evaluated on full space-time fields")
    Mf = _flat_matrices(np.eye(n) + 2.0 * B, n)
    Qf = Q.reshape(-1, n)
    x, status = kernels.spd_solve(Mf, Qf, eps_psd)
    dens = np.einsum("ka,ka->k", Qf, np.where(status[:, None] == 2, x, 0.0))
    for k in np.flatnonzero(status < 2):
        lam, V = np.linalg.eigh(Mf[k])
        if lam[0] < -eps_psd:
            return NEG_INF
        q = V.T @ Qf[k]
        null = lam <= eps_psd
        scale = max(1.0, float(np.linalg.norm(Qf[k])))
        if np.any(np.abs(q[null]) > eps_range * scale):
            return NEG_INF
        dens[k] = float(np.sum(q[~null] ** 2 / lam[~null]))
    dens = dens.reshape(grid.shape)
    space = np.sum(dens, axis=tuple(range(1, 1 + grid.m))) * grid.cell_volume
    return -0.5 * float(integrate_time(space, grid))


def frak_c(vbar, v0, grid: SpaceTimeGrid):
    """``int [ -(v0, vbar) + 1/2 (vbar, vbar) ] dt``; ``v0`` may be a time slice."""
    vbar = np.asarray(vbar, dtype=float)
    v0 = np.broadcast_to(np.asarray(v0, dtype=float), vbar.shape)
    vals = -inner_space(v0, vbar, grid) + 0.5 * inner_space(vbar, vbar, grid)
    return float(integrate_time(vals, grid))


@dataclass(frozen=True)
class NashDualProblem:
    """Dual problem data: players, grid, initial velocity and base state.

    ``v0`` is a single time slice (the gradient of the terminal-cost
    potential); ``vbar`` is a full space-time vector field.
    """

    cfg: PlayerConfig
    grid: SpaceTimeGrid
    v0: np.ndarray
    vbar: np.ndarray

    def __post_init__(self):
        v0 = np.asarray(self.v0, dtype=float)
        if v0.shape == self.grid.shape + (self.cfg.n,):
            if np.ptp(v0, axis=0).max(initial=0.0) != 0.0:
                raise ValueError("v0 must be constant in time")
            v0 = v0[0]
        if v0.shape != self.grid.spatial_shape + (self.cfg.n,):
            raise GridMismatchError(f"v0 has shape {v0.shape}")
        vbar = self.grid.check_vector(self.vbar, self.cfg.n)
        if not (np.all(np.isfinite(v0)) and np.all(np.isfinite(vbar))):
            raise ValueError("v0 and vbar must be finite")
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "vbar", vbar)

    @property
    def base_state(self):
        return self.vbar

    def zero_state(self):
        return np.zeros(self.grid.shape + (self.cfg.n,))

    def rebase(self, base_state):
        return replace(self, vbar=np.asarray(base_state, dtype=float))

    def eb(self, a):
        return eb_from_a(a, self.grid, self.cfg)

    def dtp(self, a):
        E, B = self.eb(a)
        return dtp_map(E, B, self.vbar)

    def zone_report(self, a, eps_zone=EPS_ZONE):
        return zone_margin(self.eb(a)[1], eps_zone)

    def min_margin(self, a):
        return self.zone_report(a, 0.0).min_margin

    def weak_gradient(self, v):
        """Riesz representative of the discrete weak residual of ``v``."""
        g = time_derivative_adjoint(self.v0[None] - v, self.grid)
        g += spatial_gradient(apply_U_vv(v, self.cfg), self.grid, self.cfg)
        g[-1] = 0.0
        return g

    def evaluate(self, a, eps_zone=EPS_ZONE):
        E, B = self.eb(a)
        v, status = _dtp_solve(E, B, self.vbar, eps_zone)
        if np.any(status == 0):
            raise ZoneExitError("DtP map undefined", zone_margin(B, eps_zone))
        g = self.weak_gradient(v)
        return Evaluation(
            gradient=g,
            grad_norm=norm_spacetime(g, self.grid),
            primal=v,
            violating_fraction=float(np.mean(status < 2)),
        )

    def dual_value(self, a):
        return dual_objective(a, self)

    def objective(self, a):
        return -dual_objective(a, self)


def dual_objective_pair(E, B, problem: NashDualProblem):
    """The dual objective at an arbitrary pair ``(E, B)``."""
    grid = problem.grid
    E = np.asarray(E, dtype=float)
    vbar = problem.vbar
    lin = -inner_space(np.broadcast_to(problem.v0, E.shape), E, grid)
    lin = lin + 0.5 * inner_space(vbar, vbar, grid)
    K = k_functional(E - vbar, B, grid)
    if K == NEG_INF:
        return NEG_INF
    return float(integrate_time(lin, grid)) + K


def dual_objective(a, problem: NashDualProblem):
    """Concave dual objective at the dual variable ``a`` (``-inf`` off the zone)."""
    E, B = problem.eb(a)
    return dual_objective_pair(E, B, problem)


def dual_gradient(a, problem: NashDualProblem, eps_zone=0.0):
    """Exact gradient of the discrete ``S = -J`` in the space-time ``L2`` product.

    The terminal slice is zero, so the flow keeps ``a(T) = 0``.
    """
    ev = problem.evaluate(a, eps_zone)
    return ev.gradient


def construct_consistent_dual(v, G, u, eps_psd=EPS_PSD):
    """Base state and dual pair reproducing ``v`` through the DtP map.

    Returns ``(vbar, E, B)`` with ``vbar = G (v - u)``, ``E = vbar - G v`` and
    ``B = (G - I) / 2``, so that ``I + 2B = G`` and ``vbar - E = G v``.
    """
    v = np.asarray(v, dtype=float)
    G = np.asarray(G, dtype=float)
    u = np.asarray(u, dtype=float)
    n = v.shape[-1]
    if G.shape != v.shape + (n,) or u.shape != v.shape:
        raise ShapeError("v, G and u do not conform")
    lam = kernels.min_eigenvalues(_flat_matrices(G, n))
    if lam.size and lam.min() < -eps_psd:
        raise InvalidDensityError(f"density has eigenvalue {lam.min():.3e}")
    Gv = np.einsum("...ab,...b->...a", G, v)
    vbar = Gv - np.einsum("...ab,...b->...a", G, u)
    E = vbar - Gv
    B = 0.5 * (G - np.eye(n))
    return vbar, E, B


@dataclass(frozen=True)
class GapReport:
    gap: float
    primal: float
    dual: float


def primal_value(v, problem: NashDualProblem):
    """``int 1/2 ||v - vbar||^2 dt``."""
    d = np.asarray(v, dtype=float) - problem.vbar
    return 0.5 * inner_spacetime(d, d, problem.grid)


def duality_gap(v, candidate, problem: NashDualProblem):
    """Gap between the primal value of ``v`` and the dual value of ``candidate``.

    ``candidate`` is either a dual variable ``a`` or a pair ``(E, B)``.
    """
    if isinstance(candidate, tuple):
        dual = dual_objective_pair(candidate[0], candidate[1], problem)
    else:
        dual = dual_objective(candidate, problem)
    primal = primal_value(v, problem)
    return GapReport(abs(primal - dual), primal, dual)


def admissible_pair(vbar, grid: SpaceTimeGrid):
    """The admissible pair ``(avg vbar, 0)``; ``avg`` is the spatial mean per time."""
    Pi = average_field(vbar, grid)
    return Pi, np.zeros(Pi.shape + (Pi.shape[-1],))


def admissible_dual(vbar, grid: SpaceTimeGrid):
    """``a = (t - T) * avg(vbar)``.

    Generates the pair ``(avg vbar, 0)`` only when the spatial mean of
    ``vbar`` does not depend on time; otherwise ``d_t a`` picks up
    ``(t - T) d_t avg(vbar)``. Use :func:`admissible_pair` for the pair itself.
    """
    Pi = average_field(vbar, grid)
    return (grid.times - grid.T).reshape((-1,) + (1,) * (Pi.ndim - 1)) * Pi
