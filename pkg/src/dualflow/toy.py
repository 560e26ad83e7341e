"""Two-unknown algebraic model with closed-form oracles.

The system is ``Q_c(U)_i = (U_1 - c)(U_2 - c) - (U_i - c) = 0`` with the two
solutions ``(c, c)`` and ``(c + 1, c + 1)``. Its dual state ``D`` lives in
``R^2``; the DtP zone is ``|D_1 + D_2| < 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import SingularityError, ZoneExitError
from .flow import Evaluation, FlowConfig, run_scheme

ZONE_TOL = 1e-12

TOY_FLOW = FlowConfig(tau=1e-11, nu=1e-3, mu=1e3, eps_zone=1e-6,
                      ds_init=1e-4, ds_min=1e-12, ds_max=1e-3, max_stages=8)


def toy_residual(U, c):
    U = np.asarray(U, dtype=float)
    x, y = U[0] - c, U[1] - c
    return np.array([x * y - x, x * y - y])


def toy_dtp(D, vbar, c):
    """Unique solution ``u`` of the stationarity system for the dual state ``D``."""
    D = np.asarray(D, dtype=float)
    vbar = np.asarray(vbar, dtype=float)
    sigma = D[0] + D[1]
    if abs(abs(sigma) - 1.0) <= ZONE_TOL:
        raise ZoneExitError(f"|D1 + D2| = 1 (D = {D})", 1.0 - abs(sigma))
    b1 = vbar[0] - c - D[0]
    b2 = vbar[1] - c - D[1]
    # decoupled symmetric / antisymmetric parts of u - c; keeps symmetric
    # inputs exactly symmetric
    s = (b1 + b2) / (1.0 - sigma)
    a = (b1 - b2) / (1.0 + sigma)
    return np.array([0.5 * (s + a) + c, 0.5 * (s - a) + c])


def _check_zone(D):
    sigma = float(D[0] + D[1])
    if abs(sigma) >= 1.0:
        raise ZoneExitError(f"outside the DtP zone (|D1 + D2| = {abs(sigma):.3g})", 1.0 - abs(sigma))
    return sigma


def toy_objective(D, vbar, c):
    """Convex driving energy of the toy flow inside the zone."""
    D = np.asarray(D, dtype=float)
    vbar = np.asarray(vbar, dtype=float)
    sigma = _check_zone(D)
    w = D - vbar + c
    M = np.array([[1.0, -sigma], [-sigma, 1.0]])
    cv = c - vbar
    return 0.5 * float(w @ np.linalg.solve(M, w)) - 0.5 * float(cv @ cv)


def toy_gradient(D, vbar, c):
    """``Q_c`` evaluated at the DtP image (envelope theorem)."""
    _check_zone(np.asarray(D, dtype=float))
    return toy_residual(toy_dtp(D, vbar, c), c)


def toy_reduced_rhs(d, c_eff):
    """Right-hand side of the flow restricted to the line ``D_1 = D_2 = d``."""
    den = 2.0 * d - 1.0
    if abs(den) <= ZONE_TOL:
        raise SingularityError("2d - 1 = 0")
    q = (c_eff + d) / den
    return q - q * q


def toy_implicit_solution(d_tilde, c_tilde):
    """Fake time at which the rescaled trajectory ``2d - 1`` reaches ``d_tilde``."""
    ct, dt = float(c_tilde), float(d_tilde)
    if not (ct > 0 and -2.0 < dt < 0.0) or ct == 1.0 or abs(dt) == ct:
        raise ValueError(f"outside the trajectory regime: c~={ct}, d~={dt}")
    return (2 * dt + ct * math.log(abs((ct - dt) / (ct + dt)))
            + 2 - ct * math.log(abs((ct + 1) / (ct - 1))))


def toy_line_trajectory(s, c_eff, d0=0.0):
    """``d(s)`` on the line from the implicit closed form, by root bracketing.

    The closed form is written for ``d(0) = 0``; only that start is supported.
    """
    from scipy.optimize import brentq

    if d0 != 0.0:
        raise ValueError("the closed form starts at d = 0")
    ct = abs(2 * c_eff + 1)
    s = float(s)
    if s == 0.0:
        return 0.0
    # the rescaled variable runs from -1 towards the attractor (or the boundary)
    end = 2 * toy_attractor(c_eff) - 1 if ct < 2 else -2.0
    inner = end - math.copysign(1e-15 * max(1.0, abs(end)), end + 1.0)
    f = lambda x: toy_implicit_solution(x, ct) - s
    if f(inner) <= 0.0:
        # already at the attractor to working precision
        return 0.5 * (end + 1.0)
    x = brentq(f, *sorted((-1.0, inner)), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return 0.5 * (x + 1.0)


def toy_attractor(c_eff):
    """Limit of ``d`` for an equilibrating stage."""
    ct = abs(2 * c_eff + 1)
    if ct >= 2:
        raise ValueError(f"|2c + 1| = {ct} >= 2: the stage leaves the zone")
    return 0.5 - abs(c_eff + 0.5)


def toy_switch_time(c_tilde):
    """Fake time at which the line trajectory meets the zone boundary (``c~ >= 2``)."""
    ct = float(c_tilde)
    if ct < 2:
        raise ValueError("switch time is defined for c~ >= 2")
    if ct == 2:
        return math.inf
    return -2 + ct * math.log((ct + 2) / (ct - 2)) - ct * math.log((ct + 1) / (ct - 1))


def toy_base_recursion(v_k, d_star, c):
    """Next symmetric base state after a switch at ``d(s*) = d_star``."""
    den = 2.0 * d_star - 1.0
    if abs(den) <= ZONE_TOL:
        raise SingularityError("2 d* - 1 = 0")
    return (c - v_k + d_star) / den + c


def toy_base_asymptotic(k, c):
    """Approximate base state ``(c + 1/2)(1 - 2^(1-k))`` of stage ``k``."""
    return (c + 0.5) * (1.0 - 2.0 ** (1 - k))


def toy_selected_solution(c, vbar=(0.0, 0.0)):
    """The solution of the pair closer to ``vbar`` (ties go to ``(c, c)``)."""
    vbar = np.asarray(vbar, dtype=float)
    s0 = np.array([c, c], dtype=float)
    s1 = s0 + 1.0
    return s1 if np.linalg.norm(s1 - vbar) < np.linalg.norm(s0 - vbar) else s0


@dataclass(frozen=True)
class ToyProblem:
    c: float
    vbar: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise ValueError("c must be finite")
        object.__setattr__(self, "vbar", tuple(float(x) for x in self.vbar))

    @property
    def base_state(self):
        return np.array(self.vbar)

    def zero_state(self):
        return np.zeros(2)

    def rebase(self, base_state):
        return replace(self, vbar=tuple(np.asarray(base_state, dtype=float)))

    def min_margin(self, D):
        return 1.0 - abs(float(D[0] + D[1]))

    def evaluate(self, D, eps_zone):
        margin = self.min_margin(D)
        if margin <= 0.0:
            raise ZoneExitError("outside the DtP zone", margin)
        U = toy_dtp(D, self.vbar, self.c)
        g = toy_residual(U, self.c)
        return Evaluation(gradient=g, grad_norm=float(math.hypot(g[0], g[1])), primal=U,
                          violating_fraction=0.0 if margin > eps_zone else 1.0,
                          min_margin=margin)

    def objective(self, D):
        return toy_objective(D, self.vbar, self.c)


class LineInvarianceError(AssertionError):
    pass


def toy_run(c, vbar1=(0.0, 0.0), cfg: FlowConfig = TOY_FLOW, line_tol=1e-12):
    """Run the staged scheme on the toy model from ``vbar1``.

    For a symmetric starting base state every accepted dual state is
    checked to satisfy ``D_1 = D_2`` within ``line_tol``.
    """
    problem = ToyProblem(c, vbar1)
    symmetric = vbar1[0] == vbar1[1]
    worst = [0.0]

    def observer(k, s, D, ev):
        worst[0] = max(worst[0], abs(D[0] - D[1]))

    result = run_scheme(problem, cfg, observer if symmetric else None)
    if symmetric and worst[0] > line_tol:
        raise LineInvarianceError(f"trajectory left the line D1 = D2 by {worst[0]:.3e}")
    result.line_deviation = worst[0] if symmetric else math.nan
    return result
