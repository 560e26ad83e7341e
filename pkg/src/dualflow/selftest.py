"""Compact invariant suite behind ``dualflow selftest``."""
from __future__ import annotations

import numpy as np

from .dual_core import (NashDualProblem, construct_consistent_dual, dtp_map, eb_from_a, k_functional)
from .fields import (SpaceTimeGrid, apply_L, apply_L_adjoint, constraint_residual, inner_spacetime,
                     spatial_divergence, spatial_gradient)
from .flow import STALLED
from .hj import solve_transport_backward
from .operators import PlayerConfig, apply_U, apply_U_adjoint, trace_U_adjoint
from .toy import ToyProblem, toy_gradient, toy_objective, toy_run


def smooth_field(rng, grid, ncomp, amp=0.05, modes=3, time_dependent=True):
    """Sum of a few low Fourier modes with random amplitudes."""
    x = grid.coords()
    out = np.zeros(grid.spatial_shape + (ncomp,))
    for _ in range(modes):
        k = rng.integers(-2, 3, size=grid.m)
        phase = 2 * np.pi * (x @ k) + rng.uniform(0, 2 * np.pi)
        out += np.cos(phase)[..., None] * rng.normal(size=ncomp) * amp
    if not time_dependent:
        return out
    t = grid.times.reshape((-1,) + (1,) * (grid.m + 1))
    return out[None] * (1 + t) + amp * np.sin(3 * t) * rng.normal(size=ncomp)


def _operators(rng):
    worst = 0.0
    for N, p in ((2, 1), (2, 2), (3, 1)):
        cfg = PlayerConfig(N, p)
        for _ in range(50):
            A = rng.normal(size=(cfg.n, cfg.n))
            y = rng.normal(size=N)
            lhs = apply_U(A, cfg) @ y
            rhs = np.sum(A * apply_U_adjoint(y, cfg))
            worst = max(worst, abs(lhs - rhs), abs(np.trace(apply_U_adjoint(y, cfg)) - trace_U_adjoint(y, cfg)))
    return worst <= 1e-10, f"max defect {worst:.2e}"


def _grid_adjoint(rng):
    cfg = PlayerConfig(2, 1)
    grid = SpaceTimeGrid(0.5, 5, cfg.m, 8)
    F = rng.normal(size=grid.shape + (cfg.N,))
    a = rng.normal(size=grid.shape + (cfg.n,))
    d1 = abs(inner_spacetime(spatial_gradient(F, grid, cfg), a, grid)
             + inner_spacetime(F, spatial_divergence(a, grid, cfg), grid))
    Psi = rng.normal(size=grid.shape + (cfg.n, cfg.n))
    Psi = Psi + np.swapaxes(Psi, -1, -2)
    d2 = abs(inner_spacetime(apply_L(Psi, grid, cfg), a, grid)
             - inner_spacetime(Psi, apply_L_adjoint(a, grid, cfg), grid, ncomp_axes=2))
    return max(d1, d2) <= 1e-10, f"grad/div {d1:.1e}, L/L* {d2:.1e}"


def _constraint(rng):
    cfg = PlayerConfig(2, 1)
    grid = SpaceTimeGrid(0.5, 9, cfg.m, 8)
    a = rng.normal(size=grid.shape + (cfg.n,))
    a[-1] = 0
    E, B = eb_from_a(a, grid, cfg)
    r = constraint_residual(E, B, grid, cfg)
    return r <= 1e-10, f"residual {r:.1e}"


def _gradient(rng):
    cfg = PlayerConfig(2, 1)
    grid = SpaceTimeGrid(0.25, 9, cfg.m, 8)
    v0 = smooth_field(rng, grid, cfg.n, 0.1, time_dependent=False)
    prob = NashDualProblem(cfg, grid, v0, smooth_field(rng, grid, cfg.n, 0.1))
    a = smooth_field(rng, grid, cfg.n, 0.01) * (grid.times - grid.T).reshape(-1, 1, 1, 1)
    g = prob.evaluate(a, 0.0).gradient
    worst = 0.0
    for _ in range(5):
        d = smooth_field(rng, grid, cfg.n, 1.0)
        d[-1] = 0
        an = inner_spacetime(g, d, grid)
        errs = []
        for h in (1e-4, 1e-5, 1e-6):
            fd = (prob.objective(a + h * d) - prob.objective(a - h * d)) / (2 * h)
            errs.append(abs(fd - an) / max(abs(an), 1e-300))
        worst = max(worst, min(errs))
    return worst <= 1e-6, f"relative error {worst:.1e}"


def _dtp(rng):
    n = 4
    vbar = rng.normal(size=(50, n))
    fixed = np.max(np.abs(dtp_map(np.zeros_like(vbar), np.zeros((50, n, n)), vbar) - vbar))
    A = rng.normal(size=(50, n, n))
    G = A @ np.swapaxes(A, -1, -2) + 0.1 * np.eye(n)
    v = rng.normal(size=(50, n))
    vb, E, B = construct_consistent_dual(v, G, rng.normal(size=(50, n)))
    rt = np.max(np.abs(dtp_map(E, B, vb) - v))
    return fixed == 0.0 and rt <= 1e-11, f"fixed point {fixed:.1e}, round trip {rt:.1e}"


def _kfun(rng):
    grid = SpaceTimeGrid(1.0, 3, 1, 4)
    Q = rng.normal(size=grid.shape + (2,))
    K = k_functional(Q, np.zeros(grid.shape + (2, 2)), grid)
    ref = -0.5 * inner_spacetime(Q, Q, grid)
    return abs(K - ref) <= 1e-12, f"B=0 defect {abs(K - ref):.1e}"


def _toy(rng):
    worst = 0.0
    for _ in range(50):
        D = rng.uniform(-0.4, 0.4, size=2)
        vbar = rng.normal(size=2)
        c = rng.normal()
        g = toy_gradient(D, vbar, c)
        h = 1e-6
        fd = np.array([(toy_objective(D + h * e, vbar, c) - toy_objective(D - h * e, vbar, c)) / (2 * h)
                       for e in np.eye(2)])
        worst = max(worst, np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-12))
    still = toy_run(0.0)
    stall = toy_run(-0.5)
    ok = worst <= 1e-7 and still.stages[0].steps == 0 and stall.final_status == STALLED
    return ok, f"envelope {worst:.1e}, c=0 steps {still.stages[0].steps}, c=-1/2 {stall.final_status}"


def _transport(rng):
    grid = SpaceTimeGrid(0.5, 33, 1, 64)
    x = grid.coords()[..., 0]
    u = 0.3 * np.sin(2 * np.pi * x)[None, :, None] * np.ones((grid.nt, 1, 1))
    rho = solve_transport_backward(u, grid)
    mass = np.max(np.abs(rho.mean(axis=1) - 1))
    return mass <= 1e-8 and rho.min() > 0, f"mass defect {mass:.1e}, min rho {rho.min():.3f}"


CHECKS = (
    ("coupling operator adjoint and trace", _operators),
    ("grad/div and L/L* adjointness", _grid_adjoint),
    ("constraint holds for generated pairs", _constraint),
    ("dual gradient vs finite differences", _gradient),
    ("DtP fixed point and consistency round trip", _dtp),
    ("K functional closed form at B=0", _kfun),
    ("toy envelope, constant flow, stall", _toy),
    ("transport mass and positivity", _transport),
)


def run_selftest(seed=0, out=print):
    """Run every check; print a table and return the list of ``(name, ok, detail)``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        out(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return rows
