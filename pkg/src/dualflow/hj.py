"""Single-player laboratory: Hopf-Lax reference, backward transport and
consistency-ensuring base states.

With one player the system reduces to ``d_t psi + 1/2 |grad psi|^2 = 0``,
``psi(0) = psi*``, whose viscosity solution is given by the Hopf-Lax
formula. Densities ``rho`` solving ``d_t rho + div(rho u) = 0`` with
``rho(T) = 1`` produce base states ``vbar = rho (v - u)`` for which the dual
problem reproduces ``v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dual_core import NashDualProblem, construct_consistent_dual, dtp_map, duality_gap, zone_margin
from .errors import GridMismatchError, PositivityError, ShapeError
from .fields import SpaceTimeGrid, apply_L_adjoint, constraint_residual, spatial_gradient, time_derivative
from .operators import PlayerConfig

SIGMA_LADDER = (0.2, 0.1, 0.05, 0.025)


@dataclass(frozen=True)
class FourierPotential:
    """Zero-mean trigonometric polynomial on the unit torus of dimension ``dim``.

    ``modes`` holds ``(k, a, b)`` triples for the term
    ``a cos(2 pi k.x) + b sin(2 pi k.x)`` with integer vectors ``k != 0``.
    """

    dim: int
    modes: tuple = ()

    def __post_init__(self):
        clean = []
        for k, a, b in self.modes:
            k = tuple(int(x) for x in np.atleast_1d(k))
            if len(k) != self.dim:
                raise ShapeError(f"wavevector {k} does not have dimension {self.dim}")
            if not any(k) and (a or b):
                raise ValueError("a constant mode would break the zero-mean normalization")
            clean.append((k, float(a), float(b)))
        object.__setattr__(self, "modes", tuple(clean))

    @classmethod
    def cosine(cls, eps, dim=1, k=None):
        k = (1,) + (0,) * (dim - 1) if k is None else k
        return cls(dim, ((k, eps, 0.0),))

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"points must end with length {self.dim}")
        for k, a, b in self.modes:
            kv = 2 * np.pi * np.array(k, dtype=float)
            ph = x @ kv
            yield kv, a, b, np.cos(ph), np.sin(ph)

    def value(self, x):
        out = np.zeros(np.shape(x)[:-1])
        for kv, a, b, c, s in self._parts(x):
            out += a * c + b * s
        return out

    def grad(self, x):
        out = np.zeros(np.shape(x))
        for kv, a, b, c, s in self._parts(x):
            out += (-a * s + b * c)[..., None] * kv
        return out

    def hess(self, x):
        out = np.zeros(np.shape(x) + (self.dim,))
        for kv, a, b, c, s in self._parts(x):
            out += (-a * c - b * s)[..., None, None] * np.outer(kv, kv)
        return out

    def max_curvature(self):
        """Upper bound for the largest eigenvalue of ``-hess``; sets the shock time."""
        return sum((abs(a) + abs(b)) * (2 * np.pi) ** 2 * float(np.dot(k, k))
                   for k, a, b in self.modes)

    def on_grid(self, grid: SpaceTimeGrid):
        return self.value(grid.coords())


def shock_time_bound(psi: FourierPotential):
    """Lower bound for the first gradient catastrophe of the reference solution."""
    kappa = psi.max_curvature()
    return np.inf if kappa == 0 else 1.0 / kappa


def _candidates(nx, dim, refine):
    """Search points on three periodic copies per dimension."""
    h = 1.0 / (nx * refine)
    base = np.arange(-nx * refine, 2 * nx * refine) * h
    mesh = np.meshgrid(*([base] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def hopf_lax_points(psi: FourierPotential, t, x, nx=64, refine=2, newton_iters=30):
    """Hopf-Lax value and minimizer at arbitrary points ``x`` (shape ``(..., dim)``).

    A brute-force search over a lifted lattice finds the basin; Newton
    iterations on the exact derivatives of ``psi`` then polish the minimizer.
    """
    if not t > 0:
        raise ValueError("Hopf-Lax needs t > 0")
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    X = x.reshape(-1, psi.dim)
    Y = _candidates(nx, psi.dim, refine)
    psiY = psi.value(Y)
    best = np.empty_like(X)
    for start in range(0, len(X), 256):
        chunk = X[start:start + 256]
        d2 = np.sum((chunk[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
        best[start:start + 256] = Y[np.argmin(psiY[None, :] + d2 / (2 * t), axis=1)]

    def objective(y):
        return psi.value(y) + np.sum((X - y) ** 2, axis=-1) / (2 * t)

    y = best
    f = objective(y)
    eye = np.eye(psi.dim)
    for _ in range(newton_iters):
        g = psi.grad(y) - (X - y) / t
        H = psi.hess(y) + eye / t
        lam = np.linalg.eigvalsh(H)[:, 0]
        step = np.zeros_like(y)
        ok = lam > 0
        if np.any(ok):
            step[ok] = -np.linalg.solve(H[ok], g[ok][..., None])[..., 0]
        step[~ok] = -t * g[~ok]
        # backtracking keeps the brute-force basin
        alpha = np.ones(len(y))
        for _ in range(30):
            trial = y + alpha[:, None] * step
            ft = objective(trial)
            bad = ft > f + 1e-15 * (1 + np.abs(f))
            if not np.any(bad):
                break
            alpha[bad] *= 0.5
        trial = y + alpha[:, None] * step
        ft = objective(trial)
        keep = ft <= f + 1e-15 * (1 + np.abs(f))
        y = np.where(keep[:, None], trial, y)
        f = np.where(keep, ft, f)
        if np.max(np.abs(alpha[:, None] * step)) < 1e-15:
            break
    return f.reshape(shape), y.reshape(shape + (psi.dim,))


def hopf_lax(psi: FourierPotential, t, grid: SpaceTimeGrid):
    """Viscosity solution at time ``t`` on the spatial grid, shape ``(nx, ..., nx, 1)``."""
    val, _ = hopf_lax_points(psi, t, grid.coords(), nx=grid.nx)
    return val[..., None]


def hopf_lax_velocity(psi: FourierPotential, grid: SpaceTimeGrid):
    """``grad psi`` on the whole space-time grid from the Hopf-Lax minimizers.

    Returns ``(psi, v)`` with shapes ``grid.shape + (1,)`` and
    ``grid.shape + (dim,)``; ``v = (x - y*) / t`` for ``t > 0``.
    """
    x = grid.coords()
    psi_out = np.empty(grid.shape + (1,))
    v = np.empty(grid.shape + (psi.dim,))
    psi_out[0, ..., 0] = psi.value(x)
    v[0] = psi.grad(x)
    for k, t in enumerate(grid.times[1:], start=1):
        val, y = hopf_lax_points(psi, t, x, nx=grid.nx)
        psi_out[k, ..., 0] = val
        v[k] = (x - y) / t
    return psi_out, v


def characteristics_velocity(psi: FourierPotential, t, x, tol=1e-14):
    """Smooth-regime oracle for ``dim = 1``: solve ``x = y + t psi'(y)`` by bisection."""
    if psi.dim != 1:
        raise ShapeError("the bisection oracle is one-dimensional")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        return psi.grad(x[:, None])[:, 0]
    bound = sum(abs(a) + abs(b) for _, a, b in psi.modes) * 2 * np.pi * max(
        (abs(k[0]) for k, _, _ in psi.modes), default=0)
    lo = x - t * bound - 1e-12
    hi = x + t * bound + 1e-12

    def F(y):
        return y + t * psi.grad(y[:, None])[:, 0] - x

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pos = F(mid) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.max(hi - lo) < tol:
            break
    y = 0.5 * (lo + hi)
    return psi.grad(y[:, None])[:, 0]


def velocity_from_potential(psi_field, grid: SpaceTimeGrid):
    """Spectral gradient of a single-player potential field."""
    return spatial_gradient(psi_field, grid, PlayerConfig(1, grid.m))


def mollify(v, grid: SpaceTimeGrid, sigma):
    """Periodic Gaussian convolution of width ``sigma`` along the spatial axes."""
    v = np.asarray(v, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    axes = tuple(range(1, 1 + grid.m)) if v.ndim == grid.m + 2 else tuple(range(grid.m))
    k = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
    mult = 1.0
    for ax in axes:
        shape = [1] * v.ndim
        shape[ax] = -1
        mult = mult * np.exp(-2 * np.pi ** 2 * sigma ** 2 * k ** 2).reshape(shape)
    return np.fft.ifftn(np.fft.fftn(v, axes=axes) * mult, axes=axes).real


def _fv_rhs(rho, w, dx, axis):
    """Conservative update ``-d_x(rho w)`` along one axis.

    Cell-centred values, centred slopes scaled so both face values stay
    non-negative, face velocity by averaging and the local Lax-Friedrichs
    (here upwind) flux.
    """
    rp = np.roll(rho, -1, axis=axis)
    rm = np.roll(rho, 1, axis=axis)
    slope = 0.5 * (rp - rm)
    lim = np.minimum(1.0, 2.0 * np.maximum(rho, 0.0) / np.maximum(np.abs(slope), 1e-300))
    slope = slope * lim
    left = rho + 0.5 * slope                       # value at face j+1/2 from cell j
    right = np.roll(rho - 0.5 * slope, -1, axis=axis)  # from cell j+1
    wf = 0.5 * (w + np.roll(w, -1, axis=axis))
    flux = 0.5 * wf * (left + right) - 0.5 * np.abs(wf) * (right - left)
    return -(flux - np.roll(flux, 1, axis=axis)) / dx


def solve_transport_backward(u, grid: SpaceTimeGrid, cfl=0.4, floor=1e-10):
    """Density with ``d_t rho + div(rho u) = 0`` and ``rho(T) = 1``.

    ``u`` has shape ``grid.shape + (m,)``. The equation is advanced in
    reversed time ``tau = T - t`` with SSP-RK2, CFL-limited substeps, linear
    interpolation of ``u`` in time and Strang splitting across dimensions.
    Mass per slice is conserved to rounding.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape + (grid.m,):
        raise GridMismatchError(f"velocity must have shape {grid.shape + (grid.m,)}")
    if not np.all(np.isfinite(u)):
        raise ValueError("velocity must be finite")
    nt, dx, m = grid.nt, grid.dx, grid.m
    rho = np.empty(grid.shape)
    rho[-1] = 1.0
    cur = np.ones(grid.spatial_shape)
    for k in range(nt - 1, 0, -1):
        # reversed-time velocity -u between slices k (tau0) and k-1 (tau1)
        w0, w1 = -u[k], -u[k - 1]
        vmax = max(float(np.max(np.abs(w0))), float(np.max(np.abs(w1))), 1e-300)
        nsub = max(1, int(np.ceil(grid.dt * vmax / (cfl * dx))))
        h = grid.dt / nsub
        for j in range(nsub):
            th0, th1 = j / nsub, (j + 1) / nsub

            def wat(th, d):
                return (1 - th) * w0[..., d] + th * w1[..., d]

            order = list(range(m)) + list(range(m - 2, -1, -1)) if m > 1 else [0]
            frac = [0.5] * (m - 1) + [1.0] + [0.5] * (m - 1) if m > 1 else [1.0]
            for d, f in zip(order, frac):
                hh = f * h
                a0 = wat(th0, d)
                a1 = wat(th1, d)
                s1 = cur + hh * _fv_rhs(cur, a0, dx, d)
                cur = 0.5 * cur + 0.5 * (s1 + hh * _fv_rhs(s1, a1, dx, d))
        if np.min(cur) < floor:
            raise PositivityError(f"density fell to {np.min(cur):.3e} at t={grid.times[k - 1]:.4g}")
        rho[k - 1] = cur
    return rho


def transport_dual(G, u, grid: SpaceTimeGrid):
    """``a(t) = int_t^T G u ds`` by the cumulative trapezoidal rule (``a(T) = 0``)."""
    Gu = np.einsum("...ab,...b->...a", G, u)
    a = np.zeros_like(Gu)
    half = 0.5 * grid.dt * (Gu[1:] + Gu[:-1])
    a[:-1] = np.cumsum(half[::-1], axis=0)[::-1]
    return a


def density_matrix(rho, n):
    return rho[..., None, None] * np.eye(n)


@dataclass
class LadderMember:
    sigma: float
    u: np.ndarray
    rho: np.ndarray
    vbar: np.ndarray


def build_corollary_sequence(v, grid: SpaceTimeGrid, sigmas=SIGMA_LADDER):
    """``(u_m, rho_m, vbar_m)`` for the mollification widths ``sigmas``."""
    out = []
    for s in sigmas:
        u = mollify(v, grid, s)
        rho = solve_transport_backward(u, grid)
        out.append(LadderMember(float(s), u, rho, rho[..., None] * (v - u)))
    return out


@dataclass
class ConsistencyReport:
    gap: float
    recovery_error: float
    gap_a: float
    recovery_error_pair: float
    min_density: float
    min_zone_margin: float
    constraint_residual_pair: float
    l1_vbar: float
    primal: float
    dual: float
    extra: dict = field(default_factory=dict)


def verify_consistency(v, G, u, v0, grid: SpaceTimeGrid, cfg: PlayerConfig, region=None):
    """Audit a density/velocity pair against the reference solution ``v``.

    Two dual candidates are examined: the algebraic pair from
    :func:`construct_consistent_dual` and the pair ``(d_t a, L* a)``
    generated by ``a = int_t^T G u``. ``gap`` is the duality gap of the
    algebraic pair. Its recovery is exact by construction
    (``recovery_error_pair``), so ``recovery_error`` is measured through
    the constraint-exact pair, which sees the discretization of the
    transport equation. ``region`` (boolean per node) restricts the
    recovery errors, e.g. to where ``G`` is positive definite.
    """
    vbar, E_pair, B_pair = construct_consistent_dual(v, G, u)
    problem = NashDualProblem(cfg, grid, v0, vbar)
    a = transport_dual(G, u, grid)
    E, B = time_derivative(a, grid), apply_L_adjoint(a, grid, cfg)
    mask = np.ones(grid.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    gap_a = duality_gap(v, a, problem)
    gap = duality_gap(v, (E_pair, B_pair), problem)
    try:
        rec = float(np.max(np.abs(dtp_map(E, B, vbar) - v)[mask]))
    except Exception:  # zone exit: recovery undefined
        rec = np.inf
    n = cfg.n
    Gf = np.ascontiguousarray(G).reshape(-1, n, n)
    Gpos = kernels.min_eigenvalues(Gf).reshape(grid.shape) > 1e-6
    sel = mask & Gpos
    if np.any(sel):
        rec_pair = float(np.max(np.abs(dtp_map(E_pair[sel], B_pair[sel], vbar[sel]) - v[sel])))
    else:
        rec_pair = np.nan
    vol = grid.cell_volume
    l1 = float(np.max(np.sum(np.abs(vbar), axis=tuple(range(1, grid.m + 2))) * vol))
    return ConsistencyReport(
        gap=gap.gap,
        recovery_error=rec,
        gap_a=gap_a.gap,
        recovery_error_pair=rec_pair,
        min_density=float(np.min(kernels.min_eigenvalues(Gf))),
        min_zone_margin=zone_margin(B, 0.0).min_margin,
        constraint_residual_pair=constraint_residual(E_pair, B_pair, grid, cfg),
        l1_vbar=l1,
        primal=gap.primal,
        dual=gap.dual,
    )


@dataclass
class ConsistencyRow:
    m: int
    sigma: float
    l1_vbar: float
    gap: float
    recovery_err: float
    min_rho: float
    min_margin: float
    gap_a: float
    constraint_residual_pair: float


def consistency_experiment(nx=128, nt=65, T=0.5, eps=0.05, sigmas=SIGMA_LADDER, p=1):
    """Identity density plus the mollification ladder on ``psi* = eps cos(2 pi x_1)``."""
    grid = SpaceTimeGrid(T, nt, p, nx)
    cfg = PlayerConfig(1, p)
    psi = FourierPotential.cosine(eps, dim=p)
    _, v = hopf_lax_velocity(psi, grid)
    v0 = v[0]
    rows = []
    eye = np.broadcast_to(np.eye(p), grid.shape + (p, p))
    rep = verify_consistency(v, eye, np.zeros_like(v), v0, grid, cfg)
    rows.append(_row(0, 0.0, rep, 1.0))
    for m, mem in enumerate(build_corollary_sequence(v, grid, sigmas), start=1):
        rep = verify_consistency(v, density_matrix(mem.rho, p), mem.u, v0, grid, cfg)
        rows.append(_row(m, mem.sigma, rep, float(mem.rho.min())))
    return rows


def _row(m, sigma, rep, min_rho):
    return ConsistencyRow(m, sigma, rep.l1_vbar, rep.gap, rep.recovery_error, min_rho,
                          rep.min_zone_margin, rep.gap_a, rep.constraint_residual_pair)


def dynamic_programming_defect(psi: FourierPotential, t, s, x):
    """``|psi(t+s, x) - min_y [psi(t, y) + |x - y|^2 / (2 s)]|`` for ``dim = 1``."""
    from scipy.optimize import minimize_scalar

    x = np.atleast_1d(np.asarray(x, dtype=float))
    lhs, _ = hopf_lax_points(psi, t + s, x[:, None])
    out = []
    for xi, li in zip(x, lhs):
        ys = np.linspace(xi - 0.5, xi + 0.5, 201)
        vals = hopf_lax_points(psi, t, ys[:, None])[0] + (xi - ys) ** 2 / (2 * s)
        j = int(np.argmin(vals))

        def f(y):
            return float(hopf_lax_points(psi, t, np.array([[y]]))[0][0]) + (xi - y) ** 2 / (2 * s)

        res = minimize_scalar(f, bracket=(ys[max(j - 1, 0)], ys[j], ys[min(j + 1, 200)]),
                              options={"xtol": 1e-12})
        out.append(abs(li - res.fun))
    return np.array(out)

