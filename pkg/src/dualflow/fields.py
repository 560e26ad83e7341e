"""Discrete periodic space-time fields on the unit torus times ``[0, T]``.

Fields are plain numpy arrays whose leading axes are ``(nt, nx, ..., nx)``
(one time axis, ``m`` spatial axes) followed by component axes:

* vector field: ``(..., n)``
* symmetric matrix field: ``(..., n, n)``
* player field: ``(..., N)``

A single time slice simply drops the leading axis. Spatial derivatives are
spectral; the Nyquist mode of every axis is differentiated to zero, which
makes the discrete gradient exactly minus the adjoint of the discrete
divergence. Time derivatives use second-order finite differences and time
integrals the trapezoidal rule.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridMismatchError, ShapeError
from .operators import PlayerConfig, apply_U, apply_U_adjoint


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid: ``nt`` time nodes on ``[0, T]``, ``nx`` nodes per axis."""

    T: float
    nt: int
    m: int
    nx: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.nt < 3:
            raise ValueError("nt must be at least 3")
        if self.nx < 4 or self.nx % 2:
            raise ValueError("nx must be an even integer >= 4")
        if not 1 <= self.m <= 6:
            raise ValueError("spatial dimension m must lie in 1..6")

    @property
    def dt(self):
        return self.T / (self.nt - 1)

    @property
    def dx(self):
        return 1.0 / self.nx

    @property
    def cell_volume(self):
        return self.dx ** self.m

    @property
    def spatial_shape(self):
        return (self.nx,) * self.m

    @property
    def shape(self):
        return (self.nt,) + self.spatial_shape

    @property
    def n_nodes(self):
        return self.nt * self.nx ** self.m

    @cached_property
    def times(self):
        return np.linspace(0.0, self.T, self.nt)

    @cached_property
    def axis_coords(self):
        return np.arange(self.nx) * self.dx

    def coords(self):
        """Spatial coordinates, shape ``(nx, ..., nx, m)``."""
        mesh = np.meshgrid(*([self.axis_coords] * self.m), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def time_weights(self):
        w = np.full(self.nt, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        w.setflags(write=False)
        return w

    @cached_property
    def time_derivative_matrix(self):
        """Second-order stencils: centered inside, one-sided at both ends."""
        nt, h = self.nt, self.dt
        D = np.zeros((nt, nt))
        D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
        for k in range(1, nt - 1):
            D[k, k - 1] = -1.0 / (2 * h)
            D[k, k + 1] = 1.0 / (2 * h)
        D.setflags(write=False)
        return D

    @cached_property
    def time_derivative_riesz(self):
        """``W^-1 D^T W``: Riesz map of ``b -> sum_t w_t <r_t, (D b)_t>``."""
        w = self.time_weights
        R = (self.time_derivative_matrix.T * w[None, :]) / w[:, None]
        R.setflags(write=False)
        return R

    @cached_property
    def wavenumbers(self):
        """Integer rfft wavenumbers along one axis with Nyquist zeroed."""
        k = np.fft.rfftfreq(self.nx, d=1.0 / self.nx)
        k[-1] = 0.0
        return k

    def check_vector(self, f, n):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape + (n,):
            raise GridMismatchError(f"expected shape {self.shape + (n,)}, got {f.shape}")
        return f


def _spatial_axes(grid, f, ncomp_axes):
    """Absolute indices of the spatial axes of ``f``."""
    lead = f.ndim - ncomp_axes - grid.m
    if lead not in (0, 1):
        raise ShapeError(f"array of shape {f.shape} does not fit grid {grid}")
    return tuple(range(lead, lead + grid.m))


def _d_axis(grid, f, axis):
    """Spectral derivative of ``f`` along ``axis`` (Nyquist set to zero)."""
    fh = np.fft.rfft(f, axis=axis)
    shape = [1] * f.ndim
    shape[axis] = -1
    fh *= (2j * np.pi * grid.wavenumbers).reshape(shape)
    return np.fft.irfft(fh, n=grid.nx, axis=axis)


def spatial_gradient(F, grid: SpaceTimeGrid, cfg: PlayerConfig):
    """Per-player gradient: component ``(i, j, l)`` is ``d F_i / d x_{jl}``."""
    F = np.asarray(F, dtype=float)
    if F.shape[-1] != cfg.N:
        raise ShapeError(f"player field must end with length {cfg.N}")
    axes = _spatial_axes(grid, F, 1)
    parts = [_d_axis(grid, F, ax) for ax in axes]
    out = np.stack(parts, axis=-1)  # (..., N, m)
    return out.reshape(out.shape[:-2] + (cfg.n,))


def spatial_divergence(a, grid: SpaceTimeGrid, cfg: PlayerConfig):
    """Per-player divergence ``sum_{j,l} d a_{(i,j,l)} / d x_{jl}``.

    Exactly minus the adjoint of :func:`spatial_gradient`.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != cfg.n:
        raise ShapeError(f"vector field must end with length {cfg.n}")
    axes = _spatial_axes(grid, a, 1)
    w = a.reshape(a.shape[:-1] + (cfg.N, cfg.m))
    out = np.zeros(a.shape[:-1] + (cfg.N,))
    for c, ax in enumerate(axes):
        out += _d_axis(grid, w[..., c], ax)
    return out


def apply_L(Psi, grid, cfg):
    """``L Psi = -grad(U Psi)`` applied pointwise in time."""
    return -spatial_gradient(apply_U(Psi, cfg), grid, cfg)


def apply_L_adjoint(a, grid, cfg):
    """``L* a = U*(div a)``."""
    return apply_U_adjoint(spatial_divergence(a, grid, cfg), cfg)


def time_derivative(a, grid: SpaceTimeGrid):
    a = np.asarray(a, dtype=float)
    if a.shape[0] != grid.nt:
        raise GridMismatchError("time axis does not match grid.nt")
    return np.tensordot(grid.time_derivative_matrix, a, axes=(1, 0))


def time_derivative_adjoint(r, grid: SpaceTimeGrid):
    """``W^-1 D^T W r``, the ``H``-adjoint of :func:`time_derivative`."""
    r = np.asarray(r, dtype=float)
    return np.tensordot(grid.time_derivative_riesz, r, axes=(1, 0))


def _pointwise_dot(f, g, ncomp_axes):
    if f.shape != g.shape:
        raise GridMismatchError(f"shape mismatch {f.shape} vs {g.shape}")
    axes = tuple(range(f.ndim - ncomp_axes, f.ndim))
    return np.sum(f * g, axis=axes) if ncomp_axes else f * g


def inner_space(f, g, grid: SpaceTimeGrid, ncomp_axes=1):
    """Spatial ``L2`` product; per time slice if ``f`` has a time axis.

    ``ncomp_axes`` is 1 for vector/player fields and 2 for matrix fields
    (Frobenius product).
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    axes = _spatial_axes(grid, f, ncomp_axes)
    prod = _pointwise_dot(f, g, ncomp_axes)
    return np.sum(prod, axis=tuple(ax for ax in axes)) * grid.cell_volume


def integrate_time(values, grid: SpaceTimeGrid):
    """Trapezoidal rule along the leading axis."""
    return np.tensordot(grid.time_weights, np.asarray(values, dtype=float), axes=(0, 0))


def inner_spacetime(f, g, grid: SpaceTimeGrid, ncomp_axes=1):
    """The Hilbert product of the gradient flow."""
    return float(integrate_time(inner_space(f, g, grid, ncomp_axes), grid))


def norm_spacetime(f, grid, ncomp_axes=1):
    return float(np.sqrt(max(inner_spacetime(f, f, grid, ncomp_axes), 0.0)))


def average(f, grid: SpaceTimeGrid, ncomp_axes=1):
    """Spatial mean per component (per time slice when present)."""
    f = np.asarray(f, dtype=float)
    axes = _spatial_axes(grid, f, ncomp_axes)
    return np.mean(f, axis=axes)


def average_field(f, grid, ncomp_axes=1):
    """Spatial mean broadcast back to the shape of ``f``."""
    f = np.asarray(f, dtype=float)
    axes = _spatial_axes(grid, f, ncomp_axes)
    return np.broadcast_to(np.mean(f, axis=axes, keepdims=True), f.shape).copy()


def recover_potential(v, grid: SpaceTimeGrid, cfg: PlayerConfig):
    """Zero-mean per-player potential whose gradient best fits ``v``.

    Solves the spectral Poisson problem ``lap psi_i = div v_i`` and returns
    ``(psi, residual)`` where ``residual = ||grad psi - v||`` in the spatial
    ``L2`` norm (per time slice if ``v`` has a time axis).
    """
    v = np.asarray(v, dtype=float)
    axes = _spatial_axes(grid, v, 1)
    w = v.reshape(v.shape[:-1] + (cfg.N, cfg.m))
    k1 = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
    k1[grid.nx // 2] = 0.0
    sym = 2j * np.pi * k1
    div_h = 0.0
    lap = 0.0
    for c, ax in enumerate(axes):
        shape = [1] * v.ndim  # (lead..., spatial..., N)
        shape[ax] = -1
        s = sym.reshape(shape)
        div_h = div_h + s * np.fft.fftn(w[..., c], axes=axes)
        lap = lap + s * s
    lap = np.broadcast_to(lap, np.shape(div_h))
    psi_h = np.zeros_like(div_h)
    nz = lap != 0
    psi_h[nz] = div_h[nz] / lap[nz]
    psi = np.fft.ifftn(psi_h, axes=axes).real
    resid_field = spatial_gradient(psi, grid, cfg) - v
    residual = np.sqrt(inner_space(resid_field, resid_field, grid))
    return psi, residual


def _sym_basis(n):
    """Frobenius-orthonormal basis of symmetric ``n x n`` matrices."""
    out = []
    for a in range(n):
        for b in range(a, n):
            S = np.zeros((n, n))
            if a == b:
                S[a, a] = 1.0
            else:
                S[a, b] = S[b, a] = 1.0 / np.sqrt(2.0)
            out.append(S)
    return np.array(out)


def _fourier_test_functions(grid, max_freq):
    """Real trigonometric functions with ``|k_j| <= max_freq``, one per +/- pair."""
    x = grid.coords()
    funcs = []
    for k in itertools.product(range(-max_freq, max_freq + 1), repeat=grid.m):
        k = np.array(k)
        nzk = k[k != 0]
        if nzk.size and nzk[0] < 0:
            continue
        phase = 2 * np.pi * (x @ k)
        funcs.append(np.cos(phase))
        if nzk.size:
            funcs.append(np.sin(phase))
    return funcs


def constraint_residual(E, B, grid: SpaceTimeGrid, cfg: PlayerConfig, max_freq=2):
    """Worst normalized violation of the linear link between ``E`` and ``B``.

    Test fields are ``Psi = phi(t) chi(x) S`` with ``phi in {t, t**2}``,
    ``chi`` a low Fourier mode and ``S`` an orthonormal symmetric matrix.
    The time derivative of ``Psi`` is the exact discrete adjoint of
    :func:`time_derivative` (``-W^-1 D^T W``), so pairs generated by a dual
    variable with vanishing terminal slice give zero residual up to
    rounding.
    """
    E = grid.check_vector(E, cfg.n)
    B = np.asarray(B, dtype=float)
    if B.shape != grid.shape + (cfg.n, cfg.n):
        raise GridMismatchError("B does not match the grid")
    t = grid.times
    w = grid.time_weights
    Dadj = grid.time_derivative_riesz
    LstarE = apply_L_adjoint(E, grid, cfg)
    space_axes = tuple(range(1, 1 + grid.m))
    S_basis = _sym_basis(cfg.n)
    worst = 0.0
    for chi in _fourier_test_functions(grid, max_freq):
        chi_b = chi.reshape((1,) + chi.shape + (1, 1))
        Bchi = np.sum(B * chi_b, axis=space_axes) * grid.cell_volume      # (nt, n, n)
        Echi = np.sum(LstarE * chi_b, axis=space_axes) * grid.cell_volume  # (nt, n, n)
        chi_norm2 = np.sum(chi * chi) * grid.cell_volume
        for phi in (t, t * t):
            dphi = -Dadj @ phi
            R = np.tensordot(w * dphi, Bchi, axes=(0, 0)) + np.tensordot(w * phi, Echi, axes=(0, 0))
            psi_norm = np.sqrt(np.sum(w * phi * phi) * chi_norm2)
            vals = np.abs(np.einsum("ab,sab->s", R, S_basis)) / psi_norm
            worst = max(worst, float(vals.max()))
    return worst
