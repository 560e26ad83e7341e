"""The Nash coupling operator and its adjoint.

Vectors of length ``n = p * N**2`` are indexed by triples ``(i, j, l)`` with
``i`` the player, ``j`` the player owning the spatial coordinate and ``l``
the coordinate inside that player's state. The flat position is
``i * N * p + j * p + l`` (0-based), so a vector reshaped to ``(N, m)``
holds ``v[i, c] = d psi_i / d x_c`` with ``c = j * p + l`` and ``m = N * p``.
Every module uses this layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ShapeError, UnsupportedConfigurationError


@dataclass(frozen=True)
class PlayerConfig:
    """Player count ``N`` and per-player state dimension ``p``."""

    N: int
    p: int
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        if int(self.N) != self.N or int(self.p) != self.p:
            raise ValueError("N and p must be integers")
        if self.N < 1 or self.p < 1:
            raise ValueError(f"N and p must be positive, got N={self.N}, p={self.p}")
        object.__setattr__(self, "n", self.p * self.N ** 2)
        object.__setattr__(self, "m", self.N * self.p)

    def index(self, i, j, l):
        """Flat position of component ``(i, j, l)`` (0-based)."""
        return i * self.m + j * self.p + l

    @cached_property
    def adjoint_basis(self):
        """Stack of ``U*(e_i)``, shape ``(N, n, n)``.

        ``apply_U(A)[i] == <A, adjoint_basis[i]>_F`` for every square ``A``.
        """
        N, p = self.N, self.p
        basis = np.zeros((N, self.n, self.n))
        for i in range(N):
            for l in range(p):
                d = self.index(i, i, l)
                basis[i, d, d] += 0.5
                for j in range(N):
                    if j == i:
                        continue
                    a = self.index(j, j, l)
                    b = self.index(i, j, l)
                    basis[i, a, b] += 0.5
                    basis[i, b, a] += 0.5
        basis.setflags(write=False)
        return basis


def _check_matrix(A, cfg):
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (cfg.n, cfg.n):
        raise ShapeError(f"expected trailing shape ({cfg.n}, {cfg.n}), got {A.shape}")
    return A


def _check_players(y, cfg):
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (cfg.N,):
        raise ShapeError(f"expected trailing length {cfg.N}, got {y.shape}")
    return y


def apply_U(A, cfg: PlayerConfig):
    """Apply the coupling operator to (a field of) ``n x n`` matrices.

    Returns an array whose last axis has length ``N``; leading axes of ``A``
    are treated as batch axes.
    """
    A = _check_matrix(A, cfg)
    return np.einsum("...ab,iab->...i", A, cfg.adjoint_basis)


def apply_U_adjoint(y, cfg: PlayerConfig):
    """Adjoint of :func:`apply_U` for the Frobenius product; symmetric output."""
    y = _check_players(y, cfg)
    return np.einsum("...i,iab->...ab", y, cfg.adjoint_basis)


def apply_U_vv(v, cfg: PlayerConfig):
    """``apply_U(v (x) v)`` without forming the outer product."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != cfg.n:
        raise ShapeError(f"expected trailing length {cfg.n}, got {v.shape}")
    w = v.reshape(v.shape[:-1] + (cfg.N, cfg.N, cfg.p))
    # own[..., j, l] = v_{jjl}
    own = np.einsum("...jjl->...jl", w)
    cross = np.einsum("...jl,...ijl->...i", own, w)
    diag = np.einsum("...iil,...iil->...i", w, w)
    # cross includes j == i once; the diagonal term carries weight 1/2
    return cross - 0.5 * diag


def trace_U_adjoint(y, cfg: PlayerConfig):
    """Trace of ``U*(y)``: ``(p / 2) * sum(y)``."""
    y = _check_players(y, cfg)
    return 0.5 * cfg.p * np.sum(y, axis=-1)


@dataclass(frozen=True)
class TraceConditionReport:
    premise: bool
    minors_hold: bool
    max_eigenvalue: float
    min_shifted_eigenvalue: float
    worst_minor_margin: float

    @property
    def consistent(self):
        """Whether the premise implies the minor inequalities here."""
        return (not self.premise) or self.minors_hold


def check_trace_condition(y, k, cfg: PlayerConfig, tol=1e-12):
    """Check ``kI + U*(y) >= 0`` and the 2x2-minor bound it implies.

    The minor bound is ``y_j**2 <= 4 k**2 + 2 k y_i`` for all ``i != j``.
    """
    if cfg.N == 1:
        raise UnsupportedConfigurationError(
            "the trace condition does not hold for a single player (N=1)")
    if k < 0:
        raise ValueError("k must be non-negative")
    y = _check_players(y, cfg)
    if y.ndim != 1:
        raise ShapeError("check_trace_condition takes a single vector")
    Ustar = apply_U_adjoint(y, cfg)
    eig = np.linalg.eigvalsh(Ustar)
    scale = 1.0 + k + np.max(np.abs(y))
    shifted_min = k + eig[0]
    premise = bool(shifted_min >= -tol * scale)
    margins = [4 * k * k + 2 * k * y[i] - y[j] ** 2
               for i in range(cfg.N) for j in range(cfg.N) if i != j]
    worst = float(min(margins))
    minors = bool(worst >= -tol * scale ** 2)
    return TraceConditionReport(premise, minors, float(eig[-1]), float(shifted_min), worst)
