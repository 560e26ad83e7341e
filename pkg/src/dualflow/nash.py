"""Nash-system experiments with two or more players.

A scenario fixes the players, the grid, the terminal-cost potentials (one
trigonometric polynomial per player) and the policy for the first base
state. :func:`run` assembles the dual problem, drives the staged scheme and
audits whatever it returns.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import newton_krylov

from .dual_core import NashDualProblem, duality_gap
from .errors import GridMismatchError, UnsupportedConfigurationError
from .fields import SpaceTimeGrid, norm_spacetime, recover_potential, spatial_gradient, time_derivative
from .flow import EXHAUSTED, SOLVED, FlowConfig, RunResult, run_scheme, verify_dissipation
from .hj import FourierPotential
from .operators import PlayerConfig, apply_U_vv

POLICIES = ("initial_velocity", "zero", "file", "discrete_solution")

DESK_FLOW = dict(tau=1e-6, nu=0.05, mu=50.0, eps_zone=1e-3, ds_init=1e-5,
                 ds_min=1e-14, ds_max=1.0, max_stages=20, max_steps=200_000)


@dataclass
class NashScenario:
    """Inputs of one Nash experiment.

    ``policy`` selects the first base state: the initial velocity extended
    constantly in time, zero, a field file, or a discrete weak solution
    (manufactured test case).
    """

    N: int = 2
    p: int = 1
    nx: int = 16
    nt: int = 33
    T: float = 0.25
    psi_star: list = field(default_factory=list)
    policy: str = "initial_velocity"
    base_state_file: str | None = None
    flow: dict = field(default_factory=lambda: dict(DESK_FLOW))

    def __post_init__(self):
        if self.N < 2:
            raise UnsupportedConfigurationError("Nash runs need N >= 2; use the single-player tools")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown base-state policy {self.policy!r}")
        if self.policy == "file" and not self.base_state_file:
            raise ValueError("policy 'file' needs base_state_file")
        if self.psi_star and len(self.psi_star) != self.N:
            raise ValueError(f"need one potential per player ({self.N}), got {len(self.psi_star)}")
        self.cfg = PlayerConfig(self.N, self.p)
        self.grid = SpaceTimeGrid(self.T, self.nt, self.cfg.m, self.nx)
        self.potentials = [self._potential(spec) for spec in self.psi_star] or \
            [FourierPotential(self.cfg.m) for _ in range(self.N)]
        merged = dict(DESK_FLOW)
        merged.update(self.flow)
        self.flow = merged
        self.flow_config = FlowConfig(**merged)

    def _potential(self, spec):
        modes = tuple((tuple(m["k"]), m.get("a", 0.0), m.get("b", 0.0)) for m in spec)
        return FourierPotential(self.cfg.m, modes)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        rnd = data.pop("random_potentials", None)
        allowed = {"N", "p", "nx", "nt", "T", "psi_star", "policy", "base_state_file", "flow"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        if rnd is not None:
            cfg = PlayerConfig(data.get("N", 2), data.get("p", 1))
            data["psi_star"] = random_potentials(cfg, **rnd)
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def random_potentials(cfg: PlayerConfig, seed=0, amplitude=0.01, max_freq=1):
    """Mode lists for random small potentials (PCG64 stream seeded by ``seed``)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    import itertools

    ks = [k for k in itertools.product(range(-max_freq, max_freq + 1), repeat=cfg.m)
          if any(k) and next(x for x in k if x) > 0]
    out = []
    for _ in range(cfg.N):
        modes = []
        for k in ks:
            a, b = rng.uniform(-amplitude, amplitude, size=2)
            modes.append({"k": list(k), "a": float(a), "b": float(b)})
        out.append(modes)
    return out


def initial_velocity(scenario: NashScenario):
    """``v0 = grad psi*`` per player (spectral), one time slice."""
    grid, cfg = scenario.grid, scenario.cfg
    x = grid.coords()
    psi = np.stack([pot.value(x) for pot in scenario.potentials], axis=-1)
    return spatial_gradient(psi, grid, cfg)


def discrete_weak_solution(problem: NashDualProblem, tol=1e-13):
    """A zero of the discrete weak residual with ``v(0) = v0``.

    Every residual row except the last two determines the next time slice
    explicitly (a forward Euler start followed by a centred march); the
    final two rows couple the last two slices and are solved by a
    Newton-Krylov iteration.
    """
    grid, cfg = problem.grid, problem.cfg
    R = grid.time_derivative_riesz
    K = grid.nt - 1
    v0 = problem.v0

    def N(w):
        return spatial_gradient(apply_U_vv(w, cfg), grid, cfg)

    v = np.empty(grid.shape + (cfg.n,))
    v[0] = v0
    for k in range(K - 2):
        cols = np.flatnonzero(R[k])
        if cols.max() != k + 1:
            raise UnsupportedConfigurationError("time stencil does not allow marching")
        known = sum(R[k, j] * (v0 - v[j]) for j in cols if j <= k) + N(v[k])
        # R[k, k+1] (v0 - v[k+1]) + known = 0
        v[k + 1] = v0 + known / R[k, k + 1]

    def tail(z):
        w = v.copy()
        w[K - 1:] = z.reshape((2,) + v.shape[1:])
        r = problem.weak_gradient(w)
        return r[K - 2:K].ravel()

    guess = np.stack([v[K - 1], 2 * v[K - 1] - v[K - 2]])
    z = newton_krylov(tail, guess.ravel(), f_tol=tol)
    v[K - 1:] = z.reshape((2,) + v.shape[1:])
    return v


def assemble(scenario: NashScenario):
    """Dual problem with the first base state installed per policy."""
    grid, cfg = scenario.grid, scenario.cfg
    v0 = initial_velocity(scenario)
    shape = grid.shape + (cfg.n,)
    if scenario.policy == "initial_velocity":
        vbar = np.broadcast_to(v0, shape).copy()
    elif scenario.policy == "zero":
        vbar = np.zeros(shape)
    elif scenario.policy == "file":
        from .io import read_field

        vbar, info = read_field(scenario.base_state_file)
        if vbar.shape != shape or info["grid"] != grid:
            raise GridMismatchError(f"base state file does not match grid {grid} with n={cfg.n}")
    else:
        probe = NashDualProblem(cfg, grid, v0, np.zeros(shape))
        vbar = discrete_weak_solution(probe)
    return NashDualProblem(cfg, grid, v0, vbar)


def strong_residual(v, problem: NashDualProblem):
    """Sup norm of ``d_t v + grad U(v (x) v)`` over interior time nodes.

    Only rows where the weak residual coincides with the pointwise one are
    used; the rows next to either end carry boundary terms.
    """
    grid = problem.grid
    r = time_derivative(v, grid)
    r += spatial_gradient(apply_U_vv(v, problem.cfg), grid, problem.cfg)
    rows = interior_rows(grid)
    return float(np.max(np.abs(r[rows]))) if rows.size else 0.0


def interior_rows(grid: SpaceTimeGrid):
    """Time rows where the weak residual is minus the strong one (pure centred stencils)."""
    R = grid.time_derivative_riesz
    D = grid.time_derivative_matrix
    same = np.all(np.isclose(R, -D, rtol=1e-12, atol=1e-12 / grid.dt), axis=1)
    return np.flatnonzero(same)


def audit_solution(v, problem: NashDualProblem, state):
    """Residual audits for a computed solution ``v`` with final dual state ``state``."""
    grid, cfg = problem.grid, problem.cfg
    _, pot_res = recover_potential(v - problem.v0[None], grid, cfg)
    gap = duality_gap(v, state, problem)
    return {
        "weak_residual": norm_spacetime(problem.weak_gradient(v), grid),
        "strong_residual": strong_residual(v, problem),
        "initial_error": float(np.max(np.abs(v[0] - problem.v0))),
        "potential_residual": float(np.max(pot_res)),
        "duality_gap": gap.gap,
        "relative_energy": gap.primal,
        "dual_value": gap.dual,
    }


def base_state_distances(base_states, grid):
    """``L2`` distances between consecutive base states (accumulation diagnostics)."""
    return [norm_spacetime(b1 - b0, grid) for b0, b1 in zip(base_states, base_states[1:])]


@dataclass
class NashReport:
    result: RunResult
    problem: NashDualProblem
    audits: dict
    dissipation_ok: bool
    worst_dissipation_increase: float
    continuity_exact: bool
    max_accepted_violation: float


def run(scenario: NashScenario, log_every=0):
    """Assemble, run the scheme and audit."""
    problem = assemble(scenario)
    cfg = scenario.flow_config
    if log_every:
        cfg = FlowConfig(**{**scenario.flow, "log_every": log_every})
    worst_fraction = [0.0]

    def observer(k, s, state, ev):
        worst_fraction[0] = max(worst_fraction[0], ev.violating_fraction)

    problem_at = [problem]
    result = _run_tracking(problem, cfg, observer, problem_at)
    ok, worst = verify_dissipation(result)
    continuity = _check_continuity(result, problem, cfg)
    final_problem = problem_at[0]
    audits = {"stages": len(result.stages), "status": result.final_status}
    if result.final_status == SOLVED:
        audits.update(audit_solution(result.solution, final_problem, result.final_state))
    if result.final_status == EXHAUSTED or len(result.base_states) > 1:
        audits["base_state_distances"] = base_state_distances(result.base_states, problem.grid)
    return NashReport(result, final_problem, audits, ok, worst, continuity, worst_fraction[0])


def _run_tracking(problem, cfg, observer, holder):
    """``run_scheme`` that keeps ``holder[0]`` pointing at the active stage problem."""

    class Tracked:
        def __init__(self, inner):
            self.inner = inner
            holder[0] = inner

        @property
        def base_state(self):
            return self.inner.base_state

        def zero_state(self):
            return self.inner.zero_state()

        def evaluate(self, state, eps_zone):
            return self.inner.evaluate(state, eps_zone)

        def objective(self, state):
            return self.inner.objective(state)

        def min_margin(self, state):
            return self.inner.min_margin(state)

        def rebase(self, base_state):
            return Tracked(self.inner.rebase(base_state))

    return run_scheme(Tracked(problem), cfg, observer)


def _check_continuity(result: RunResult, problem, cfg):
    """Each new base state equals the previous stage's DtP image at ``s_star`` bitwise.

    The first evaluation of stage ``k + 1`` (at ``a = 0``) must reproduce
    the base state itself, hence the dissipation at the switch.
    """
    for k, (rec, nxt) in enumerate(zip(result.stages, result.stages[1:])):
        hist = rec.history_until(rec.s_star)
        if not hist or not nxt.dissipation_history:
            return False
        if hist[-1][1] != nxt.dissipation_history[0][1]:
            return False
    return True
