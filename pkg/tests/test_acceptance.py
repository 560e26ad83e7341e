"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Each criterion is evaluated in full at its stated tolerance and runtime
budget; the summary lines are also repeated at the end of the pytest run.
Run standalone with ``python3 tests/test_acceptance.py``.
"""
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from dualflow.dual_core import (NashDualProblem, admissible_dual, admissible_pair, dual_objective,
                                dual_objective_pair, frak_c, k_functional)
from dualflow.fields import (SpaceTimeGrid, apply_L, apply_L_adjoint, average_field,
                             inner_spacetime)
from dualflow.flow import SOLVED, STALLED, ZONE_EXIT
from dualflow.hj import consistency_experiment
from dualflow.nash import NashScenario, run
from dualflow.operators import (PlayerConfig, apply_U, apply_U_adjoint, check_trace_condition,
                                trace_U_adjoint)
from dualflow.selftest import smooth_field
from dualflow.toy import (toy_gradient, toy_line_trajectory, toy_objective, toy_reduced_rhs,
                          toy_run, toy_switch_time)

from oracles import central_difference, k_brute_force

RESULTS = []


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def record(number, title, checks, elapsed, budget):
    """Print the criterion line and fail the test if any part failed.

    ``checks`` is a list of ``(label, ok, detail)``; the runtime budget is
    checked as one more part.
    """
    checks = list(checks) + [("runtime", elapsed <= budget, f"{elapsed:.3g}s of {budget:g}s")]
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{label}: {d}" + ("" if good else " [FAIL]") for label, good, d in checks)
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title} | {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def stated_mapping(c):
    """Selected solution as stated in the criterion: (c+1, c+1) if c > -1/2 else (c, c)."""
    return np.array([c + 1.0, c + 1.0]) if c > -0.5 else np.array([c, c])


def test_criterion_01_constant_flow():
    checks = []
    worst_time = 0.0
    for c in (0.0, -1.0):
        toy_run(c)  # warm caches; the budget concerns the solve itself
        with Timer() as tm:
            res = toy_run(c)
        worst_time = max(worst_time, tm.elapsed)
        err = float(np.max(np.abs(res.solution - 0.0))) if res.solution is not None else np.inf
        ok = res.final_status == SOLVED and res.stages[0].steps == 0 and err <= 1e-12
        checks.append((f"c={c:g}", ok, f"{res.stages[0].steps} steps, |u|={err:.1e}"))
    record(1, "toy constant flow", checks, worst_time, 1e-3)


def test_criterion_02_attractor():
    checks = []
    worst_time = 0.0
    for c in (0.2, -1.3, -0.6):
        with Timer() as tm:
            res = toy_run(c)
        worst_time = max(worst_time, tm.elapsed)
        target = stated_mapping(c)
        got = res.solution
        err = float(np.max(np.abs(got - target))) if got is not None else np.inf
        checks.append((f"c={c:g} stages", len(res.stages) == 1 and res.final_status == SOLVED,
                       f"{len(res.stages)}"))
        checks.append((f"c={c:g} mapping", err <= 1e-8,
                       f"got ({got[0]:.10g},{got[1]:.10g}) vs ({target[0]:g},{target[1]:g})"))
        # reduced ODE against the implicit closed form
        s_end = 10.0
        sol = solve_ivp(lambda s, d: [toy_reduced_rhs(d[0], c)], (0, s_end), [0.0],
                        rtol=1e-12, atol=1e-14, dense_output=True)
        ss = np.linspace(0, s_end, 201)
        ode_err = max(abs(toy_line_trajectory(s, c) - sol.sol(s)[0]) for s in ss)
        checks.append((f"c={c:g} ODE", ode_err <= 1e-6, f"sup err {ode_err:.1e}"))
    record(2, "toy attractor", checks, worst_time, 1.0)


def test_criterion_03_switching():
    c = 2.0
    with Timer() as tm:
        res = toy_run(c)
    first = res.stages[0]
    ts = toy_switch_time(2 * c + 1)
    base = [float(b[0]) for b in res.base_states]
    sol = res.solution
    end_err = float(np.max(np.abs(sol - 3.0))) if sol is not None else np.inf
    bound = [c + 0.5 - v >= 2.0 ** (1 - k) * (c + 0.5) - 1e-12 for k, v in enumerate(base, start=1)]
    checks = [
        ("switch time", first.exit_reason == ZONE_EXIT and abs(first.s_exit - ts) <= 1e-3,
         f"{first.s_exit:.6f} vs {ts:.6f}"),
        ("stages", len(res.stages) <= 8 and res.final_status == SOLVED, f"{len(res.stages)}"),
        ("endpoint (3,3)", end_err <= 1e-8, f"got ({sol[0]:.10g},{sol[1]:.10g})"),
        ("first base 1.25", len(base) > 1 and abs(base[1] - 1.25) <= 1e-3,
         f"{base[1]:.6f} (off {abs(base[1] - 1.25):.2e})"),
        ("induction bound", all(bound), ", ".join(f"{v:.4f}" for v in base)),
    ]
    record(3, "toy switching c=2", checks, tm.elapsed, 5.0)


def test_criterion_04_buridan():
    with Timer() as tm:
        stall = toy_run(-0.5)
        moved = toy_run(-0.5, (0.01, 0.01))
    same = np.array_equal(stall.base_states[-1], stall.base_states[-2])
    sol = moved.solution
    dist = min(float(np.max(np.abs(sol - s))) for s in ([-0.5, -0.5], [0.5, 0.5])) if sol is not None else np.inf
    checks = [
        ("stall", stall.final_status == STALLED and same, stall.final_status),
        ("perturbed", moved.final_status == SOLVED and dist <= 1e-8,
         f"({sol[0]:.10g},{sol[1]:.10g})"),
    ]
    record(4, "Buridan case", checks, tm.elapsed, 1.0)


def test_criterion_05_operator_suite():
    rng = _rng(5)
    checks = []
    with Timer() as tm:
        for N, p in ((2, 1), (2, 2), (3, 1)):
            cfg = PlayerConfig(N, p)
            grid = SpaceTimeGrid(0.5, 3, cfg.m, 4)
            adj_u = adj_l = tr = 0.0
            minors_ok = True
            premise_count = 0
            for _ in range(1000):
                A = rng.normal(size=(cfg.n, cfg.n))
                y = rng.normal(size=N)
                adj_u = max(adj_u, abs(apply_U(A, cfg) @ y - np.sum(A * apply_U_adjoint(y, cfg))))
                tr = max(tr, abs(np.trace(apply_U_adjoint(y, cfg)) - trace_U_adjoint(y, cfg)))
                lam = np.linalg.eigvalsh(apply_U_adjoint(y, cfg))[0]
                k = max(0.0, -lam) + rng.uniform(0, 0.5)
                rep = check_trace_condition(y, k, cfg)
                premise_count += rep.premise
                minors_ok &= rep.consistent
            for _ in range(1000):
                Psi = rng.normal(size=grid.shape + (cfg.n, cfg.n))
                Psi = Psi + np.swapaxes(Psi, -1, -2)
                a = rng.normal(size=grid.shape + (cfg.n,))
                adj_l = max(adj_l, abs(inner_spacetime(apply_L(Psi, grid, cfg), a, grid)
                                       - inner_spacetime(Psi, apply_L_adjoint(a, grid, cfg), grid,
                                                         ncomp_axes=2)))
            checks.append((f"({N},{p})", adj_u <= 1e-10 and adj_l <= 1e-10 and tr <= 1e-14
                           and minors_ok and premise_count == 1000,
                           f"U {adj_u:.1e}, L {adj_l:.1e}, trace {tr:.1e}, "
                           f"minors {'ok' if minors_ok else 'violated'} on {premise_count}"))
    record(5, "operator suite", checks, tm.elapsed, 10.0)


def test_criterion_06_gradient_exactness():
    rng = _rng(6)
    checks = []
    with Timer() as tm:
        cfg = PlayerConfig(2, 1)
        for nx, nt in ((8, 9), (16, 17)):
            grid = SpaceTimeGrid(0.25, nt, cfg.m, nx)
            v0 = smooth_field(rng, grid, cfg.n, 0.1, time_dependent=False)
            prob = NashDualProblem(cfg, grid, v0, smooth_field(rng, grid, cfg.n, 0.1))
            a = smooth_field(rng, grid, cfg.n, 0.01) * (grid.times - grid.T)[:, None, None, None]
            g = prob.evaluate(a, 0.0).gradient
            worst = 0.0
            for _ in range(20):
                d = smooth_field(rng, grid, cfg.n, 1.0)
                d[-1] = 0
                an = inner_spacetime(g, d, grid)
                worst = max(worst, min(abs(f - an) / abs(an)
                                       for f in central_difference(prob.objective, a, d)))
            checks.append((f"({nx},{nt})", worst <= 1e-6, f"rel err {worst:.1e}"))
        worst = 0.0
        for _ in range(20):
            D = rng.uniform(-0.4, 0.4, size=2)
            vbar, c = rng.normal(size=2), rng.normal()
            d = rng.normal(size=2)
            an = toy_gradient(D, vbar, c) @ d
            fd = central_difference(lambda x: toy_objective(x, vbar, c), D, d)
            worst = max(worst, min(abs(f - an) / max(abs(an), 1e-12) for f in fd))
        checks.append(("toy", worst <= 1e-6, f"rel err {worst:.1e}"))
    record(6, "gradient exactness", checks, tm.elapsed, 30.0)


def test_criterion_07_consistency():
    with Timer() as tm:
        coarse = consistency_experiment(128, 65)
        fine = consistency_experiment(256, 129)
    checks = []
    for rc, rf in zip(coarse, fine):
        if rc.m == 0:
            # (I, 0) reproduces v exactly: both quantities vanish at every resolution
            ok = max(rc.gap, rf.gap, rc.recovery_err, rf.recovery_err) <= 1e-12
            checks.append(("m=0", ok, f"gap {rf.gap:.1e}, recovery {rf.recovery_err:.1e}"))
            continue
        gr = rc.gap / rf.gap
        rr = rc.recovery_err / rf.recovery_err
        checks.append((f"m={rc.m}", 3.5 <= gr <= 4.5 and 3.5 <= rr <= 4.5,
                       f"gap ratio {gr:.2f}, recovery ratio {rr:.2f}"))
    for name, rows in (("coarse", coarse), ("fine", fine)):
        l1 = [r.l1_vbar for r in rows]
        checks.append((f"L1 {name}", all(b < a for a, b in zip(l1, l1[1:])),
                       " > ".join(f"{x:.3g}" for x in l1)))
        margin = min(r.min_margin for r in rows)
        checks.append((f"I+2B {name}", margin > 0, f"min eig {margin:.3f}"))
    record(7, "consistency and duality gap", checks, tm.elapsed, 120.0)


def test_criterion_08_admissible_pair():
    rng = _rng(8)
    cfg = PlayerConfig(2, 1)
    grid = SpaceTimeGrid(0.4, 9, cfg.m, 8)
    lit = pair = const = 0.0
    with Timer() as tm:
        for _ in range(10):
            vbar = smooth_field(rng, grid, cfg.n, 0.5)
            v0 = rng.normal(size=grid.spatial_shape + (cfg.n,))
            prob = NashDualProblem(cfg, grid, v0, vbar)
            Pv0 = average_field(np.broadcast_to(v0, vbar.shape), grid)
            ref = frak_c(average_field(vbar, grid), Pv0, grid)
            lit = max(lit, abs(dual_objective(admissible_dual(vbar, grid), prob) - ref))
            pair = max(pair, abs(dual_objective_pair(*admissible_pair(vbar, grid), prob) - ref))
            # time-constant spatial mean: the literal dual variable generates the pair
            vc = vbar - average_field(vbar, grid) + average_field(vbar[:1], grid)[0]
            pc = NashDualProblem(cfg, grid, v0, vc)
            refc = frak_c(average_field(vc, grid), Pv0, grid)
            const = max(const, abs(dual_objective(admissible_dual(vc, grid), pc) - refc))
    checks = [
        ("a=(t-T)Pi vbar, random vbar", lit <= 1e-10, f"defect {lit:.1e}"),
        ("pair (Pi vbar, 0)", pair <= 1e-10, f"defect {pair:.1e}"),
        ("a-form, time-constant mean", const <= 1e-10, f"defect {const:.1e}"),
    ]
    record(8, "admissible-pair bound", checks, tm.elapsed, 1.0)


def test_criterion_09_k_oracle():
    rng = _rng(9)
    grid = SpaceTimeGrid(1.0, 3, 1, 4)
    checks = []
    with Timer() as tm:
        for n in (2, 4):
            worst = 0.0
            for _ in range(100):
                A = rng.normal(size=(n, n))
                G = A @ A.T / n + 0.1 * np.eye(n)
                B = 0.5 * (G - np.eye(n))
                Q = rng.normal(size=n)
                Qf = np.broadcast_to(Q, grid.shape + (n,)).copy()
                Bf = np.broadcast_to(B, grid.shape + (n, n)).copy()
                # constant fields on a unit domain and horizon: K equals the node value
                worst = max(worst, abs(k_functional(Qf, Bf, grid) - k_brute_force(Q, B)))
            checks.append((f"n={n}", worst <= 1e-6, f"max diff {worst:.1e}"))
    record(9, "K oracle", checks, tm.elapsed, 30.0)


DESK = dict(N=2, p=1, nx=16, nt=33, T=0.25)


def test_criterion_10_nash_desk_run():
    with Timer() as tm:
        rand = run(NashScenario.from_dict({**DESK, "random_potentials": {"seed": 1, "amplitude": 0.01}}))
        zero = run(NashScenario(**DESK, policy="zero"))
        manu = run(NashScenario.from_dict({**DESK, "policy": "discrete_solution",
                                           "random_potentials": {"seed": 1, "amplitude": 0.01}}))
    a = rand.audits
    checks = [
        ("small data", rand.dissipation_ok and rand.continuity_exact
         and rand.max_accepted_violation == 0.0,
         f"{a['status']} in {a['stages']} stage(s), worst increase {rand.worst_dissipation_increase:.1e}, "
         f"continuity {'exact' if rand.continuity_exact else 'broken'}, "
         f"max violating fraction {rand.max_accepted_violation:g}"),
        ("zero data", zero.result.final_status == SOLVED and len(zero.result.stages) == 1
         and zero.audits["weak_residual"] <= 1e-10 and zero.audits["strong_residual"] <= 1e-10
         and zero.audits["duality_gap"] <= 1e-10,
         f"weak {zero.audits['weak_residual']:.1e}, gap {zero.audits['duality_gap']:.1e}"),
        ("manufactured", manu.result.final_status == SOLVED and manu.audits["weak_residual"] <= 1e-6,
         f"weak {manu.audits['weak_residual']:.1e}"),
    ]
    record(10, "Nash desk run", checks, tm.elapsed, 600.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
