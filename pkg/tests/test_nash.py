import json

import numpy as np
import pytest

from dualflow.errors import GridMismatchError, UnsupportedConfigurationError
from dualflow.flow import SOLVED
from dualflow.io import write_field
from dualflow.nash import (DESK_FLOW, NashScenario, assemble, audit_solution, discrete_weak_solution,
                           initial_velocity, interior_rows, random_potentials, run, strong_residual)

SMALL = dict(N=2, p=1, nx=8, nt=9, T=0.25)
MODES = [[{"k": [1, 0], "a": 0.01}], [{"k": [0, 1], "b": -0.01}]]


def test_scenario_defaults_and_flow_merge():
    sc = NashScenario(**SMALL, flow={"tau": 1e-8})
    assert sc.flow_config.tau == 1e-8 and sc.flow_config.nu == DESK_FLOW["nu"]
    assert sc.cfg.n == 4 and sc.grid.shape == (9, 8, 8)


@pytest.mark.parametrize("bad,err", [(dict(N=1), UnsupportedConfigurationError),
                                     (dict(policy="magic"), ValueError),
                                     (dict(policy="file"), ValueError),
                                     (dict(psi_star=[[]]), ValueError),
                                     (dict(flow={"nu": -1.0}), ValueError)])
def test_scenario_validation(bad, err):
    with pytest.raises(err):
        NashScenario(**{**SMALL, **bad})


def test_from_dict_and_load(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        NashScenario.from_dict({"N": 2, "colour": "red"})
    path = tmp_path / "s.json"
    path.write_text(json.dumps({**SMALL, "random_potentials": {"seed": 3, "amplitude": 0.02}}))
    sc = NashScenario.load(path)
    assert len(sc.psi_star) == 2
    again = NashScenario.from_dict(sc.to_dict())
    assert again.psi_star == sc.psi_star


def test_random_potentials_deterministic():
    from dualflow.operators import PlayerConfig

    cfg = PlayerConfig(2, 1)
    a = random_potentials(cfg, seed=5, amplitude=0.1)
    assert a == random_potentials(cfg, seed=5, amplitude=0.1)
    assert a != random_potentials(cfg, seed=6, amplitude=0.1)
    assert all(abs(m["a"]) <= 0.1 and abs(m["b"]) <= 0.1 for modes in a for m in modes)


def test_initial_velocity_is_gradient():
    sc = NashScenario(**SMALL, psi_star=MODES)
    v0 = initial_velocity(sc)
    x = sc.grid.coords()
    # player 1 own derivative: d/dx1 of 0.01 cos(2 pi x1)
    np.testing.assert_allclose(v0[..., 0], -0.01 * 2 * np.pi * np.sin(2 * np.pi * x[..., 0]), atol=1e-14)
    np.testing.assert_allclose(v0[..., 1], 0.0, atol=1e-14)


def test_interior_rows_are_centred():
    sc = NashScenario(**SMALL)
    rows = interior_rows(sc.grid)
    assert rows[0] == 3 and rows[-1] == sc.grid.nt - 4


def test_zero_data_equilibrates_immediately():
    rep = run(NashScenario(**SMALL, policy="zero"))
    assert rep.result.final_status == SOLVED and rep.result.stages[0].steps == 0
    assert rep.audits["weak_residual"] <= 1e-10 and rep.audits["duality_gap"] <= 1e-10


def test_discrete_solution_policy_is_a_weak_solution():
    sc = NashScenario(**SMALL, psi_star=MODES, policy="discrete_solution")
    prob = assemble(sc)
    rep = audit_solution(prob.vbar, prob, prob.zero_state())
    assert rep["weak_residual"] <= 1e-10
    np.testing.assert_array_equal(prob.vbar[0], prob.v0)
    v = discrete_weak_solution(prob)
    assert strong_residual(v, prob) <= 1e-10


def test_file_policy(tmp_path):
    sc = NashScenario(**SMALL, psi_star=MODES)
    base = np.broadcast_to(initial_velocity(sc), sc.grid.shape + (4,)) * 0.5
    path = tmp_path / "b.dfld"
    write_field(path, base, sc.grid)
    prob = assemble(NashScenario(**SMALL, psi_star=MODES, policy="file", base_state_file=str(path)))
    np.testing.assert_array_equal(prob.vbar, base)
    other = NashScenario(**{**SMALL, "nt": 5}, psi_star=MODES, policy="file", base_state_file=str(path))
    with pytest.raises(GridMismatchError):
        assemble(other)


def test_small_data_run_is_audited():
    sc = NashScenario(**SMALL, psi_star=MODES, flow={"tau": 1e-6})
    rep = run(sc)
    assert rep.result.final_status == SOLVED
    assert rep.dissipation_ok and rep.continuity_exact
    assert rep.max_accepted_violation == 0.0
    assert rep.audits["weak_residual"] <= 1e-6
    assert rep.audits["strong_residual"] < 1e-2
