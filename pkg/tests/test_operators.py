import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualflow.errors import ShapeError, UnsupportedConfigurationError
from dualflow.operators import (PlayerConfig, apply_U, apply_U_adjoint, apply_U_vv,
                                check_trace_condition, trace_U_adjoint)

CONFIGS = [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2)]
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("N,p", CONFIGS)
def test_dimensions_and_index_layout(N, p):
    cfg = PlayerConfig(N, p)
    assert cfg.n == p * N * N and cfg.m == N * p
    flat = sorted(cfg.index(i, j, l) for i in range(N) for j in range(N) for l in range(p))
    assert flat == list(range(cfg.n))
    assert cfg.index(0, 1, 0) == p


@pytest.mark.parametrize("N,p", [(0, 1), (1, 0), (1.5, 1)])
def test_rejects_bad_counts(N, p):
    with pytest.raises(ValueError):
        PlayerConfig(N, p)


@pytest.mark.parametrize("N,p", CONFIGS)
def test_adjoint_pairing(N, p, rng):
    cfg = PlayerConfig(N, p)
    for _ in range(100):
        A = rng.normal(size=(cfg.n, cfg.n))
        y = rng.normal(size=N)
        assert apply_U(A, cfg) @ y == pytest.approx(np.sum(A * apply_U_adjoint(y, cfg)), abs=1e-11)


@pytest.mark.parametrize("N,p", CONFIGS)
def test_adjoint_is_symmetric_and_trace(N, p, rng):
    cfg = PlayerConfig(N, p)
    y = rng.normal(size=(5, N))
    S = apply_U_adjoint(y, cfg)
    np.testing.assert_array_equal(S, np.swapaxes(S, -1, -2))
    np.testing.assert_allclose(np.trace(S, axis1=-2, axis2=-1), trace_U_adjoint(y, cfg), atol=1e-14)


def test_hand_computed_two_players():
    # N=2, p=1: components v = (v11, v12, v21, v22)
    cfg = PlayerConfig(2, 1)
    v = np.array([1.0, 2.0, 3.0, 4.0])
    # U(v x v)_i = 1/2 v_ii^2 + sum_{j != i} v_jj v_ij
    expected = np.array([0.5 * 1 + 4 * 2, 0.5 * 16 + 1 * 3])
    np.testing.assert_allclose(apply_U_vv(v, cfg), expected)
    np.testing.assert_allclose(apply_U(np.outer(v, v), cfg), expected)


@pytest.mark.parametrize("N,p", CONFIGS)
def test_vv_matches_outer_product(N, p, rng):
    cfg = PlayerConfig(N, p)
    v = rng.normal(size=(7, cfg.n))
    np.testing.assert_allclose(apply_U_vv(v, cfg), apply_U(np.einsum("ka,kb->kab", v, v), cfg),
                               atol=1e-12)


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
def test_adjoint_linear_in_y(y1, y2):
    cfg = PlayerConfig(3, 1)
    np.testing.assert_allclose(apply_U_adjoint(y1 + y2, cfg),
                               apply_U_adjoint(y1, cfg) + apply_U_adjoint(y2, cfg), atol=1e-12)


def test_shape_errors():
    cfg = PlayerConfig(2, 1)
    with pytest.raises(ShapeError):
        apply_U(np.zeros((3, 3)), cfg)
    with pytest.raises(ShapeError):
        apply_U_adjoint(np.zeros(3), cfg)
    with pytest.raises(ShapeError):
        apply_U_vv(np.zeros(5), cfg)


@pytest.mark.parametrize("N,p", [(2, 1), (2, 2), (3, 1)])
def test_trace_condition_implies_minors(N, p, rng):
    cfg = PlayerConfig(N, p)
    for _ in range(200):
        y = rng.normal(size=N) * rng.uniform(0.1, 5)
        lam = np.linalg.eigvalsh(apply_U_adjoint(y, cfg))[0]
        k = max(0.0, -lam) + rng.uniform(0, 1) * rng.integers(0, 2)
        rep = check_trace_condition(y, k, cfg)
        assert rep.premise
        assert rep.consistent and rep.minors_hold


def test_trace_condition_failing_premise_is_reported():
    cfg = PlayerConfig(2, 1)
    rep = check_trace_condition(np.array([-5.0, 0.0]), 0.1, cfg)
    assert not rep.premise and rep.consistent


def test_trace_condition_single_player_unsupported():
    with pytest.raises(UnsupportedConfigurationError):
        check_trace_condition(np.array([1.0]), 1.0, PlayerConfig(1, 1))
