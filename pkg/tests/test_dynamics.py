import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import brentq

from swarmctl import AgentState, ControlSpec, KernelSpec, ModelSpec, RepulsionSpec, SimConfig, simulate
from swarmctl.core import FrictionSpec, total_energy
from swarmctl.dynamics import (
    cd_pair_escape_level,
    cd_rhs,
    cs_pair_rhs,
    cs_rhs,
    graph_rhs,
    hk_rhs,
    perturbed_cs_rhs,
    vicsek_rhs,
)
from swarmctl.errors import ConfigError, DimensionError, SingularConfigurationError

CS = KernelSpec.rational(1, 1, 1)


def test_graph_rhs_examples(rng):
    np.testing.assert_array_equal(graph_rhs(0, np.full((3, 2), 4.0), np.ones((3, 3))), 0)
    np.testing.assert_allclose(graph_rhs(0, np.array([[1.0], [-1.0]]), np.ones((2, 2))), [[-2], [2]])
    # doubly balanced weights keep the mean
    G = rng.uniform(size=(5, 5))
    G = G + G.T
    v = rng.normal(size=(5, 2))
    assert np.abs(graph_rhs(0, v, G).mean(axis=0)).max() <= 1e-12
    assert graph_rhs(0.3, v, lambda t: t * G).shape == (5, 2)
    with pytest.raises(DimensionError):
        graph_rhs(0, v, np.ones((3, 3)))


def test_hk_examples():
    R = 0.5
    np.testing.assert_array_equal(hk_rhs(0, np.array([[0.0], [2 * R + 0.1]]), R), 0)
    np.testing.assert_allclose(hk_rhs(0, np.array([[0.0], [1.0]]), 2.0), [[0.5], [-0.5]])
    np.testing.assert_array_equal(hk_rhs(0, np.full((4, 1), 0.3), 1.0), 0)


def test_vicsek_examples():
    x = np.array([[0.0, 0.0], [0.5, 0.0]])
    dx, dth = vicsek_rhs(0, x, np.array([0.0, math.pi / 2]), 1.0, 2.0)
    np.testing.assert_allclose(dth, [math.pi / 4, -math.pi / 4])
    np.testing.assert_allclose(np.linalg.norm(dx, axis=1), 2.0)
    _, dth = vicsek_rhs(0, 10 * x, np.array([0.0, math.pi / 2]), 1.0, 2.0)
    np.testing.assert_array_equal(dth, 0)
    _, dth = vicsek_rhs(0, x, np.array([1.0, 1.0]), 1.0, 2.0)
    np.testing.assert_array_equal(dth, 0)
    with pytest.raises(DimensionError):
        vicsek_rhs(0, np.zeros((2, 3)), np.zeros(2), 1.0, 1.0)


@given(st.permutations(range(5)))
def test_hk_vicsek_permutation_equivariant(perm):
    rng = np.random.default_rng(0)
    v = rng.uniform(size=(5, 1))
    perm = list(perm)
    np.testing.assert_allclose(hk_rhs(0, v[perm], 0.4), hk_rhs(0, v, 0.4)[perm], atol=1e-15)
    x = rng.uniform(size=(5, 2))
    th = rng.uniform(size=5)
    dx, dth = vicsek_rhs(0, x, th, 0.5, 1.0)
    dxp, dthp = vicsek_rhs(0, x[perm], th[perm], 0.5, 1.0)
    np.testing.assert_allclose(dthp, dth[perm], atol=1e-15)
    np.testing.assert_allclose(dxp, dx[perm])


def test_cs_rhs_consensus_and_pair_reduction():
    x = np.array([[0.0], [2.0], [5.0]])
    _, dv = cs_rhs(0, x, np.full((3, 1), 1.5), CS)
    np.testing.assert_allclose(dv, 0, atol=1e-15)
    # two agents, relative coordinates: d(v1 - v2)/dt = -a(|x1 - x2|)(v1 - v2)
    a = KernelSpec.rational(0.5, 1, 1)
    x = np.array([[0.3], [-0.4]])
    v = np.array([[1.0], [-0.2]])
    _, dv = cs_rhs(0, x, v, a)
    rel = dv[0, 0] - dv[1, 0]
    r = 0.7
    assert rel == pytest.approx(-0.5 / (1 + r * r) * 1.2)


@given(arrays(float, (4, 2), elements=st.floats(-3, 3)), arrays(float, (4, 2), elements=st.floats(-3, 3)),
       arrays(float, (4, 2), elements=st.floats(-1, 1)))
def test_cs_mean_velocity_derivative_is_mean_control(x, v, u):
    _, dv = cs_rhs(0, x, v, CS, u)
    np.testing.assert_allclose(dv.mean(axis=0), u.mean(axis=0), atol=1e-12)


def test_perturbed_recovers_cs_and_uniform(rng):
    x, v = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    g = 0.7
    _, dv_cs = cs_rhs(0, x, v, CS)
    _, dv_p = perturbed_cs_rhs(0, x, v, CS, g, g, lambda x, v: v - v.mean(axis=0))
    np.testing.assert_allclose(dv_p, dv_cs, atol=1e-14)
    _, dv_u = perturbed_cs_rhs(0, x, v, CS, g, g, None)
    np.testing.assert_allclose(dv_u, dv_cs + g * (v.mean(axis=0) - v), atol=1e-14)


def test_perturbed_mean_drift(rng):
    x, v = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    drift = np.array([0.3, -0.1])
    delta = lambda x, v: np.tile(drift, (len(v), 1)) + 0 * v
    _, dv = perturbed_cs_rhs(0.0, x, v, CS, 0.2, lambda t: 2.0, delta)
    np.testing.assert_allclose(dv.mean(axis=0), 2.0 * drift, atol=1e-13)


def test_cd_pair_reduction():
    beta = 1.5
    a = KernelSpec.rational(1, 1, beta, "squared")
    x = np.array([[0.4, 0.1], [-0.2, 0.3]])
    v = np.zeros((2, 2))
    _, dv = cd_rhs(0, x, v, a, RepulsionSpec.none(), FrictionSpec())
    rel = x[0] - x[1]
    # per-agent attraction is a(|r|^2)(x_j - x_i); the relative coordinate feels twice that
    np.testing.assert_allclose(dv[0] - dv[1], -2 * rel / (1 + rel @ rel) ** beta)


def test_cd_single_agent_friction():
    a = KernelSpec.rational(1, 1, 2, "squared")
    _, dv = cd_rhs(0, np.zeros((1, 2)), np.array([[1.0, -2.0]]), a, RepulsionSpec.power(2),
                   FrictionSpec(0.5, 0.25))
    np.testing.assert_allclose(dv, [[-0.25, 0.5]])


def test_cd_force_balance():
    a = KernelSpec.rational(1, 1, 1.1, "squared")
    f = RepulsionSpec.power(2)
    s_eq = brentq(lambda s: float(f(s)) - float(a(s)), 0.1, 10)
    r = math.sqrt(s_eq)
    x = np.array([[-r / 2, 0.0], [r / 2, 0.0]])
    _, dv = cd_rhs(0, x, np.zeros((2, 2)), a, f, FrictionSpec())
    assert np.abs(dv).max() <= 1e-12


def test_cd_coincident_raises():
    with pytest.raises(SingularConfigurationError):
        cd_rhs(0, np.zeros((2, 1)), np.zeros((2, 1)), KernelSpec.rational(1, 1, 2, "squared"),
               RepulsionSpec.power(2), FrictionSpec())


def test_cd_energy_derivative_matches_power(rng):
    a = KernelSpec.rational(1, 1, 1.1, "squared")
    f = RepulsionSpec.power(2)
    b = FrictionSpec(1.0, rng.uniform(0, 1, 5))
    x = rng.normal(size=(5, 2)) * 2
    v = rng.normal(size=(5, 2))
    u = rng.normal(size=(5, 2))
    dx, dv = cd_rhs(0, x, v, a, f, b, u)
    eps = 1e-6
    Ep = total_energy(AgentState(x + eps * dx, v + eps * dv), a, f)
    Em = total_energy(AgentState(x - eps * dx, v - eps * dv), a, f)
    fd = (Ep - Em) / (2 * eps)
    exact = -2 * np.sum(b(0, 5)[:, None] * v * v) + 2 * np.sum(u * v)
    assert fd == pytest.approx(exact, abs=1e-6)


def test_pair_rhs_float_and_array_agree():
    a = KernelSpec.rational(1, 1, 1)
    f_dx, f_dv = cs_pair_rhs(0, 0.8, -0.3, a)
    a_dx, a_dv = cs_pair_rhs(0, np.array([[0.8]]), np.array([[-0.3]]), a)
    assert f_dv == pytest.approx(float(a_dv[0, 0]), rel=1e-15)
    assert f_dv == pytest.approx(0.3 / 1.64)


def test_cs_pair_matches_full_model():
    # the 1/N normalisation makes the relative coordinate feel exactly a(|x|)
    a_pair = KernelSpec.rational(1, 1, 1)
    a_full = KernelSpec.rational(1, 1, 1)
    cfg = SimConfig(h=1e-2, t_end=3.0)
    pair = simulate(ModelSpec.cs_pair(a_pair), ControlSpec(), AgentState([[1.0]], [[0.4]]), cfg)
    full = simulate(ModelSpec.cucker_smale(a_full), ControlSpec(),
                    AgentState([[0.5], [-0.5]], [[0.2], [-0.2]]), cfg)
    rel = full.x[:, 0, 0] - full.x[:, 1, 0]
    np.testing.assert_allclose(pair.x[:, 0, 0], rel, atol=1e-9)
    np.testing.assert_allclose(pair.V, full.V, atol=1e-12)


def test_cd_pair_matches_full_model():
    a = KernelSpec.rational(1, 1, 2, "squared")
    half = KernelSpec.rational(0.5, 1, 2, "squared")
    cfg = SimConfig(h=1e-2, t_end=3.0)
    pair = simulate(ModelSpec.cd_pair(a), ControlSpec(), AgentState([[0.5]], [[0.8]]), cfg)
    full = simulate(ModelSpec.cucker_dong(half, RepulsionSpec.none()), ControlSpec(),
                    AgentState([[0.25], [-0.25]], [[0.4], [-0.4]]), cfg)
    np.testing.assert_allclose(pair.x[:, 0, 0], full.x[:, 0, 0] - full.x[:, 1, 0], atol=1e-9)
    np.testing.assert_allclose(pair.E, full.E, rtol=1e-9)


def test_escape_level():
    assert cd_pair_escape_level(0.0, 2.0) == 1.0
    assert cd_pair_escape_level(1.0, 3.0) == pytest.approx(1 / 8)
    assert cd_pair_escape_level(0.0, 1.0) == math.inf


def test_model_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec("nope")
    with pytest.raises(ConfigError):
        ModelSpec.cucker_smale(None)
    with pytest.raises(ConfigError):
        ModelSpec.hegselmann_krause(0.0)
    with pytest.raises(ConfigError):
        ModelSpec.vicsek(1.0, -1.0)
    m = ModelSpec.cd_pair(KernelSpec.rational(1, 1, 2, "squared"))
    assert m.is_pair and m.is_cucker_dong and m.agent_count(1) == 2


def test_vicsek_through_model_rhs():
    m = ModelSpec.vicsek(1.0, 1.0)
    x = np.array([[0.0, 0.0], [0.5, 0.0]])
    v = np.array([[0.0, 0.0], [math.pi / 2, 0.0]])
    dx, dv = m.rhs(0, x, v)
    np.testing.assert_allclose(dv[:, 0], [math.pi / 4, -math.pi / 4])
    assert np.all(dv[:, 1] == 0)
