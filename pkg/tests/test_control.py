import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from swarmctl.control import (
    ControlSpec,
    block_norms,
    classify_partition_cd,
    classify_partition_cs,
    control_mass,
    delta_leader,
    delta_local_average,
    delta_structured,
    j_functional,
    j_functional_minimize,
    leader_p,
    local_average_feedback,
    perp,
    sample_admissible_controls,
    sparse_control_cd,
    sparse_control_cs,
    sparse_optimality_check_cs,
    total_control,
    total_control_bound,
    variational_membership_cs,
)
from swarmctl.core import KernelSpec, bilinear_b, spread, threshold_gamma
from swarmctl.errors import ConfigError

TINY = KernelSpec.rational(1e-6, 1, 1)  # gamma^2 is negligible, so any spread is "outside"
WIDE = np.array([[0.0], [10.0], [20.0]])


# -- total control ----------------------------------------------------------


def test_total_control_examples():
    np.testing.assert_array_equal(total_control(np.full((3, 2), 1.2), 0.7), 0)
    np.testing.assert_allclose(total_control(np.array([[1.0], [-1.0]]), 1.0), [[-1], [1]])
    v = np.array([[2.0], [2.0], [-1.0], [-3.0]])
    alpha = 0.3
    u = total_control(v, alpha)
    # in d = 1 the norm chain is an equality when |v_perp| is uniform in size
    vs = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    us = total_control(vs, alpha)
    assert control_mass(us) == pytest.approx(alpha * 4 * math.sqrt(spread(vs)))
    assert control_mass(u) <= alpha * 4 * math.sqrt(spread(v)) + 1e-12


def test_total_control_bound():
    assert total_control_bound(10.0, 10, 0.64) == pytest.approx(10 / (10 * 0.8))
    assert total_control_bound(1.0, 3, 0.0) == math.inf


# -- partitions ---------------------------------------------------------------


def test_partition_cs_labels():
    a = KernelSpec.rational(1, 1, 1)
    x = np.array([[0.0], [1.0], [2.0]])
    assert classify_partition_cs(x, np.full((3, 1), 2.0), a).value == "P1"
    lab = classify_partition_cs(WIDE, np.array([[3.0], [0.0], [0.0]]), TINY)
    assert lab.value == "P3" and lab.indices == (0,)
    lab = classify_partition_cs(WIDE, np.array([[0.0], [2.0], [-2.0]]), TINY)
    assert lab.value == "P4" and lab.indices == (1, 2)


def test_partition_cs_threshold_tie():
    a = KernelSpec.rational(1, 1, 1)
    x = np.array([[0.0], [0.3]])
    g2 = threshold_gamma(float(spread(x)), a, 2) ** 2
    v = np.array([[g2], [-g2]])
    assert classify_partition_cs(x, v, a).value == "P2"


def test_partition_cd_labels():
    assert classify_partition_cd(np.array([[0.1], [0.2]]), 1.0).value == "P1"
    lab = classify_partition_cd(np.array([[0.1], [3.0], [-1.0]]), 1.0)
    assert lab.value == "P3" and lab.indices == (1,)
    lab = classify_partition_cd(np.array([[2.0, 0.0], [0.0, -2.0], [1.0, 0.0]]), 1.0)
    assert lab.value == "P4" and lab.indices == (0, 1)
    assert classify_partition_cd(np.array([[1.0], [0.2]]), 1.0).value == "P2"
    with pytest.raises(ConfigError):
        classify_partition_cd(np.zeros((2, 1)), -1.0)


# -- sparse Cucker-Smale ----------------------------------------------------


def test_sparse_cs_below_threshold_is_off():
    a = KernelSpec.rational(1, 1, 1)
    u, idx = sparse_control_cs(np.array([[0.0], [0.1]]), np.array([[0.01], [0.0]]), 1.0, a)
    assert idx == -1 and np.all(u == 0)


def test_sparse_cs_hand_example():
    u, idx = sparse_control_cs(WIDE, np.array([[3.0], [0.0], [0.0]]), 1.0, TINY)
    np.testing.assert_allclose(u, [[-1.0], [0.0], [0.0]])
    assert idx == 0


def test_sparse_cs_tie_smallest_index():
    u, idx = sparse_control_cs(WIDE, np.array([[0.0], [2.0], [-2.0]]), 1.0, TINY)
    assert idx == 1
    assert np.count_nonzero(block_norms(u)) == 1


vel = arrays(float, (6, 2), elements=st.floats(-5, 5))


@given(vel, vel)
def test_sparse_cs_sparse_member_and_budgeted(x, v):
    M = 2.0
    a = KernelSpec.rational(1, 1, 1)
    u, _ = sparse_control_cs(x, v, M, a)
    assert np.count_nonzero(block_norms(u)) <= 1
    mass = control_mass(u)
    assert mass == 0 or mass == pytest.approx(M)
    if classify_partition_cs(x, v, a).value in ("P1", "P3"):
        assert variational_membership_cs(u, x, v, M, a)


def test_membership_oracle():
    a = KernelSpec.rational(1, 1, 1)
    x = np.array([[0.0], [0.2]])
    assert variational_membership_cs(np.zeros((2, 1)), x, np.array([[0.01], [0.0]]), 1.0, a)
    v = np.array([[3.0], [0.0], [0.0]])
    u, _ = sparse_control_cs(WIDE, v, 1.0, TINY)
    assert variational_membership_cs(u, WIDE, v, 1.0, TINY)
    # half the budget moved onto a non-maximal agent
    bad = np.array([[-0.5], [0.5], [0.0]])
    assert not variational_membership_cs(bad, WIDE, v, 1.0, TINY)


def test_sparse_optimality(rng):
    a = KernelSpec.rational(1, 1, 1)
    x_in = np.array([[0.0], [0.1]])
    assert sparse_optimality_check_cs(x_in, np.array([[0.01], [0.0]]), 1.0, a, 50, rng)
    for _ in range(5):
        x = rng.uniform(-5, 5, (6, 2))
        v = rng.uniform(-5, 5, (6, 2))
        assert classify_partition_cs(x, v, TINY).value == "P3"
        assert sparse_optimality_check_cs(x, v, 1.0, TINY, 1000, rng)


def test_sparse_beats_clipped_total(rng):
    M = 1.0
    x = rng.uniform(-5, 5, (6, 2))
    v = rng.uniform(-5, 5, (6, 2))
    u_sparse, _ = sparse_control_cs(x, v, M, TINY)
    u_tot = total_control(v, 1.0)
    u_tot *= M / control_mass(u_tot)
    assert bilinear_b(u_sparse, v) <= bilinear_b(u_tot, v) + 1e-12


def test_sampled_controls_are_admissible(rng):
    v = rng.normal(size=(5, 3))
    samples = sample_admissible_controls(v, 2.5, 200, rng)
    assert np.all(control_mass(samples) <= 2.5 + 1e-12)
    assert np.any(np.isclose(control_mass(samples), 2.5))


# -- sparse Cucker-Dong -------------------------------------------------------


def test_sparse_cd_examples():
    u, idx = sparse_control_cd(np.zeros((3, 2)), 1.0, 2.0, 0.5, 2.0)
    assert idx == -1 and np.all(u == 0)
    u, idx = sparse_control_cd(np.array([[2.0], [-1.0]]), 1.0, 10.0, 0.1, 10.0)
    np.testing.assert_allclose(u, [[-1.0], [0.0]])
    assert idx == 0
    with pytest.raises(ConfigError):
        sparse_control_cd(np.ones((2, 1)), 1.0, 10.0, 0.2, 10.0)


@given(vel, st.floats(0.1, 10))
def test_argmax_invariant_under_scaling(v, lam):
    _, i1 = sparse_control_cd(v, 1.0, 1.0, 1.0, 1.0)
    _, i2 = sparse_control_cd(lam * v, 1.0, 1.0, 1.0, 1.0)
    assert i1 == i2


def test_j_functional_minimum(rng):
    v = np.array([[0.1, 0.0], [0.2, 0.1]])
    res = j_functional_minimize(v, 1.0, 4.0, 1.0, 3.0, 200, rng)
    assert np.all(res.u == 0) and res.J == 0.0 and res.verified
    v = np.array([[3.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    M, E0, E, eta = 2.0, 5.0, 4.0, 0.5
    res = j_functional_minimize(v, M, E0, eta, E, 2000, rng)
    m = M * E / E0
    assert res.J == pytest.approx(m * (eta - 3.0))
    u_law, _ = sparse_control_cd(v, M, E0, M / E0, E)
    np.testing.assert_allclose(res.u, u_law)
    assert res.verified and res.J <= res.sampled_min + 1e-9
    assert float(j_functional(u_law, v, eta)) == pytest.approx(res.J)


@given(arrays(float, (4, 2), elements=st.floats(-3, 3)), st.integers(0, 2**32 - 1))
def test_sparse_cd_attains_sampled_minimum(v, seed):
    E0, E, M = 3.0, 2.0, 1.5
    res = j_functional_minimize(v, M, E0, 0.0, E, 200, np.random.default_rng(seed))
    assert res.verified


# -- decentralised laws -------------------------------------------------------


def test_leader_examples():
    assert leader_p(2.0) == 2.0
    with pytest.raises(ConfigError):
        leader_p(1.0)
    np.testing.assert_array_equal(delta_leader(np.full((3, 2), 5.0), 2.0, 2.0), 0)
    np.testing.assert_allclose(delta_leader(np.array([[1.0], [-1.0]]), 2.0, 2.0), [[1.0], [0.0]])


@pytest.mark.parametrize("q", [1.5, 2.0, 5.0])
def test_leader_inner_product(rng, q):
    v = rng.normal(size=(7, 2))
    p = leader_p(q)
    gamma = 0.8
    lhs = 2 * gamma / 7 * np.sum(delta_leader(v, p, q) * perp(v))
    assert lhs == pytest.approx(2 * gamma / p * spread(v), rel=1e-12)


def test_structured_examples(rng):
    one = KernelSpec.custom(lambda r: 1.0)
    x = rng.normal(size=(5, 2))
    v = rng.normal(size=(5, 2))
    np.testing.assert_allclose(delta_structured(x, v, one), 0, atol=1e-14)
    phi = KernelSpec.rational(1, 1, 1)
    d = delta_structured(np.zeros((5, 2)), v, phi)
    np.testing.assert_allclose(d, np.tile(perp(v).mean(axis=0), (5, 1)), atol=1e-14)
    with pytest.raises(ConfigError):
        delta_structured(x, v, KernelSpec.indicator(0.01))


def test_structured_max_mode_is_smaller(rng):
    phi = KernelSpec.rational(1, 1, 1)
    x = rng.normal(size=(6, 2)) * 3
    w = rng.normal(size=2)
    c = rng.normal(size=6)
    v = c[:, None] * w[None, :]  # rank-one perp part
    per = block_norms(delta_structured(x, v, phi, "per_agent"))
    mx = block_norms(delta_structured(x, v, phi, "max"))
    assert np.all(mx <= per + 1e-14)


def test_local_average_examples(rng):
    x = rng.normal(size=(4, 2))
    v = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(delta_local_average(x, v, math.inf), 0)
    d = delta_local_average(np.array([[0.0], [5.0]]), np.array([[1.0], [-1.0]]), 1.0)
    np.testing.assert_allclose(d, [[2.0], [-2.0]])


def test_local_average_radius_zero_cancels_feedback(rng):
    x = rng.normal(size=(5, 2))
    v = rng.normal(size=(5, 2))
    np.testing.assert_allclose(local_average_feedback(x, v, 1.3, 0.0), 0, atol=1e-14)
    gamma = 0.9
    vbar = v.mean(axis=0)
    np.testing.assert_allclose(local_average_feedback(x, v, gamma, math.inf), gamma * (vbar - v))


def test_local_average_matches_definition(rng):
    x = rng.uniform(0, 3, (6, 2))
    v = rng.normal(size=(6, 2))
    R, gamma = 1.2, 0.7
    chi = np.array([[np.linalg.norm(a - b) <= R for b in x] for a in x], dtype=float)
    eta = chi.sum(axis=1).max()
    expected = gamma * 6 / eta * (v.mean(axis=0) - v) + gamma * delta_local_average(x, v, R)
    np.testing.assert_allclose(local_average_feedback(x, v, gamma, R), expected, atol=1e-13)


# -- spec object ------------------------------------------------------------------


def test_control_spec_validation():
    with pytest.raises(ConfigError):
        ControlSpec("bogus")
    with pytest.raises(ConfigError):
        ControlSpec("total", alpha=1.0)
    with pytest.raises(ConfigError):
        ControlSpec("leader", gamma=1.0, q=0.5)
    with pytest.raises(ConfigError):
        ControlSpec("structured", gamma=1.0)
    with pytest.raises(ConfigError):
        ControlSpec("none", sample_hold_dt=0.0)
    spec = ControlSpec("leader", gamma=1.0, q=3.0)
    assert spec.is_stagewise and not spec.is_external


def test_leader_feedback_closed_form(rng):
    v = rng.normal(size=(4, 2))
    spec = ControlSpec("leader", gamma=2.0, q=2.0)
    fb = spec.feedback(np.zeros((4, 2)), v)
    np.testing.assert_allclose(fb, -2.0 * perp(v) + 2.0 * delta_leader(v, 2.0, 2.0))
