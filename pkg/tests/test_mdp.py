"""Exact baseline tests: backward induction, policy evaluation, variances.

Derived expectations are computed by independent oracles defined here
(exhaustive policy enumeration, Monte-Carlo rollouts, extended-precision
summation, definitional variance enumeration) rather than by the code paths
under test.
"""
import json

import numpy as np
import pytest

from qvilab import (
    DiscreteDistribution,
    FiniteHorizonMdp,
    MdpValidationError,
    Policy,
    QueryLedger,
    ValueTable,
    bellman_backup,
    brute_force_optimal,
    classical_generative_sample,
    eps_optimality_report,
    exact_value_iteration,
    policy_value,
    random_mdp,
    sigma_squared,
    total_variance_norm,
)
from qvilab.instances import HardInstanceSpec, hard_instance_optimal_start_values, make_hard_instance


def zero_reward_mdp(S=3, A=2, H=4, seed=0):
    base = random_mdp(S, A, H, seed=seed)
    return FiniteHorizonMdp(base.transitions, np.zeros_like(base.rewards))


def deterministic_mdp(S=4, A=3, H=3, seed=0):
    return random_mdp(S, A, H, sparsity=1.0 / S, seed=seed)


def random_policy(mdp, seed=0):
    rng = np.random.default_rng(seed)
    return Policy(rng.integers(mdp.num_actions, size=(mdp.num_states, mdp.horizon)))


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------


def test_rejects_nonstochastic_row_and_names_it():
    t = np.zeros((1, 2, 1, 2))
    t[0, 0, 0] = [0.5, 0.5]
    t[0, 1, 0] = [0.7, 0.2]  # sums to 0.9
    r = np.zeros((1, 2, 1))
    with pytest.raises(MdpValidationError, match=r"h=0, s=1, a=0"):
        FiniteHorizonMdp(t, r)


def test_rejects_reward_out_of_range():
    t = np.zeros((1, 1, 1, 1))
    t[0, 0, 0, 0] = 1.0
    with pytest.raises(MdpValidationError, match="reward"):
        FiniteHorizonMdp(t, [[[1.5]]])


def test_mdp_is_immutable_and_json_round_trips(tmp_path):
    mdp = random_mdp(3, 2, 2, seed=5)
    with pytest.raises(ValueError):
        mdp.transitions[0, 0, 0, 0] = 0.5
    path = tmp_path / "m.json"
    mdp.save(path)
    back = FiniteHorizonMdp.load(path)
    np.testing.assert_array_equal(back.transitions, mdp.transitions)
    np.testing.assert_array_equal(back.rewards, mdp.rewards)
    blob = json.loads(path.read_text())
    assert (blob["S"], blob["A"], blob["H"]) == (3, 2, 2)


def test_loader_rejects_mismatched_declared_shape():
    mdp = random_mdp(3, 2, 2, seed=5)
    blob = mdp.to_json()
    blob["S"] = 4
    with pytest.raises(MdpValidationError, match="declared"):
        FiniteHorizonMdp.from_json(blob)


def test_discrete_distribution_validates():
    DiscreteDistribution([0.25, 0.75])
    with pytest.raises(ValueError):
        DiscreteDistribution([0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteDistribution([1.2, -0.2])


def test_value_table_requires_zero_terminal_layer():
    with pytest.raises(ValueError):
        ValueTable(np.ones((3, 2)))


# ---------------------------------------------------------------------------
# exact value iteration
# ---------------------------------------------------------------------------


def test_vi_matches_hard_instance_closed_form():
    spec = HardInstanceSpec(num_states=7, num_actions=3, horizon=4)
    _, v, _ = exact_value_iteration(make_hard_instance(spec))
    np.testing.assert_allclose(v.values[0], hard_instance_optimal_start_values(spec), atol=1e-9)


def test_vi_single_step_is_greedy():
    mdp = random_mdp(4, 3, 1, seed=7)
    pi, v, _ = exact_value_iteration(mdp)
    np.testing.assert_allclose(v.values[0], mdp.rewards[0].max(axis=1), atol=0)
    np.testing.assert_array_equal(pi.actions[:, 0], mdp.rewards[0].argmax(axis=1))


def test_vi_matches_exhaustive_policy_enumeration():
    mdp = random_mdp(3, 2, 3, seed=11)
    pi_bf, v_bf = brute_force_optimal(mdp)
    pi_vi, v_vi, _ = exact_value_iteration(mdp)
    np.testing.assert_allclose(v_vi.values, v_bf.values, atol=1e-9)
    np.testing.assert_array_equal(pi_vi.actions, pi_bf.actions)


def test_bellman_consistency_invariant():
    for seed in range(5):
        mdp = random_mdp(5, 4, 6, seed=seed)
        pi, v, q = exact_value_iteration(mdp)
        for h in range(mdp.horizon):
            expect = mdp.rewards[h] + mdp.transitions[h] @ v.values[h + 1]
            assert np.abs(q.qvalues[h] - expect).max() <= 1e-9
            assert np.abs(v.values[h] - q.qvalues[h].max(axis=1)).max() <= 1e-9


def test_vi_policy_dominates_random_policies():
    mdp = random_mdp(5, 3, 5, seed=3)
    _, v_star, _ = exact_value_iteration(mdp)
    for seed in range(20):
        v_pi = policy_value(mdp, random_policy(mdp, seed))
        assert (v_pi.values <= v_star.values + 1e-9).all()


# ---------------------------------------------------------------------------
# policy evaluation
# ---------------------------------------------------------------------------


def test_policy_value_safe_action_on_hard_instance():
    spec = HardInstanceSpec(num_states=7, num_actions=3, horizon=5)
    mdp = make_hard_instance(spec)
    # Always play the safe action: uncertain states park on the neutral state.
    pi = Policy(np.full((7, 5), spec.safe_action))
    v = policy_value(mdp, pi)
    for s in spec.uncertain_states:
        assert v.values[0, s] == pytest.approx((spec.horizon - 1) / 2, abs=1e-12)


def test_policy_value_zero_rewards():
    mdp = zero_reward_mdp()
    v = policy_value(mdp, random_policy(mdp, 1))
    assert np.abs(v.values).max() == 0.0


def rollout_mean(mdp, pi, start, n, seed):
    """Monte-Carlo oracle: mean return of n simulated trajectories."""
    rng = np.random.default_rng(seed)
    states = np.full(n, start)
    total = np.zeros(n)
    for h in range(mdp.horizon):
        acts = pi.actions[states, h]
        total += mdp.rewards[h, states, acts]
        rows = mdp.transitions[h, states, acts]
        draws = rng.random(n)
        states = np.minimum(
            (rows.cumsum(axis=1) < draws[:, None]).sum(axis=1), mdp.num_states - 1
        )
    return total.mean(), total.std(ddof=1) / np.sqrt(n)


def test_policy_value_matches_monte_carlo_rollouts():
    mdp = random_mdp(4, 3, 4, seed=21)
    pi = random_policy(mdp, 2)
    exact = policy_value(mdp, pi).values[0, 0]
    mean, stderr = rollout_mean(mdp, pi, start=0, n=10**6, seed=99)
    assert abs(mean - exact) <= 3 * stderr


# ---------------------------------------------------------------------------
# single backups
# ---------------------------------------------------------------------------


def test_backup_terminal_layer_is_reward_max():
    mdp = random_mdp(5, 4, 3, seed=2)
    values, actions = bellman_backup(mdp, 2, np.zeros(5))
    np.testing.assert_allclose(values, mdp.rewards[2].max(axis=1), atol=0)
    np.testing.assert_array_equal(actions, mdp.rewards[2].argmax(axis=1))


def test_backup_deterministic_transitions():
    mdp = deterministic_mdp(seed=9)
    rng = np.random.default_rng(0)
    v_next = rng.random(mdp.num_states)
    succ = mdp.transitions[1].argmax(axis=2)  # point-mass rows
    expect = mdp.rewards[1] + v_next[succ]
    values, actions = bellman_backup(mdp, 1, v_next)
    np.testing.assert_allclose(values, expect.max(axis=1), atol=1e-12)
    np.testing.assert_array_equal(actions, expect.argmax(axis=1))


def test_backup_matches_extended_precision_summation():
    mdp = random_mdp(6, 3, 2, seed=31)
    rng = np.random.default_rng(4)
    v_next = rng.random(6) * 2
    values, _ = bellman_backup(mdp, 0, v_next)
    # Oracle: accumulate each expectation in 80-bit floats.
    p = mdp.transitions[0].astype(np.longdouble)
    q_hi = mdp.rewards[0] + (p @ v_next.astype(np.longdouble)).astype(np.float64)
    np.testing.assert_allclose(values, q_hi.max(axis=1), atol=1e-12)


def test_backup_ties_break_to_smallest_action():
    t = np.zeros((1, 1, 3, 1))
    t[:, :, :, 0] = 1.0
    r = np.array([[[0.5, 0.5, 0.2]]])
    mdp = FiniteHorizonMdp(t, r)
    _, actions = bellman_backup(mdp, 0, np.zeros(1))
    assert actions[0] == 0


def test_fixed_policy_backup_is_monotone():
    # u <= v elementwise implies backup(u) <= backup(v) under any fixed policy.
    rng = np.random.default_rng(17)
    for seed in range(10):
        mdp = random_mdp(5, 3, 3, seed=seed)
        pi = random_policy(mdp, seed)
        u = rng.random(5)
        v = u + rng.random(5)
        idx = np.arange(5)
        act = pi.actions[:, 1]
        bu = mdp.rewards[1, idx, act] + mdp.transitions[1, idx, act] @ u
        bv = mdp.rewards[1, idx, act] + mdp.transitions[1, idx, act] @ v
        assert (bu <= bv + 1e-12).all()


# ---------------------------------------------------------------------------
# variances
# ---------------------------------------------------------------------------


def test_sigma_squared_zero_for_deterministic_rows():
    mdp = deterministic_mdp(seed=5)
    v = np.random.default_rng(1).random(mdp.num_states)
    assert np.abs(sigma_squared(mdp, 0, v)).max() == 0.0


def test_sigma_squared_bernoulli_half():
    t = np.zeros((1, 2, 1, 2))
    t[:, :, :] = [0.5, 0.5]
    mdp = FiniteHorizonMdp(t, np.zeros((1, 2, 1)))
    out = sigma_squared(mdp, 0, np.array([0.0, 1.0]))
    np.testing.assert_allclose(out, 0.25, atol=1e-15)


def test_sigma_squared_matches_definitional_enumeration():
    mdp = random_mdp(5, 3, 2, seed=13)
    v = np.random.default_rng(3).random(5) * 4
    out = sigma_squared(mdp, 1, v)
    for s in range(5):
        for a in range(3):
            row = mdp.transitions[1, s, a]
            mean = sum(row[sp] * v[sp] for sp in range(5))
            var = sum(row[sp] * (v[sp] - mean) ** 2 for sp in range(5))
            assert out[s, a] == pytest.approx(var, abs=1e-12)


def test_total_variance_zero_cases():
    det = deterministic_mdp(seed=8)
    assert total_variance_norm(det, random_policy(det, 0)) == 0.0
    one = random_mdp(4, 2, 1, seed=8)
    assert total_variance_norm(one, random_policy(one, 0)) == 0.0


def test_total_variance_bounded_by_horizon_power():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        horizon = int(rng.integers(2, 9))
        mdp = random_mdp(int(rng.integers(2, 7)), int(rng.integers(2, 5)), horizon, seed=seed)
        pi = random_policy(mdp, seed + 1)
        assert total_variance_norm(mdp, pi) <= horizon**1.5


# ---------------------------------------------------------------------------
# reports and sampling
# ---------------------------------------------------------------------------


def test_report_self_comparison_is_zero():
    mdp = random_mdp(4, 3, 3, seed=2)
    pi, v, q = exact_value_iteration(mdp)
    rep = eps_optimality_report(mdp, pi, v, q, eps=0.1)
    assert rep.value_gap == 0.0 and rep.policy_gap == 0.0 and rep.q_gap == 0.0
    assert rep.all_ok


def test_report_constructed_offset():
    mdp = random_mdp(4, 3, 3, seed=2)
    pi, v, _ = exact_value_iteration(mdp)
    eps = 0.05
    shifted = np.maximum(v.values - eps, 0.0)
    shifted[-1] = 0.0
    rep = eps_optimality_report(mdp, pi, ValueTable(shifted), None, eps=eps)
    assert (v.values >= eps).any()  # offset actually binds somewhere
    assert rep.value_gap == pytest.approx(eps, abs=1e-12)


def test_generative_sample_point_mass_and_ledger():
    mdp = deterministic_mdp(seed=4)
    rng = np.random.default_rng(0)
    ledger = QueryLedger()
    succ = mdp.transitions[0, 1, 1].argmax()
    for _ in range(25):
        assert classical_generative_sample(mdp, 0, 1, 1, rng, ledger) == succ
    assert ledger.count("classical_generative") == 25


def test_generative_sample_uniform_frequencies():
    t = np.full((1, 4, 1, 4), 0.25)
    mdp = FiniteHorizonMdp(t, np.zeros((1, 4, 1)))
    rng = np.random.default_rng(123)
    n = 10**5
    counts = np.zeros(4)
    for _ in range(n):
        counts[classical_generative_sample(mdp, 0, 0, 0, rng)] += 1
    sigma = np.sqrt(0.25 * 0.75 / n)
    assert np.abs(counts / n - 0.25).max() <= 4 * sigma
