import math

import numpy as np
import pytest

from invgame import tensor as tn
from invgame.dynamics import rollout_array
from invgame.game import (
    JointCostNet,
    NashInputError,
    NashSolution,
    PairCosts,
    all_pair_costs,
    best_response,
    exploitability,
    pair_cost_matrix,
    pair_features,
    predict_joint,
    solve_nash,
    solve_nash_costs,
)
from invgame.policy import CandidateSet

from oracles import grid_fixed_point, mlp_row


def _cands(agent, K=4, H=5, seed=0):
    rng = np.random.default_rng([seed, agent])
    u = np.column_stack([rng.uniform(0, 1.5, K * H), rng.uniform(-1, 1, K * H)]).reshape(K, H, 2)
    s0 = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-3, 3)])
    xs = rollout_array(np.broadcast_to(s0, (K, 3)), u, 0.1)
    return CandidateSet(agent, u, xs, np.zeros(K))


def _net(seed=0, scale=1.0):
    net = JointCostNet.init(seed, (32, 32), scale)
    rng = np.random.default_rng(seed + 100)
    net.params["w2"] = rng.normal(size=net.params["w2"].shape)
    net.params["b2"] = np.array([0.3])
    return net


def _costs(mats):
    mats = np.asarray(mats, dtype=float)
    M = 2
    return PairCosts([(0, 1), (1, 0)], tn.constant(mats), M)


# -- features --------------------------------------------------------------------


def test_features_identical_states():
    f = pair_features([1.0, 2.0, 0.4], [0, 0], [1.0, 2.0, 0.4], [0, 0])
    np.testing.assert_array_equal(f, [0, 0, 1, 0, 0, 0, 0, 0])


def test_features_translation_and_rotation_invariant():
    rng = np.random.default_rng(1)
    sj, sk = rng.normal(size=3), rng.normal(size=3)
    uj, uk = rng.normal(size=2), rng.normal(size=2)
    f0 = pair_features(sj, uj, sk, uk)
    shift = np.array([5.0, -3.0, 0.0])
    np.testing.assert_allclose(pair_features(sj + shift, uj, sk + shift, uk), f0, atol=1e-12)
    a = 1.1
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    rot = lambda s: np.array([*(R @ s[:2]), s[2] + a])
    np.testing.assert_allclose(pair_features(rot(sj), uj, rot(sk), uk), f0, atol=1e-12)


def test_feature_layout():
    f = pair_features([0.0, 0.0, math.pi / 2], [1, 2], [0.0, 3.0, math.pi], [3, 4])
    np.testing.assert_allclose(f, [3, 0, 0, 1, 1, 2, 3, 4], atol=1e-12)


# -- cost matrices ---------------------------------------------------------------


def test_zero_net_gives_zero_matrix():
    C = pair_cost_matrix(JointCostNet.zeros(), _cands(0), _cands(1))
    assert np.all(C.value == 0.0)


def test_single_candidate_matrix_is_summed_step_cost():
    net = _net()
    a, b = _cands(0, K=1), _cands(1, K=1)
    C = pair_cost_matrix(net, a, b).value
    direct = 0.0
    for t in range(a.controls.shape[1]):
        direct += mlp_row(net.params, 2, pair_features(a.states[0, t], a.controls[0, t], b.states[0, t], b.controls[0, t]))
    assert C.shape == (1, 1)
    assert C[0, 0] == pytest.approx(direct, rel=1e-12)


def test_matrix_matches_double_loop():
    net = _net(2)
    a, b = _cands(0, K=3), _cands(1, K=3)
    C = pair_cost_matrix(net, a, b).value
    H = a.controls.shape[1]
    rows = np.empty((3, 3, H, 8))
    for m in range(3):
        for n in range(3):
            for t in range(H):
                rows[m, n, t] = pair_features(a.states[m, t], a.controls[m, t], b.states[n, t], b.controls[n, t])
    batched = net.forward(rows.reshape(-1, 8)).value
    # same rows through one batched pass: identical bits
    assert np.array_equal(C, batched.reshape(3, 3, H).sum(axis=2))
    # BLAS blocking differs between a single row and a batch, so allow an ulp
    single = np.array([mlp_row(net.params, 2, r) for r in rows.reshape(-1, 8)])
    np.testing.assert_allclose(single, batched, rtol=1e-13, atol=1e-14)


def test_all_pair_costs_match_individual_matrices():
    net = _net(3)
    cands = [_cands(j, K=3) for j in range(3)]
    costs = all_pair_costs(net, cands)
    assert costs.pairs == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    for j, k in costs.pairs:
        np.testing.assert_allclose(costs.matrix(j, k), pair_cost_matrix(net, cands[j], cands[k]).value, rtol=1e-12, atol=1e-12)


def test_mismatched_candidate_counts_rejected():
    with pytest.raises(NashInputError):
        all_pair_costs(_net(), [_cands(0, K=3), _cands(1, K=4)])


# -- best response ---------------------------------------------------------------


def test_best_response_examples():
    np.testing.assert_allclose(best_response([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(best_response([math.log(2), 0.0]), [1 / 3, 2 / 3], atol=1e-15)
    w = best_response([0.0, 1000.0])
    assert w[0] == 1.0 and w[1] <= 1e-300


def test_best_response_shift_invariant():
    c = np.random.default_rng(4).normal(size=6)
    np.testing.assert_allclose(best_response(c + 123.456), best_response(c), atol=1e-15)


def test_best_response_rejects_non_finite():
    with pytest.raises(NashInputError):
        best_response([0.0, np.nan])


# -- equilibrium -----------------------------------------------------------------


def test_zero_net_gives_uniform_after_one_iteration():
    cands = [_cands(j) for j in range(3)]
    sol = solve_nash(cands, JointCostNet.zeros())
    assert sol.iterations == 1 and sol.residual == 0.0 and sol.converged
    assert np.all(sol.weights == 0.25)


def test_symmetric_matching_penalty_has_uniform_fixed_point():
    C = np.array([[2.0, 0.0], [0.0, 2.0]])
    sol = solve_nash_costs(_costs([C, C]), 2)
    np.testing.assert_allclose(sol.weights, 0.5, atol=1e-15)
    assert sol.converged


@pytest.mark.parametrize("seed", range(10))
def test_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    C12, C21 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    costs = _costs([C12, C21])
    sol = solve_nash_costs(costs, 3, max_iters=500)
    assert sol.converged
    g1, g2 = grid_fixed_point(C12, C21)
    assert np.abs(sol.weights - np.stack([g1, g2])).max() <= 0.01
    assert exploitability(sol, costs) <= 1e-6
    for j, k in ((0, 1), (1, 0)):
        c = costs.matrix(j, k) @ sol.weights[k]
        np.testing.assert_allclose(best_response(c), sol.weights[j], atol=1e-7)


def test_weights_are_distributions():
    cands = [_cands(j, K=6) for j in range(4)]
    sol = solve_nash(cands, _net(5))
    assert np.all(sol.weights >= 0)
    np.testing.assert_allclose(sol.weights.sum(axis=1), 1.0, atol=1e-9)


def test_shift_of_one_agents_costs_leaves_equilibrium_unchanged():
    rng = np.random.default_rng(6)
    mats = rng.normal(size=(2, 3, 3))
    a = solve_nash_costs(_costs(mats), 3)
    shifted = mats.copy()
    shifted[0] += 7.5
    b = solve_nash_costs(_costs(shifted), 3)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)


def test_permuting_candidates_permutes_weights():
    net = _net(7)
    cands = [_cands(j, K=5) for j in range(3)]
    perm = np.array([3, 0, 4, 1, 2])
    permuted = [cands[0]] + [
        CandidateSet(c.agent, c.controls[perm], c.states[perm], c.log_prior[perm]) for c in cands[1:]
    ]
    a = solve_nash(cands, net, max_iters=200)
    b = solve_nash(permuted, net, max_iters=200)
    np.testing.assert_allclose(b.weights[0], a.weights[0], atol=1e-9)
    for j in (1, 2):
        np.testing.assert_allclose(b.weights[j], a.weights[j][perm], atol=1e-9)


def test_non_convergence_is_flagged_not_fatal():
    # large random costs with undamped updates cycle
    mats = np.random.default_rng(1).normal(size=(2, 2, 2)) * 20
    sol = solve_nash_costs(_costs(mats), 2, max_iters=20, damping=1.0)
    assert not sol.converged and sol.residual > 1e-8 and sol.iterations == 20


def test_invalid_damping_rejected():
    with pytest.raises(NashInputError):
        solve_nash_costs(_costs(np.zeros((2, 2, 2))), 2, damping=0.0)


def test_deterministic():
    cands = [_cands(j, K=6) for j in range(4)]
    a = solve_nash(cands, _net(8))
    b = solve_nash(cands, _net(8))
    assert a.weights.tobytes() == b.weights.tobytes()


def test_unroll_fixes_iteration_count():
    cands = [_cands(j) for j in range(2)]
    sol = solve_nash(cands, JointCostNet.zeros(), unroll=7)
    assert sol.iterations == 7


def test_exploitability_cases():
    costs = _costs(np.zeros((2, 3, 3)))
    assert exploitability(np.full((2, 3), 1 / 3), costs) == 0.0
    rng = np.random.default_rng(9)
    costs = _costs(rng.normal(scale=2.0, size=(2, 3, 3)))
    assert exploitability(np.full((2, 3), 1 / 3), costs) > 0


def test_predict_joint_tie_breaks():
    cands = [_cands(0, K=3), _cands(1, K=3), _cands(2, K=3)]
    W = np.array([[0.0, 0.0, 1.0], [1 / 3, 1 / 3, 1 / 3], [0.2, 0.5, 0.3]])
    controls, idx = predict_joint(NashSolution(W, 1, 0.0, True), cands)
    assert idx == [2, 0, 1]
    for j in range(3):
        assert controls[j] is cands[j].controls[idx[j]] or np.array_equal(controls[j], cands[j].controls[idx[j]])


def test_density_selection_weighs_prior():
    cands = [_cands(0, K=3), _cands(1, K=3)]
    for c in cands:
        c.log_prior[:] = [0.0, -1.0, -3.0]
    W = np.array([[0.3, 0.5, 0.2], [1 / 3, 1 / 3, 1 / 3]])
    sol = NashSolution(W, 1, 0.0, True)
    # log 0.5 - 1 < log 0.3, so the prior keeps agent 0 on candidate 0
    assert predict_joint(sol, cands)[1] == [1, 0]
    assert predict_joint(sol, cands, "density")[1] == [0, 0]
    W[0] = [0.05, 0.9, 0.05]
    assert predict_joint(sol, cands, "density")[1] == [1, 0]
    with pytest.raises(ValueError):
        predict_joint(sol, cands, "mean")


def test_checkpoint_round_trip(tmp_path):
    net = _net(11)
    path = tmp_path / "net.json"
    net.save(path)
    back = JointCostNet.load(path)
    for k in net.params:
        assert back.params[k].tobytes() == net.params[k].tobytes()
    path.write_text(path.read_text().replace("pair-features-v1", "pair-features-v0"))
    with pytest.raises(ValueError, match="feature order"):
        JointCostNet.load(path)


def test_init_starts_at_zero_output():
    net = JointCostNet.init(3, (32, 32), 1.0)
    assert np.all(net(np.random.default_rng(0).normal(size=(10, 8))) == 0.0)
