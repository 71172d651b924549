import csv
import dataclasses
import io
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from invgame.dynamics import Trajectory, rollout_array
from invgame.evaluation import (
    CSV_HEADER,
    BenchmarkReport,
    EvaluationError,
    closed_loop_rollout,
    eval_trial_configs,
    evaluate_benchmark,
    flag_warnings,
    min_distance_metric,
    render_trial_svg,
    runtime_cost_metric,
    summarize,
)
from invgame.game import JointCostNet
from invgame.ilqgames import RuntimeCostParams, simulate_receding_horizon, stage_cost


def _traj(x0, u):
    u = np.asarray(u, dtype=float)
    return Trajectory(rollout_array(np.asarray(x0, float), u, 0.1), u, 0.1)


# -- metrics ---------------------------------------------------------------------


def test_runtime_cost_zero_on_reference():
    p = RuntimeCostParams(goal=(10.0, 0.0), start=(0.0, 0.0), v_pref=1.0)
    robot = _traj([0.0, 0.0, 0.0], np.tile([1.0, 0.0], (20, 1)))
    far = _traj([0.0, 50.0, 0.0], np.zeros((20, 2)))
    assert runtime_cost_metric(robot, p, [far]) == pytest.approx(0.0, abs=1e-24)


def test_runtime_cost_matches_naive_sum_and_is_linear_in_weights():
    rng = np.random.default_rng(0)
    p = RuntimeCostParams(goal=(3.0, 1.0), start=(0.0, 0.0), v_pref=0.9)
    robot = _traj([0.0, 0.0, 0.2], rng.uniform(-1, 1, (15, 2)))
    other = _traj([1.0, 0.5, 2.0], rng.uniform(-1, 1, (15, 2)))
    total = 0.0
    for t in range(15):
        joint = np.stack([other.states[t], robot.states[t]])
        total += stage_cost(p, joint, 1, robot.controls[t], t)
    assert runtime_cost_metric(robot, p, [other], robot_index=1) == pytest.approx(total, rel=1e-12)
    assert runtime_cost_metric(robot, p, [other], robot_index=1) == pytest.approx(runtime_cost_metric(robot, p, [other]), rel=1e-12)
    only_ref = lambda w: RuntimeCostParams(goal=p.goal, start=p.start, v_pref=p.v_pref, w_ref=w, w_vel=0, w_omega=0, w_prox=0)
    a = runtime_cost_metric(robot, only_ref(1.0), [other])
    assert runtime_cost_metric(robot, only_ref(2.0), [other]) == pytest.approx(2 * a, rel=1e-12)


def test_runtime_cost_rejects_misaligned():
    p = RuntimeCostParams(goal=(3.0, 0.0), start=(0.0, 0.0), v_pref=1.0)
    with pytest.raises(ValueError):
        runtime_cost_metric(_traj([0, 0, 0], np.zeros((5, 2))), p, [_traj([1, 1, 0], np.zeros((4, 2)))])


def test_min_distance_examples():
    a = _traj([0.0, 0.0, 0.0], np.zeros((5, 2)))
    b = _traj([3.0, 0.0, 0.0], np.zeros((5, 2)))
    assert min_distance_metric([a, b]) == 3.0
    assert min_distance_metric([a]) == math.inf


def test_min_distance_crossing_lines_brute_force():
    # agent 0 crosses the origin along x, agent 1 along y five steps later
    a = _traj([-2.0, 0.0, 0.0], np.tile([1.0, 0.0], (40, 1)))
    b = _traj([0.0, -2.5, math.pi / 2], np.tile([1.0, 0.0], (40, 1)))
    c = _traj([9.0, 9.0, 0.0], np.zeros((40, 2)))
    best = min(math.dist(a.states[t, :2], o.states[t, :2]) for t in range(41) for o in (b, c))
    assert min_distance_metric([a, b, c]) == pytest.approx(best, rel=1e-15)


# -- closed loop -----------------------------------------------------------------


@pytest.fixture(scope="module")
def trial_config(bench):
    return eval_trial_configs(bench, 1)[0]


def test_ground_truth_matches_receding_horizon_simulator(bench, trial_config):
    res = closed_loop_rollout("ground_truth", trial_config, bench)
    ev = bench.eval
    xs, us, _ = simulate_receding_horizon(
        trial_config.initial_states, trial_config.params, trial_config.T, ev.horizon,
        ev.ilq_max_iters, ev.ilq_tol, trial_config.dt, bench.dataset.omega_bias,
    )
    for k, tr in enumerate(res.trajectories):
        np.testing.assert_allclose(tr.states, xs[:, k], atol=1e-6)
    assert not res.flagged


@pytest.mark.parametrize("selection", ["weight", "density"])
def test_zero_net_interactive_equals_non_interactive(bench, small_policy, trial_config, selection):
    bench = dataclasses.replace(bench, eval=dataclasses.replace(bench.eval, selection=selection))
    a = closed_loop_rollout("non_interactive", trial_config, bench, small_policy, None, seed=3, trial=0)
    b = closed_loop_rollout("interactive", trial_config, bench, small_policy, JointCostNet.zeros(), seed=3, trial=0)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert ta.controls.tobytes() == tb.controls.tobytes()


def test_rollout_deterministic_and_metrics_recomputable(bench, small_policy, trial_config):
    net = JointCostNet.init(0, (32, 32), 1.0)
    net.params["w2"] += 0.5
    a = closed_loop_rollout("interactive", trial_config, bench, small_policy, net, seed=4, trial=0)
    b = closed_loop_rollout("interactive", trial_config, bench, small_policy, net, seed=4, trial=0)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert ta.states.tobytes() == tb.states.tobytes()
        ta.validate()
    assert (a.runtime_cost, a.min_distance) == a.recompute()
    assert len(a.trajectories[0].controls) == trial_config.T


def test_rollout_requires_artifacts(bench, trial_config, small_policy):
    with pytest.raises(EvaluationError):
        closed_loop_rollout("non_interactive", trial_config, bench)
    with pytest.raises(EvaluationError):
        closed_loop_rollout("interactive", trial_config, bench, small_policy)
    with pytest.raises(ValueError):
        closed_loop_rollout("random", trial_config, bench)


# -- benchmark -------------------------------------------------------------------


@pytest.fixture(scope="module")
def report(bench, small_policy):
    return evaluate_benchmark(bench, small_policy, JointCostNet.zeros(), n_trials=2)


def test_csv_has_paired_rows(report):
    rows = list(csv.reader(io.StringIO(report.csv_text())))
    assert rows[0] == CSV_HEADER
    assert [(r[0], r[1]) for r in rows[1:]] == [
        (str(i), k) for i in range(2) for k in ("ground_truth", "non_interactive", "interactive")
    ]
    # every kind of a trial starts from the same configuration
    for i in range(2):
        starts = {r.trajectories[0].states[0].tobytes() for r in report.results if r.trial == i}
        assert len(starts) == 1


def test_single_trial_gives_three_rows(bench, small_policy):
    rep = evaluate_benchmark(bench, small_policy, JointCostNet.zeros(), n_trials=1)
    assert len(rep.csv_text().strip().splitlines()) == 4


def test_summary_recomputable_from_csv(report, tmp_path):
    report.write(tmp_path)
    rows = list(csv.DictReader((tmp_path / "trials.csv").open()))
    for kind, s in report.summary.items():
        for metric in ("runtime_cost", "min_distance"):
            vals = sorted(float(r[metric]) for r in rows if r["kind"] == kind and r["converged"] == "1")
            n = len(vals)
            # linear-interpolation median written out by hand
            mid = (n - 1) / 2
            med = vals[int(math.floor(mid))] + (vals[int(math.ceil(mid))] - vals[int(math.floor(mid))]) * (mid - math.floor(mid))
            assert s[metric]["median"] == pytest.approx(med, rel=1e-15)
    assert "collision threshold" in (tmp_path / "report.txt").read_text()


def test_flagged_trials_trigger_banner(report, tmp_path):
    results = [dataclasses.replace(r) for r in report.results]
    results[0].flagged, results[0].reason = True, "step 3: iLQGames failed"
    summary = summarize(results)
    assert summary["ground_truth"]["flagged"] == 1 and summary["ground_truth"]["n"] == 1
    warnings = flag_warnings(summary, 2, 0.1)
    assert warnings == ["ground_truth: 1 of 2 trials flagged"]
    assert flag_warnings(summary, 2, 0.5) == []
    rep = BenchmarkReport(results, summary, warnings)
    rep.write(tmp_path)
    assert (tmp_path / "report.txt").read_text().startswith("WARNING: ground_truth")
    assert rep.csv_text().splitlines()[1].split(",")[-1] == "0"


# -- rendering -------------------------------------------------------------------


def test_svg_well_formed_and_deterministic(report, tmp_path):
    res = report.results[2]
    a = render_trial_svg(res, tmp_path / "a.svg")
    b = render_trial_svg(res, tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()
    root = ET.parse(a).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}path")) == len(res.trajectories)
    assert [t.text for t in root.iter(f"{ns}text")] == ["R"]
