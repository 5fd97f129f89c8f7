import csv

import numpy as np
import pytest

from perishvi.errors import ContractViolation, ParameterError
from perishvi.mdp import DEMAND, EXPIRED, HOLDING, N_STAT_FIELDS, RECEIVED, SATISFIED
from perishvi.scenario_a import ScenarioA, ScenarioAParams
from perishvi.scenario_b import ScenarioB, ScenarioBParams
from perishvi.scenario_c import ScenarioC, ScenarioCParams
from perishvi.simulate import (
    RolloutConfig, constant_policy, evaluate_candidates, evaluate_policy, heuristic_policy,
    kpis_from_stats, mean_sd, rollout, table_policy, write_evaluation_csv,
)
from perishvi.vi import run_value_iteration, set_threads


@pytest.fixture(scope="module")
def model_a():
    return ScenarioA(ScenarioAParams())


def test_empty_window_conventions(model_a):
    cfg = RolloutConfig(horizon_days=0, warmup_days=5, n_rollouts=3)
    res = evaluate_policy(model_a, heuristic_policy(model_a, [5]), cfg)
    assert np.all(res.returns == 0.0)
    assert np.all(res.kpis["service"] == 100.0)
    assert np.all(res.kpis["wastage"] == 0.0)
    assert np.all(res.kpis["holding"] == 0.0)


def test_single_rollout_sd_is_zero():
    assert mean_sd([3.5]) == (3.5, 0.0)
    assert mean_sd([1.0, 3.0])[1] == pytest.approx(np.sqrt(2.0))


def test_config_validation():
    with pytest.raises(ParameterError):
        RolloutConfig(horizon_days=-1)
    with pytest.raises(ParameterError):
        RolloutConfig(n_rollouts=0)


@pytest.mark.parametrize("make,policy_fn", [
    (lambda: ScenarioA(ScenarioAParams(m=3, L=2, issuing="fifo")),
     lambda m: heuristic_policy(m, [9])),
    (lambda: ScenarioB(ScenarioBParams()), lambda m: heuristic_policy(m, [13, 12])),
    (lambda: ScenarioC(ScenarioCParams.for_experiment(3, 2)),
     lambda m: heuristic_policy(m, [6, 13, 7, 12, 7, 14, 6, 11, 6, 11, 3, 8, 3, 7])),
])
def test_kernel_matches_python_recomputation(make, policy_fn):
    model = make()
    policy = policy_fn(model)
    cfg = RolloutConfig(horizon_days=60, warmup_days=10, n_rollouts=5, base_seed=3)
    res = evaluate_policy(model, policy, cfg)
    _, sums = evaluate_candidates(model, policy.kernel, policy.params[None, :], cfg)
    for i in range(cfg.n_rollouts):
        single = rollout(model, policy, i, cfg)
        assert single["return"] == pytest.approx(res.returns[i], abs=1e-9)
        np.testing.assert_allclose(single["stats"][cfg.warmup_days:].sum(axis=0), sums[0, i])
    mean = np.mean([rollout(model, policy, i, cfg)["return"] for i in range(cfg.n_rollouts)])
    assert mean == pytest.approx(res.mean_return, abs=1e-9)


def test_discount_starts_at_first_day_after_warmup(model_a):
    cfg = RolloutConfig(horizon_days=3, warmup_days=2, n_rollouts=1, gamma=0.5)
    traj = rollout(model_a, heuristic_policy(model_a, [5]), 0, cfg)
    r = traj["rewards"]
    assert traj["return"] == pytest.approx(r[2] + 0.5 * r[3] + 0.25 * r[4])


def test_table_policy_rollout_matches_kernel(model_a):
    res = run_value_iteration(model_a)
    policy = table_policy(model_a, res.policy)
    cfg = RolloutConfig(horizon_days=30, warmup_days=5, n_rollouts=4)
    ev = evaluate_policy(model_a, policy, cfg)
    for i in range(4):
        assert rollout(model_a, policy, i, cfg)["return"] == pytest.approx(ev.returns[i])


def test_zero_order_service_level_matches_expectation(model_a):
    # with no stock a day's demand is met only if it is zero, so the expected
    # one-day service level is 100 * P(D = 0)
    cfg = RolloutConfig(horizon_days=1, warmup_days=0, n_rollouts=40_000, base_seed=11)
    res = evaluate_policy(model_a, constant_policy(model_a, [0]), cfg)
    p0 = model_a.demand.probs[0]
    service = res.kpis["service"]
    se = 100 * np.sqrt(p0 * (1 - p0) / cfg.n_rollouts)
    assert abs(service.mean() - 100 * p0) < 4 * se
    # every unit of demand is short: expected reward is -C_s * E[D]
    expected = -model_a.params.C_s * model_a.demand.mean()
    assert abs(res.mean_return - expected) < 4 * res.sd_return / np.sqrt(cfg.n_rollouts)


def test_infeasible_action_names_state(model_a):
    cfg = RolloutConfig(horizon_days=5, warmup_days=0, n_rollouts=2)
    with pytest.raises(ContractViolation, match=r"state \(0, 0\)"):
        evaluate_policy(model_a, constant_policy(model_a, [11]), cfg)
    with pytest.raises(ContractViolation, match=r"state \(0, 0\)"):
        rollout(model_a, constant_policy(model_a, [11]), 0, cfg)


def test_heuristic_orders_beyond_vi_cap_are_allowed_in_b():
    model = ScenarioB(ScenarioBParams())
    cfg = RolloutConfig(horizon_days=20, warmup_days=0, n_rollouts=2)
    evaluate_policy(model, constant_policy(model, [20, 20]), cfg)
    with pytest.raises(ContractViolation):
        evaluate_policy(model, constant_policy(model, [21, 0]), cfg)


@pytest.mark.criterion(8)
def test_common_random_numbers_share_demand(model_a):
    cfg = RolloutConfig(horizon_days=50, warmup_days=10, n_rollouts=20, base_seed=5)
    params = np.array([[3.0], [8.0]])
    _, sums = evaluate_candidates(model_a, model_a.heuristic_kernel(), params, cfg)
    np.testing.assert_array_equal(sums[0, :, DEMAND], sums[1, :, DEMAND])
    other = RolloutConfig(horizon_days=50, warmup_days=10, n_rollouts=20, base_seed=6)
    _, sums_other = evaluate_candidates(model_a, model_a.heuristic_kernel(), params, other)
    assert not np.array_equal(sums[0, :, DEMAND], sums_other[0, :, DEMAND])


@pytest.mark.criterion(8)
def test_chunking_and_threads_do_not_change_results(model_a):
    policy = heuristic_policy(model_a, [6])
    base = evaluate_policy(model_a, policy, RolloutConfig(n_rollouts=30, horizon_days=40))
    chunked = evaluate_policy(model_a, policy,
                              RolloutConfig(n_rollouts=30, horizon_days=40, chunk=7))
    set_threads(1)
    single = evaluate_policy(model_a, policy, RolloutConfig(n_rollouts=30, horizon_days=40))
    assert base.returns.tobytes() == chunked.returns.tobytes() == single.returns.tobytes()


def test_kpis_bounded_and_per_product_suffixes():
    model = ScenarioB(ScenarioBParams())
    res = evaluate_policy(model, heuristic_policy(model, [13, 12]),
                          RolloutConfig(n_rollouts=20, horizon_days=100))
    assert set(res.kpis) == {f"{k}_{p}" for k in ("service", "wastage", "holding") for p in "ab"}
    for name, values in res.kpis.items():
        assert np.all(values >= 0)
        if not name.startswith("holding"):
            assert np.all(values <= 100)


def test_kpis_from_stats_arithmetic():
    sums = np.zeros((2, N_STAT_FIELDS))
    sums[0, [DEMAND, SATISFIED, EXPIRED, RECEIVED, HOLDING]] = [10, 8, 2, 20, 30]
    k = kpis_from_stats(sums, 1, 10)
    np.testing.assert_allclose(k["service"], [80.0, 100.0])
    np.testing.assert_allclose(k["wastage"], [10.0, 0.0])
    np.testing.assert_allclose(k["holding"], [3.0, 0.0])


def test_evaluation_csv(tmp_path, model_a):
    cfg = RolloutConfig(n_rollouts=3, horizon_days=10)
    results = [evaluate_policy(model_a, heuristic_policy(model_a, [s], name=f"S={s}"), cfg)
               for s in (4, 5)]
    write_evaluation_csv(tmp_path / "k.csv", results)
    rows = list(csv.DictReader(open(tmp_path / "k.csv")))
    assert [r["policy"] for r in rows] == ["S=4", "S=5"]
    assert float(rows[0]["return_mean"]) == pytest.approx(results[0].mean_return)
