import numpy as np
import pytest
from helpers import TabularMDP, brute_force_policy, naive_backup, random_mdp

from perishvi.errors import (
    CheckpointFormatError, ContractViolation, FingerprintMismatch, NumericDivergenceError,
    ParameterError,
)
from perishvi.scenario_a import ScenarioA, ScenarioAParams
from perishvi.scenario_b import ScenarioB, ScenarioBParams
from perishvi.scenario_c import ScenarioC, ScenarioCParams
from perishvi.vi import (
    BackupPlan, ValueFunction, ViConfig, bellman_backup_batch, check_convergence,
    extract_policy, iter_batches, list_checkpoints, load_checkpoint, run_value_iteration,
    save_checkpoint, set_threads, sweep,
)


@pytest.fixture(scope="module")
def model_a():
    return ScenarioA(ScenarioAParams())


def single_state(reward=1.0, gamma=0.5):
    return TabularMDP(np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.full((1, 1, 1), reward), gamma)


# -- single backups --------------------------------------------------------

def test_single_state_one_backup():
    mdp = single_state()
    v, a = bellman_backup_batch(mdp, np.zeros(1), np.array([0]))
    assert v[0] == 1.0 and a[0] == 0


def test_single_state_geometric_fixed_point():
    res = run_value_iteration(single_state(), ViConfig(epsilon=1e-12))
    assert res.converged
    assert res.value_function.values[0] == pytest.approx(2.0, abs=1e-11)


@pytest.mark.parametrize("cache", ["on", "off"])
def test_batch_backup_matches_triple_loop(cache):
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 30, 4, 5)
    values = rng.normal(size=30)
    plan = BackupPlan(mdp, np.float64, cache=cache)
    v, a = bellman_backup_batch(mdp, values, np.arange(30), plan=plan)
    v_ref, a_ref = naive_backup(mdp, values, mdp.gamma)
    np.testing.assert_allclose(v, v_ref, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(a, a_ref)


def test_argmax_ties_go_to_smallest_action():
    probs = np.ones((1, 3, 1))
    nxt = np.zeros((1, 3, 1))
    rewards = np.array([[[1.0], [2.0], [2.0]]])
    mdp = TabularMDP(probs, nxt, rewards, 0.5)
    _, a = bellman_backup_batch(mdp, np.zeros(1), np.array([0]))
    assert a[0] == 1


def test_backup_rejects_wrong_value_length(model_a):
    with pytest.raises(ContractViolation):
        bellman_backup_batch(model_a, np.zeros(5), np.arange(5))


@pytest.mark.criterion(6)
@pytest.mark.parametrize("seed", range(50))
def test_policy_matches_brute_force_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    n_states = int(rng.integers(2, 9))
    n_actions = 2 if n_states > 6 else 3
    mdp = random_mdp(rng, n_states, n_actions, 3, gamma=0.9)
    res = run_value_iteration(mdp, ViConfig(epsilon=1e-11))
    oracle_policy, oracle_values = brute_force_policy(mdp, 0.9)
    np.testing.assert_array_equal(res.policy, oracle_policy)
    np.testing.assert_allclose(res.value_function.values, oracle_values, atol=1e-9)


# -- sweeps and batching ---------------------------------------------------

def test_iter_batches_pads_with_state_zero():
    batches = list(iter_batches(10, 4))
    assert [(lo, n) for lo, _, n in batches] == [(0, 4), (4, 4), (8, 2)]
    np.testing.assert_array_equal(batches[-1][1], [8, 9, 0, 0])


@pytest.mark.criterion(6, 8)
@pytest.mark.parametrize("batch", [1, 7, 121])
def test_batch_size_invariance_is_bitwise(model_a, batch):
    ref = run_value_iteration(model_a, ViConfig(max_iterations=40, max_batch_size=121))
    res = run_value_iteration(model_a, ViConfig(max_iterations=40, max_batch_size=batch))
    assert res.value_function.values.tobytes() == ref.value_function.values.tobytes()
    np.testing.assert_array_equal(res.policy, ref.policy)


def test_padding_does_not_leak_into_real_states(model_a):
    plan = BackupPlan(model_a, np.float64)
    rng = np.random.default_rng(4)
    values = rng.normal(size=121)
    full, _ = sweep(plan, values, 0.99, 121)
    # 121 = 17 * 7 + 2, so the last batch carries five copies of state 0
    padded, _ = sweep(plan, values, 0.99, 7)
    assert full.tobytes() == padded.tobytes()


def test_cached_and_on_the_fly_routes_agree(model_a):
    values = np.random.default_rng(5).normal(size=121)
    on = BackupPlan(model_a, np.float64, cache="on")
    off = BackupPlan(model_a, np.float64, cache="off")
    assert on.cached and not off.cached
    v1, a1 = sweep(on, values, 0.99, 64)
    v2, a2 = sweep(off, values, 0.99, 64)
    assert v1.tobytes() == v2.tobytes()
    np.testing.assert_array_equal(a1, a2)


@pytest.mark.parametrize("make", [
    lambda: ScenarioA(ScenarioAParams(m=2, L=2, issuing="fifo", A_max=5, D_max=12)),
    lambda: ScenarioB(ScenarioBParams(A_a_max=3, A_b_max=3)),
])
def test_separable_path_matches_general_kernel(make):
    model = make()
    values = np.random.default_rng(7).normal(size=model.n_states)
    v1, a1 = sweep(BackupPlan(model, np.float64, cache="off"), values, 0.95, 1000)
    v2, a2 = sweep(BackupPlan(model, np.float64, cache="off", separable=False),
                   values, 0.95, 1000)
    np.testing.assert_allclose(v1, v2, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(a1, a2)


def test_general_cache_agrees_with_direct_kernel_on_periodic_model():
    model = ScenarioC(ScenarioCParams.for_experiment(3, 2, A_max=4, D_max=5))
    values = np.random.default_rng(6).normal(size=model.n_states)
    v1, a1 = sweep(BackupPlan(model, np.float64, cache="on"), values, 0.95, 1000)
    v2, a2 = sweep(BackupPlan(model, np.float64, cache="off"), values, 0.95, 1000)
    np.testing.assert_allclose(v1, v2, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(a1, a2)


@pytest.mark.criterion(8)
def test_repeat_runs_are_bitwise_identical(model_a):
    a = run_value_iteration(model_a, ViConfig(max_iterations=30))
    set_threads(1)
    b = run_value_iteration(model_a, ViConfig(max_iterations=30))
    assert a.value_function.values.tobytes() == b.value_function.values.tobytes()


def test_sup_norm_change_never_grows(model_a):
    res = run_value_iteration(model_a, ViConfig(max_iterations=300))
    spans = [max(abs(hi), abs(lo)) for hi, lo in res.deltas]
    assert all(later <= earlier * (1 + 1e-12) for earlier, later in zip(spans[1:], spans[2:]))


def test_non_finite_values_raise():
    mdp = TabularMDP(np.ones((2, 1, 1)), np.zeros((2, 1, 1)), np.full((2, 1, 1), np.inf), 0.5)
    with pytest.raises(NumericDivergenceError) as info:
        run_value_iteration(mdp)
    assert info.value.iteration == 1


def test_config_validation():
    with pytest.raises(ParameterError):
        ViConfig(epsilon=0)
    with pytest.raises(ParameterError):
        ViConfig(max_batch_size=0)
    with pytest.raises(ParameterError):
        ViConfig(precision="f16")
    with pytest.raises(ParameterError):
        ViConfig(convergence_test="bogus")


# -- stopping tests --------------------------------------------------------

def test_identical_vectors_pass_value_and_change_tests():
    v = np.arange(5.0)
    assert check_convergence("value-span", [v, v.copy()], 0.9, 1e-9, 3)
    assert check_convergence("change-span", [v, v.copy()], 0.9, 1e-9, 3)


def test_uniform_shift_passes_only_change_test():
    v = np.arange(5.0)
    assert not check_convergence("value-span", [v, v + 0.5], 0.9, 1e-4, 3)
    assert check_convergence("change-span", [v, v + 0.5], 0.9, 1e-4, 3)


def test_short_history_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        check_convergence("change-span", [np.zeros(3)], 1.0, 1e-4, 1)
    with pytest.raises(ContractViolation):
        check_convergence("periodic-span", [np.zeros(3)] * 4, 0.9, 1e-4, 7)


def _periodic_history(gamma, n_vectors, rng):
    # increments gamma^(k-1) * g(k mod 7, s) where each state's cycle sums to the same total
    g = rng.normal(size=(7, 4))
    g -= g.mean(axis=0)
    g += 3.0 / 7
    hist = [np.zeros(4)]
    for k in range(1, n_vectors):
        hist.append(hist[-1] + gamma ** (k - 1) * g[k % 7])
    return hist


def test_periodic_test_passes_at_iteration_seven():
    hist = _periodic_history(0.95, 8, np.random.default_rng(7))
    assert not check_convergence("periodic-span", hist[:7], 0.95, 1e-4, 6)
    assert check_convergence("periodic-span", hist, 0.95, 1e-4, 7)


def test_periodic_test_fails_for_non_uniform_cycle():
    hist = _periodic_history(0.95, 8, np.random.default_rng(8))
    hist[-1] = hist[-1] + np.array([0.0, 0.0, 0.0, 1.0])
    assert not check_convergence("periodic-span", hist, 0.95, 1e-4, 7)


def test_periodic_model_converges_and_stops_after_a_week():
    model = ScenarioC(ScenarioCParams.for_experiment(3, 1, A_max=4, D_max=5))
    res = run_value_iteration(model)
    assert res.converged and res.iterations >= 7


# -- checkpoints -----------------------------------------------------------

@pytest.mark.criterion(6)
def test_checkpoint_round_trip_is_bitwise(tmp_path, model_a):
    values = np.random.default_rng(9).normal(size=121)
    vf = ValueFunction(values, 17, model_a.fingerprint)
    save_checkpoint(vf, tmp_path / "v.pvi")
    back = load_checkpoint(tmp_path / "v.pvi", model_a.fingerprint)
    assert back.iteration == 17
    assert back.values.tobytes() == values.tobytes()


def test_checkpoint_header_layout(tmp_path, model_a):
    save_checkpoint(ValueFunction(np.ones(3), 5, model_a.fingerprint), tmp_path / "v.pvi")
    raw = (tmp_path / "v.pvi").read_bytes()
    assert raw[:4] == b"PVI1"
    assert int.from_bytes(raw[4:12], "little") == 5
    assert raw[12:44] == model_a.fingerprint
    assert int.from_bytes(raw[44:52], "little") == 3
    assert len(raw) == 52 + 24


def test_checkpoint_rejects_other_model(tmp_path, model_a):
    save_checkpoint(ValueFunction(np.zeros(121), 1, model_a.fingerprint), tmp_path / "v.pvi")
    other = ScenarioA(ScenarioAParams(C_w=10.0))
    with pytest.raises(FingerprintMismatch):
        load_checkpoint(tmp_path / "v.pvi", other.fingerprint)


def test_truncated_checkpoint_is_rejected(tmp_path, model_a):
    path = tmp_path / "v.pvi"
    save_checkpoint(ValueFunction(np.zeros(121), 1, model_a.fingerprint), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)
    path.write_bytes(b"junk")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


@pytest.mark.criterion(8)
def test_resume_gives_identical_result(tmp_path, model_a):
    full = run_value_iteration(model_a, ViConfig())
    part = run_value_iteration(model_a, ViConfig(max_iterations=500, checkpoint_every=100),
                               checkpoint_dir=tmp_path)
    assert not part.converged
    assert list_checkpoints(tmp_path)[-1][0] == 500
    resumed = run_value_iteration(model_a, ViConfig(checkpoint_every=100),
                                  checkpoint_dir=tmp_path, resume=True)
    assert resumed.iterations == full.iterations
    assert resumed.value_function.values.tobytes() == full.value_function.values.tobytes()
    np.testing.assert_array_equal(resumed.policy, full.policy)


@pytest.mark.criterion(8)
def test_periodic_resume_restores_week_of_history(tmp_path):
    model = ScenarioC(ScenarioCParams.for_experiment(3, 1, A_max=4, D_max=5))
    full = run_value_iteration(model)
    run_value_iteration(model, ViConfig(max_iterations=9, checkpoint_every=1),
                        checkpoint_dir=tmp_path)
    assert len(list_checkpoints(tmp_path)) == 8
    resumed = run_value_iteration(model, ViConfig(checkpoint_every=1), checkpoint_dir=tmp_path,
                                  resume=True)
    assert resumed.iterations == full.iterations
    assert resumed.value_function.values.tobytes() == full.value_function.values.tobytes()


# -- precision -------------------------------------------------------------

def test_single_precision_gives_same_policy(model_a):
    f64 = run_value_iteration(model_a, ViConfig(precision="f64"))
    f32 = run_value_iteration(model_a, ViConfig(precision="f32"))
    assert f32.value_function.values.dtype == np.float32
    np.testing.assert_array_equal(f32.policy, f64.policy)


def test_extract_policy_matches_final_sweep(model_a):
    res = run_value_iteration(model_a, ViConfig(max_iterations=50))
    np.testing.assert_array_equal(extract_policy(model_a, res.value_function.values), res.policy)
