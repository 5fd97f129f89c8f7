import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perishvi.errors import CapacityError, ContractViolation
from perishvi.mdp import decode, decode_state, encode, encode_state
from perishvi.scenario_a import ScenarioA, ScenarioAParams
from perishvi.scenario_b import ScenarioB, ScenarioBParams
from perishvi.scenario_c import ScenarioC, ScenarioCParams


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=6), st.data())
def test_encode_decode_round_trip(radices, data):
    radices = np.array(radices, dtype=np.int64)
    n = int(np.prod(radices))
    idx = data.draw(st.integers(0, n - 1))
    state = decode(idx, radices)
    assert encode(state, radices) == idx
    out = np.empty(radices.size, dtype=np.int64)
    decode_state(idx, radices, out)
    np.testing.assert_array_equal(out, state)
    assert encode_state(out, radices) == idx


def test_first_component_most_significant():
    radices = np.array([3, 4])
    states = decode(np.arange(12), radices)
    assert [tuple(s) for s in states] == sorted(tuple(s) for s in states)
    assert tuple(states[4]) == (1, 0)


def test_enumeration_bounds_scenario_a():
    model = ScenarioA(ScenarioAParams())
    states = model.enumerate_states()
    assert states.shape == (121, 2)
    assert model.state_index(states[0]) == 0
    assert model.state_index(states[-1]) == 120
    rng = np.random.default_rng(0)
    picks = rng.integers(0, 121, 1000)
    np.testing.assert_array_equal(model.state_index(states[picks]), picks)


def test_encode_rejects_out_of_bounds_state():
    with pytest.raises(IndexError):
        encode([3, 0], [3, 4])
    with pytest.raises(ContractViolation):
        encode([1, 2, 3], [3, 4])


def test_capacity_check_reports_state_count():
    model = ScenarioC(ScenarioCParams.for_experiment(8, 1))
    with pytest.raises(CapacityError) as info:
        model.enumerate_states()
    assert "12,607,619,787" in str(info.value)
    assert info.value.required == 12_607_619_787


def test_capacity_check_respects_explicit_limit():
    model = ScenarioA(ScenarioAParams())
    model.check_capacity(limit_bytes=10**9)
    with pytest.raises(CapacityError):
        model.check_capacity(limit_bytes=100)


def test_fingerprint_depends_on_parameters():
    a = ScenarioA(ScenarioAParams(C_w=7.0))
    b = ScenarioA(ScenarioAParams(C_w=10.0))
    assert a.fingerprint != b.fingerprint
    assert a.fingerprint == ScenarioA(ScenarioAParams(C_w=7.0)).fingerprint


MODELS = {
    "a-fifo-L2": lambda: ScenarioA(ScenarioAParams(m=3, L=2, issuing="fifo")),
    "a-lifo": lambda: ScenarioA(ScenarioAParams(m=2, issuing="lifo")),
    "b": lambda: ScenarioB(ScenarioBParams(m=2, A_a_max=4, A_b_max=3)),
    "c": lambda: ScenarioC(ScenarioCParams.for_experiment(3, 2)),
}


@pytest.mark.parametrize("name", list(MODELS))
def test_random_transitions_stay_in_state_space(name):
    model = MODELS[name]()
    rng = np.random.default_rng(1)
    outcomes = model.outcomes()
    for _ in range(1000):
        s = rng.integers(0, model.state_radices)
        a = rng.integers(0, model.action_radices)
        if name == "c":
            # only receipts summing to the order can occur
            rows = np.nonzero(outcomes[:, 1:].sum(axis=1) == a[0])[0]
            w = outcomes[rng.choice(rows)]
        elif name == "b":
            ia, ib = model.stock_totals(s)
            w = np.array([rng.integers(0, ia + 1), rng.integers(0, ib + 1)])
        else:
            w = outcomes[rng.integers(0, len(outcomes))]
        nxt, r = model.transition(s, a, w)
        assert np.isfinite(r)
        model.state_index(np.array(nxt))  # raises if outside the state space


@pytest.mark.criterion(6)
@pytest.mark.parametrize("name", list(MODELS))
def test_outcome_probabilities_sum_to_one(name):
    model = MODELS[name]()
    rng = np.random.default_rng(2)
    n = 200 if name == "c" else 1000
    for _ in range(n):
        s = rng.integers(0, model.state_radices)
        a = rng.integers(0, model.action_radices)
        p = model.outcome_probabilities(s, a)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-9
