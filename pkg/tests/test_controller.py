import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bundle_factory import make_bundle, make_memo
from config import ControllerConfig, ReferenceStat
from controller import (NO_DIRECTIVE, ControllerEvent, Directive, InterventionState, apply_directive, bundle_steps,
                        calibrate, observe, replay, step_components, step_proxy_pdi, warmup_weight)
from errors import ConfigError, DegenerateCohort
from utils.terms import CURRENT_ERROR_PATTERN, VERIFIED_FACTS, Trigger

COMMANDS = ["python3 normalize.py", "pytest tests -x"]
TESTS = (("test_codes", False), ("test_header", True))


def triggers(raw_values, config=None):
    return [directive.kind for _, directive in replay(raw_values, config)]


def test_warmup_weight():
    assert warmup_weight(1, 2) == 0.5
    assert warmup_weight(2, 2) == 1.0
    assert warmup_weight(5, 2) == 1.0
    assert warmup_weight(1, 1) == 1.0


def test_stale_trace_escalates_from_soft_to_strong():
    steps = replay([2.0, -2.0, -2.0])
    assert [d.kind for _, d in steps] == [Trigger.none, Trigger.soft, Trigger.strong]
    assert steps[-1][0].proxy_history == (1.0, -2.0, -2.0)
    assert steps[-1][1].withhold_next_strategy


def test_strong_resets_the_run():
    assert triggers([-2.0] * 4) == [Trigger.soft, Trigger.strong, Trigger.soft, Trigger.strong]


def test_recovery_resets_the_run():
    assert triggers([-2.0, 2.0, -2.0]) == [Trigger.soft, Trigger.none, Trigger.soft]


def test_warmup_dampens_the_first_step():
    # d_hat = 0.5 * -0.8 = -0.4 is above tau
    assert triggers([-0.8]) == [Trigger.none]
    assert triggers([-0.8], ControllerConfig(warmup_W=1)) == [Trigger.soft]


def test_value_at_tau_does_not_trigger():
    assert triggers([1.0, -0.5]) == [Trigger.none, Trigger.none]


@settings(max_examples=200)
@given(st.lists(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False), min_size=1, max_size=20))
def test_trigger_properties(raw_values):
    config = ControllerConfig()
    previous = Trigger.none
    for state, directive in replay(raw_values, config):
        d_hat = state.proxy_history[-1]
        assert (directive.kind is not Trigger.none) == (d_hat < config.tau)
        if directive.kind is Trigger.strong:
            assert previous is Trigger.soft
        previous = directive.kind
        assert state.last_trigger is directive.kind


def test_observe_does_not_mutate_the_state():
    state = InterventionState()
    new_state, _ = observe(state, -3.0)
    assert state.step_k == 0 and state.proxy_history == ()
    assert new_state.step_k == 1


def test_directive_annotations():
    strong = Directive.for_trigger(Trigger.strong)
    assert strong.anchor_sections == (VERIFIED_FACTS, CURRENT_ERROR_PATTERN)
    assert Directive.for_trigger(Trigger.soft) == Directive(Trigger.soft)


def test_first_step_uses_execution_grounding_only():
    memo = make_memo(1, COMMANDS, ["test_header passes"], "codes keep casing", "lowercase every code")
    components = step_components(memo, None, COMMANDS, TESTS)
    assert components.phi_exec == 1.0
    assert not components.has_history
    assert step_proxy_pdi(memo, None, COMMANDS, TESTS) == pytest.approx(2.0)


def test_stale_memo_scores_negative():
    memo = make_memo(1, COMMANDS, ["test_header passes"], "codes keep casing", "lowercase every code")
    components = step_components(memo, memo, COMMANDS, TESTS, TESTS)
    assert (components.phi_exec, components.phi_plan, components.phi_oss) == (1.0, 1.0, 1.0)
    assert components.proxy_pdi(ControllerConfig()) == pytest.approx(-2.0)


def test_reference_stats_shift_the_score():
    memo = make_memo(1, COMMANDS, ["fact"], "err", "plan")
    config = ControllerConfig(reference_stats={
        "exec": ReferenceStat(mean=1.0, std=0.5),
        "plan": ReferenceStat(mean=0.5, std=0.25),
        "oss": ReferenceStat(mean=0.5, std=0.25),
    })
    assert step_proxy_pdi(memo, None, COMMANDS, config=config) == pytest.approx(0.0)


def test_controller_config_validation():
    with pytest.raises(ConfigError):
        ControllerConfig(warmup_W=0)
    with pytest.raises(ConfigError):
        ReferenceStat(mean=0.0, std=0.0)
    with pytest.raises(ConfigError):
        ControllerConfig(reference_stats={"exec": ReferenceStat(mean=0.5, std=0.25)})


def test_apply_directive():
    memo = make_memo(2, COMMANDS, ["fact"], "err", "plan")
    assert apply_directive(NO_DIRECTIVE, memo) is memo
    assert apply_directive(Directive.for_trigger(Trigger.soft), memo) is memo
    withheld = apply_directive(Directive.for_trigger(Trigger.strong), memo)
    assert withheld.next_strategy == ""
    assert withheld.verified_facts == memo.verified_facts
    assert withheld.attempt_count_header == 2


def test_event_serializes_flat():
    event = ControllerEvent(step=1, raw_pdi=2.0, weight=0.5, d_hat=1.0, trigger="none", phi_exec=1.0)
    assert event.to_dict() == {"step": 1, "raw_pdi": 2.0, "weight": 0.5, "d_hat": 1.0, "trigger": "none",
                               "phi_exec": 1.0, "phi_plan": None, "phi_oss": None}


def test_bundle_steps_follow_the_memos(iterative_bundle):
    steps = bundle_steps(iterative_bundle)
    assert len(steps) == 3
    assert [s.has_history for s in steps] == [False, True, True]


def test_calibrate(corpus):
    stats = calibrate(corpus)
    assert set(stats) == {"exec", "plan", "oss"}
    assert all(s.std > 0 for s in stats.values())
    with pytest.raises(DegenerateCohort):
        calibrate([make_bundle("tiny", n_failed=1)])
