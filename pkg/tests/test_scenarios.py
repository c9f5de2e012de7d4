import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import ControllerConfig, HarnessConfig
from errors import ConfigError
from harness import InjectionRecord, run_task
from scenarios import OutcomeSpec, Script, ScriptedReflector, load_scenario, random_scenario
from utils.terms import PdiMode, Trigger


def test_load_scenario(scenario_dir):
    scenario = load_scenario(scenario_dir / "stale_reflector.json")
    assert scenario.task.task_id == "codebook-normalization"
    assert scenario.reflector == "stale"
    assert scenario.rebound_on is Trigger.strong
    config = scenario.harness_config(HarnessConfig(N_max=3))
    assert config.N_max == 7
    assert config.pdi_mode is PdiMode.intervene


def test_scenario_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_scenario(broken)
    no_task = tmp_path / "no_task.json"
    no_task.write_text(json.dumps({"attempts": [{}]}), encoding="utf-8")
    with pytest.raises(ConfigError, match="task"):
        load_scenario(no_task)
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"task": {"task_id": "t", "instruction": "x"}, "attempts": []}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_scenario(empty)


def test_unknown_reflector_mode():
    with pytest.raises(ConfigError):
        ScriptedReflector(Script([OutcomeSpec()]), mode="lazy")


def test_script_repeats_the_last_outcome_and_rebounds_once():
    first, last, fixed = OutcomeSpec(reward=0.0), OutcomeSpec(reward=0.5), OutcomeSpec(reward=1.0)
    script = Script([first, last], after_intervention=[fixed])
    assert script.outcome_for(InjectionRecord(attempt_index=1)) is first
    assert script.outcome_for(InjectionRecord(attempt_index=3, directive=Trigger.soft)) is last
    assert script.outcome_for(InjectionRecord(attempt_index=4, directive=Trigger.strong)) is fixed
    assert script.outcome_for(InjectionRecord(attempt_index=5)) is fixed


def test_soft_rebound_setting():
    fixed = OutcomeSpec(reward=1.0)
    script = Script([OutcomeSpec()], after_intervention=[fixed], rebound_on=Trigger.soft)
    assert script.outcome_for(InjectionRecord(attempt_index=2, directive=Trigger.soft)) is fixed


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000), mode=st.sampled_from(list(PdiMode)))
def test_random_scenarios_always_yield_valid_bundles(seed, mode):
    scenario = random_scenario(seed)
    config = scenario.harness_config(HarnessConfig(pdi_mode=mode))
    assert config.N_max == 7
    result = run_task(scenario.task, scenario.ports(), config, seed=seed)
    bundle = result.bundle
    bundle.validate()
    solved = any(o.reward >= 1.0 for o in scenario.attempts)
    assert (bundle.solved_at is not None) == solved
    assert (bundle.skill is not None) == solved
    assert 1 <= len(bundle.attempts) <= 7
    assert len(bundle.memos) == sum(1 for a in bundle.attempts if not a.solved)
    assert (len(result.events) > 0) == (mode is not PdiMode.off and len(bundle.memos) > 0)
    again = run_task(scenario.task, scenario.ports(), config, seed=seed)
    assert again.bundle == bundle
    assert again.event_log() == result.event_log()


@pytest.mark.parametrize("name", ["stale_reflector.json", "exhaustion.json", "iterative_solve.json"])
def test_intervention_is_inert_when_the_threshold_is_never_crossed(scenario_dir, name):
    scenario = load_scenario(scenario_dir / name)
    base = HarnessConfig(controller=ControllerConfig(tau=-100.0))
    off = run_task(scenario.task, scenario.ports(),
                   scenario.harness_config(base).model_copy(update={"pdi_mode": PdiMode.off}), seed=scenario.seed)
    on = run_task(scenario.task, scenario.ports(),
                  scenario.harness_config(base).model_copy(update={"pdi_mode": PdiMode.intervene}),
                  seed=scenario.seed)
    assert all(e.trigger == "none" for e in on.events)
    assert on.bundle == off.bundle
    assert on.injections == off.injections


def test_random_scenario_is_seeded():
    assert random_scenario(11).attempts == random_scenario(11).attempts
