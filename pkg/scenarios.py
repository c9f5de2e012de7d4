"""Scripted ports and the JSON scenario format that drives them.

A scenario lists per-attempt outcomes; the scripted agent replays them in order
and, once a directive of the configured strength has been issued, switches
to the `after_intervention` list. The reflector either writes a fresh memo
every time or repeats the previous one (the stale mode used to exercise the
controller).
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError

from config import HarnessConfig
from controller import Directive
from errors import ConfigError
from harness import AgentOutput, EvidenceBlocks, InjectionRecord, Ports, TaskSpec, Verdict
from models import Attempt, Memo
from parsers import render_memo, rerender
from utils.terms import PdiMode, Trigger

logger = logging.getLogger(__name__)


class OutcomeSpec(BaseModel):
    commands: List[str] = Field(default_factory=list)
    stdout: str = ""
    reward: float = 0.0
    tests: Dict[str, bool] = Field(default_factory=dict)
    error: str = ""
    facts: List[str] = Field(default_factory=list)
    strategy: str = ""


class TaskSpecModel(BaseModel):
    task_id: str
    instruction: str
    summary: str = ""
    environment: str = ""
    verifier_text: Optional[str] = None


class ScenarioFile(BaseModel):
    name: str = ""
    task: TaskSpecModel
    seed: int = 0
    N_max: Optional[int] = None
    pdi_mode: Optional[PdiMode] = None
    reflector: str = "fresh"
    attempts: List[OutcomeSpec]
    after_intervention: List[OutcomeSpec] = Field(default_factory=list)
    rebound_on: Trigger = Trigger.strong


@dataclass
class Script:
    """Outcome cursor shared by the scripted agent and judge of one run."""
    outcomes: List[OutcomeSpec]
    after_intervention: List[OutcomeSpec] = field(default_factory=list)
    rebound_on: Trigger = Trigger.strong
    rebound_from: Optional[int] = None
    current: Optional[OutcomeSpec] = None

    def outcome_for(self, injection: InjectionRecord) -> OutcomeSpec:
        if self._rebounds(injection.directive) and self.rebound_from is None and self.after_intervention:
            self.rebound_from = injection.attempt_index
            logger.debug("scripted agent rebounds from attempt %d", self.rebound_from)
        if self.rebound_from is not None:
            sequence, position = self.after_intervention, injection.attempt_index - self.rebound_from
        else:
            sequence, position = self.outcomes, injection.attempt_index - 1
        self.current = sequence[min(position, len(sequence) - 1)]
        return self.current

    def _rebounds(self, directive: Trigger) -> bool:
        if self.rebound_on is Trigger.soft:
            return directive is not Trigger.none
        return directive is Trigger.strong


class ScriptedAgent:
    def __init__(self, script: Script):
        self.script = script

    def execute(self, task: TaskSpec, injection: InjectionRecord) -> AgentOutput:
        outcome = self.script.outcome_for(injection)
        return AgentOutput(commands=tuple(outcome.commands), stdout_text=outcome.stdout)


class ScriptedJudge:
    def __init__(self, script: Script):
        self.script = script

    def judge(self, task: TaskSpec, attempt_index: int, output: AgentOutput) -> Verdict:
        outcome = self.script.current
        return Verdict(reward=outcome.reward, test_summary=tuple(sorted(outcome.tests.items())))


class ScriptedReflector:
    def __init__(self, script: Script, mode: str = "fresh"):
        if mode not in ("fresh", "stale"):
            raise ConfigError(f"unknown reflector mode {mode!r}", "reflector")
        self.script = script
        self.mode = mode

    def reflect(self, task: TaskSpec, previous: Optional[Memo], attempt: Attempt, directive: Directive) -> str:
        if self.mode == "stale" and previous is not None:
            return rerender(previous, attempt_count=attempt.index).raw_text
        outcome = self.script.current
        failed = attempt.failed_tests()
        log = list(previous.attempts_log) if previous is not None else []
        log.append(f"Attempt {attempt.index}: reward {attempt.reward!r}, "
                   f"failed {', '.join(failed) if failed else 'none'}")
        facts = outcome.facts or [f"{name} passes" for name in attempt.passed_tests()]
        error = outcome.error or (f"failing tests: {', '.join(failed)}" if failed else "no test output")
        strategy = outcome.strategy or f"Change approach for attempt {attempt.index + 1}"
        if directive.withhold_next_strategy:
            strategy = f"Re-derive the approach from verified facts: {error}"
        return render_memo(attempt.index, log, attempt.commands, facts, error, strategy)


class TemplateDistiller:
    """Renders the six evidence blocks into a SKILL.md."""

    def distill(self, task: TaskSpec, evidence: EvidenceBlocks) -> str:
        meta = yaml.safe_dump({"name": task.task_id, "description": evidence.task_pattern},
                              sort_keys=True, allow_unicode=True)
        lines = ["---", meta.rstrip("\n"), "---", f"# {task.task_id}", "",
                 "## Task Pattern", evidence.task_pattern, "", "## Execution Chain"]
        lines += [f"{i}. `{entry.command}` ({entry.category.value})"
                  for i, entry in enumerate(evidence.execution_chain, start=1)]
        lines += ["", "## Verification", f"- reward {evidence.verification_reward!r}"]
        lines += [f"- passed: {name}" for name in evidence.verification_passed]
        lines += ["", "## Lessons"]
        lines += [f"- {lesson}" for lesson in evidence.lessons]
        lines += ["", "## Environment", evidence.environment, "", "## Raw Support Tail", "```",
                  evidence.raw_support_tail.replace("```", "'''"), "```", ""]
        return "\n".join(lines)


@dataclass
class Scenario:
    task: TaskSpec
    attempts: List[OutcomeSpec]
    after_intervention: List[OutcomeSpec] = field(default_factory=list)
    reflector: str = "fresh"
    rebound_on: Trigger = Trigger.strong
    seed: int = 0
    N_max: Optional[int] = None
    pdi_mode: Optional[PdiMode] = None
    name: str = ""

    @classmethod
    def from_model(cls, document: ScenarioFile) -> 'Scenario':
        if not document.attempts:
            raise ConfigError("scenario has no attempts", document.name or document.task.task_id)
        return cls(
            task=TaskSpec(**document.task.model_dump()),
            attempts=list(document.attempts),
            after_intervention=list(document.after_intervention),
            reflector=document.reflector,
            rebound_on=document.rebound_on,
            seed=document.seed,
            N_max=document.N_max,
            pdi_mode=document.pdi_mode,
            name=document.name or document.task.task_id,
        )

    def ports(self) -> Ports:
        """Fresh ports for one run."""
        script = Script(self.attempts, self.after_intervention, self.rebound_on)
        return Ports(
            agent=ScriptedAgent(script),
            judge=ScriptedJudge(script),
            reflector=ScriptedReflector(script, self.reflector),
            distiller=TemplateDistiller(),
        )

    def harness_config(self, base: Optional[HarnessConfig] = None) -> HarnessConfig:
        """Scenario N_max and pdi_mode applied over `base`."""
        base = base or HarnessConfig()
        updates = {}
        if self.N_max is not None:
            updates["N_max"] = self.N_max
        if self.pdi_mode is not None:
            updates["pdi_mode"] = self.pdi_mode
        return base.model_copy(update=updates)


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = ScenarioFile.model_validate(json.load(f))
    except OSError as e:
        raise ConfigError(f"cannot read scenario: {e}", str(path)) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario is not valid JSON: {e}", str(path)) from e
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], f"{path}:{'.'.join(str(p) for p in first['loc'])}") from e
    return Scenario.from_model(document)


COMMAND_POOL = (
    "cat README.md", "grep -rn TODO src", "pip install -r requirements.txt", "mkdir -p build",
    "python3 solve.py", "sed -i 's/old/new/' config.ini", "pytest tests -x", "make all",
    "diff expected.txt output.txt", "ls -la", "find . -name '*.py'", "head -n 20 data.csv",
)
TEST_POOL = ("test_parse", "test_format", "test_output", "test_edge_cases", "test_performance")


def random_scenario(seed: int, n_max: int = 7) -> Scenario:
    """Seeded synthetic scenario: solved at a random attempt or never."""
    rng = np.random.default_rng(seed)
    solve_at = int(rng.integers(1, n_max + 2))  # n_max + 1 means unsolved
    tests = list(TEST_POOL[:int(rng.integers(1, len(TEST_POOL) + 1))])
    outcomes = []
    for k in range(1, n_max + 1):
        commands = [str(c) for c in rng.choice(COMMAND_POOL, size=int(rng.integers(1, 6)), replace=True)]
        if k == solve_at:
            outcomes.append(OutcomeSpec(commands=commands, stdout=f"all {len(tests)} tests passed\n",
                                        reward=1.0, tests={t: True for t in tests}))
            break
        passed = rng.random(len(tests)) < 0.5
        if all(passed):
            passed[0] = False
        outcomes.append(OutcomeSpec(
            commands=commands,
            stdout=f"attempt {k}: {int((~passed).sum())} failing\n",
            reward=round(float(passed.mean()) * 0.9, 1),
            tests={t: bool(p) for t, p in zip(tests, passed)},
        ))
    return Scenario(
        task=TaskSpec(task_id=f"synthetic-{seed}", instruction="Make the test suite pass.",
                      summary="synthetic task", environment="python3"),
        attempts=outcomes,
        reflector="stale" if rng.random() < 0.3 else "fresh",
        seed=seed,
        N_max=n_max,
        name=f"random-{seed}",
    )
