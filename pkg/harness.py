"""Exploration loop: execute, judge, reflect, distill, with optional proxy-PDI control.

The agent, judge, reflector and distiller are ports; `scenarios.py` provides the
scripted implementations used by the tests and the `simulate` command.
"""
import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

from config import CommandKeywordTable, HarnessConfig
from controller import (NO_DIRECTIVE, ControllerEvent, Directive, InterventionState, apply_directive, observe,
                        step_components, warmup_weight)
from errors import InputError, PortContractViolation, TrajectoryError, Unsolved
from models import Attempt, Memo, SkillDocument, TrajectoryBundle
from parsers import parse_memo, parse_skill, redact_answers
from utils.terms import CommandCategory, PdiMode, Trigger

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction: str
    summary: str = ""
    environment: str = ""
    verifier_text: Optional[str] = None


@dataclass(frozen=True)
class InjectionRecord:
    """What a retry prompt would carry; prompt wording is left to adapters."""
    attempt_index: int
    memo_text: Optional[str] = None
    directive: Trigger = Trigger.none
    withheld_next_strategy: bool = False
    anchor_sections: Tuple[str, ...] = ()
    urgent: bool = False
    verifier_hint: Optional[str] = None

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["directive"] = self.directive.value
        data["anchor_sections"] = list(self.anchor_sections)
        return data


@dataclass(frozen=True)
class AgentOutput:
    commands: Tuple[str, ...]
    stdout_text: str
    wall_time_sec: Optional[float] = None


@dataclass(frozen=True)
class Verdict:
    reward: float
    test_summary: Tuple[Tuple[str, bool], ...] = ()


@dataclass(frozen=True)
class ChainEntry:
    command: str
    category: CommandCategory
    score: float


@dataclass(frozen=True)
class EvidenceBlocks:
    task_pattern: str
    execution_chain: Tuple[ChainEntry, ...]
    verification_passed: Tuple[str, ...]
    verification_reward: float
    lessons: Tuple[str, ...]
    environment: str
    raw_support_tail: str


class AgentPort(Protocol):
    def execute(self, task: TaskSpec, injection: InjectionRecord) -> AgentOutput: ...


class JudgePort(Protocol):
    def judge(self, task: TaskSpec, attempt_index: int, output: AgentOutput) -> Verdict: ...


class ReflectorPort(Protocol):
    def reflect(self, task: TaskSpec, previous: Optional[Memo], attempt: Attempt, directive: Directive) -> str: ...


class DistillerPort(Protocol):
    def distill(self, task: TaskSpec, evidence: EvidenceBlocks) -> str: ...


@dataclass
class Ports:
    agent: AgentPort
    judge: JudgePort
    reflector: ReflectorPort
    distiller: DistillerPort


@dataclass(frozen=True)
class RunResult:
    bundle: TrajectoryBundle
    events: Tuple[ControllerEvent, ...] = ()
    injections: Tuple[InjectionRecord, ...] = ()
    evidence: Optional[EvidenceBlocks] = None

    def event_log(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.events)


# --- Command chain ---

@dataclass(frozen=True)
class _CompiledRule:
    category: CommandCategory
    weight: float
    patterns: Tuple[re.Pattern, ...]


def _compile(table: CommandKeywordTable) -> List[_CompiledRule]:
    return [
        _CompiledRule(
            category=CommandCategory(rule.category),
            weight=rule.weight,
            patterns=tuple(re.compile(r"(?<![\w-])" + re.escape(k.lower()) + r"(?![\w-])") for k in rule.keywords),
        )
        for rule in table.categories
    ]


def _classify(command: str, rules: Sequence[_CompiledRule], table: CommandKeywordTable) -> Tuple[CommandCategory, float]:
    lowered = command.lower()
    for rule in rules:
        hits = sum(1 for pattern in rule.patterns if pattern.search(lowered))
        if hits:
            return rule.category, rule.weight * (1 + 0.1 * (hits - 1))
    return CommandCategory(table.fallback_category), table.fallback_weight


def classify_command(command: str, table: Optional[CommandKeywordTable] = None) -> Tuple[CommandCategory, float]:
    """First category with a keyword hit wins; score grows by 10% per extra hit."""
    table = table or CommandKeywordTable.load()
    return _classify(command, _compile(table), table)


def is_low_signal(command: str, table: CommandKeywordTable) -> bool:
    words = command.split()
    if not words:
        return True
    return words[0] in table.low_signal and ">" not in command


def command_chain(commands: Sequence[str], k: int = 12,
                  table: Optional[CommandKeywordTable] = None) -> List[ChainEntry]:
    """Top-k scored commands, returned in execution order."""
    table = table or CommandKeywordTable.load()
    rules = _compile(table)
    scored = []
    for position, command in enumerate(commands):
        if is_low_signal(command, table):
            continue
        category, score = _classify(command, rules, table)
        scored.append((position, ChainEntry(command, category, score)))
    best = sorted(scored, key=lambda item: (-item[1].score, item[0]))[:k]
    return [entry for _, entry in sorted(best, key=lambda item: item[0])]


# --- Evidence and injections ---

def _lessons(attempts: Sequence[Attempt], memos: Sequence[Memo]) -> Tuple[str, ...]:
    lessons = [m.current_error_pattern for m in memos if m.current_error_pattern]
    repeated = Counter(name for a in attempts if not a.solved for name in set(a.failed_tests()))
    lessons += [f"repeated failure: {name} failed in {count} attempts"
                for name, count in sorted(repeated.items()) if count >= 2]
    return tuple(lessons)


def assemble_evidence(task: TaskSpec, attempts: Sequence[Attempt], memos: Sequence[Memo] = (),
                      config: Optional[HarnessConfig] = None,
                      table: Optional[CommandKeywordTable] = None) -> EvidenceBlocks:
    config = config or HarnessConfig()
    success = next((a for a in attempts if a.solved), None)
    if success is None:
        raise Unsolved("no successful attempt to distill", task.task_id)
    return EvidenceBlocks(
        task_pattern=task.summary or task.instruction,
        execution_chain=tuple(command_chain(success.commands, config.chain_k, table)),
        verification_passed=success.passed_tests(),
        verification_reward=success.reward,
        lessons=_lessons(attempts, memos),
        environment=task.environment,
        raw_support_tail=success.stdout_text[-config.tail_chars:] if config.tail_chars > 0 else "",
    )


def render_injection(memo: Optional[Memo], directive: Directive = NO_DIRECTIVE, urgent: bool = False,
                     attempt_index: int = 1, verifier_hint: Optional[str] = None) -> InjectionRecord:
    shown = apply_directive(directive, memo) if memo is not None and directive.kind is not Trigger.none else memo
    return InjectionRecord(
        attempt_index=attempt_index,
        memo_text=shown.raw_text if shown is not None else None,
        directive=directive.kind,
        withheld_next_strategy=directive.withhold_next_strategy,
        anchor_sections=directive.anchor_sections,
        urgent=urgent,
        verifier_hint=verifier_hint,
    )


# --- Loop ---

def _check_verdict(verdict: Verdict, task_id: str, index: int) -> None:
    if not 0.0 <= verdict.reward <= 1.0:
        raise PortContractViolation(f"judge reward {verdict.reward} outside [0,1]", f"{task_id} attempt {index}")


def _reflect(ports: Ports, task: TaskSpec, previous: Optional[Memo], attempt: Attempt,
             directive: Directive) -> Memo:
    where = f"{task.task_id} memo {attempt.index}"
    text = ports.reflector.reflect(task, previous, attempt, directive)
    if previous is not None and text != previous.raw_text and text.startswith(previous.raw_text):
        raise PortContractViolation("reflector appended to the previous memo instead of rewriting it", where)
    try:
        memo, _ = parse_memo(text, strict=True)
    except InputError as e:
        raise PortContractViolation(f"reflector output does not parse: {e.message}", where) from e
    return memo


def run_task(task: TaskSpec, ports: Ports, config: Optional[HarnessConfig] = None, seed: int = 0) -> RunResult:
    """Run one task to success or N_max attempts.

    `seed` is recorded for the ports; the loop itself draws no random numbers.
    """
    config = config or HarnessConfig()
    controller = config.controller
    logger.info("running %s (N_max=%d, pdi_mode=%s, seed=%d)", task.task_id, config.N_max,
                config.pdi_mode.value, seed)
    hint = redact_answers(task.verifier_text) if task.verifier_text else None
    attempts: List[Attempt] = []
    memos: List[Memo] = []
    events: List[ControllerEvent] = []
    injections: List[InjectionRecord] = []
    skill: Optional[SkillDocument] = None
    evidence: Optional[EvidenceBlocks] = None
    memo: Optional[Memo] = None
    directive = NO_DIRECTIVE
    state = InterventionState()

    for k in range(1, config.N_max + 1):
        injection = render_injection(memo, directive, urgent=k == config.N_max, attempt_index=k,
                                     verifier_hint=hint if k == 1 else None)
        injections.append(injection)
        output = ports.agent.execute(task, injection)
        verdict = ports.judge.judge(task, k, output)
        _check_verdict(verdict, task.task_id, k)
        attempt = Attempt(index=k, commands=tuple(output.commands), stdout_text=output.stdout_text,
                          reward=verdict.reward, test_summary=tuple(verdict.test_summary),
                          wall_time_sec=output.wall_time_sec)
        attempts.append(attempt)
        if attempt.solved:
            evidence = assemble_evidence(task, attempts, memos, config)
            skill = parse_skill(ports.distiller.distill(task, evidence))
            break

        new_memo = _reflect(ports, task, memo, attempt, directive)
        memos.append(new_memo)
        if config.pdi_mode is not PdiMode.off:
            previous_tests = attempts[-2].test_summary if len(attempts) > 1 else None
            components = step_components(new_memo, memo, attempt.commands, attempt.test_summary,
                                         previous_tests, config.alpha, config.tokenizer)
            raw = components.proxy_pdi(controller)
            state, proposed = observe(state, raw, controller)
            events.append(ControllerEvent(
                step=state.step_k,
                raw_pdi=raw,
                weight=warmup_weight(state.step_k, controller.warmup_W),
                d_hat=state.proxy_history[-1],
                trigger=proposed.kind.value,
                phi_exec=components.phi_exec,
                phi_plan=components.phi_plan if components.has_history else None,
                phi_oss=components.phi_oss if components.has_history else None,
            ))
            directive = proposed if config.pdi_enabled else NO_DIRECTIVE
        memo = new_memo

    try:
        bundle = TrajectoryBundle.build(task.task_id, attempts, memos, skill)
    except TrajectoryError as e:
        raise PortContractViolation(f"run produced an invalid bundle: {e}", task.task_id) from e
    logger.info("%s finished after %d attempts (solved_at=%s, %d controller events)",
                task.task_id, len(attempts), bundle.solved_at, len(events))
    return RunResult(bundle=bundle, events=tuple(events), injections=tuple(injections), evidence=evidence)


def run_many(jobs: Sequence[Tuple[TaskSpec, Callable[[], Ports]]], config: Optional[HarnessConfig] = None,
             seed: int = 0, workers: int = 1) -> List[RunResult]:
    """Run independent tasks on a worker pool; results keep the input order.

    Each job supplies a factory so every run gets fresh ports.
    """
    def run(job):
        task, make_ports = job
        return run_task(task, make_ports(), config, seed)

    if workers <= 1:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, jobs))
