"""Builders for small, valid trajectory bundles used across the test modules."""
from typing import List, Optional, Sequence

from models import Attempt, EvaluationRecord, Memo, TrajectoryBundle
from parsers import parse_memo, parse_skill, render_memo
from utils.terms import Condition

WORDS = ("parser", "config", "cache", "schema", "encoder", "loader", "router", "index", "queue", "token")


def make_memo(k: int, commands: Sequence[str], facts: Sequence[str], error: str, strategy: str,
              log: Optional[Sequence[str]] = None) -> Memo:
    log = list(log) if log is not None else [f"Attempt {i}: failed" for i in range(1, k + 1)]
    memo, _ = parse_memo(render_memo(k, log, commands, facts, error, strategy), strict=True)
    return memo


def skill_text(task_id: str, word: str) -> str:
    return "\n".join([
        "---",
        f"name: {task_id}",
        f"description: fix the {word}",
        "---",
        f"# {task_id}",
        "",
        "## Steps",
        f"1. Edit `{word}.py` so the {word} handles empty input",
        f"2. Run `pytest tests -k {word}`",
        "",
        "```bash",
        f"python3 {word}.py --check",
        "```",
        "",
    ])


def make_bundle(task_id: str, n_failed: int = 2, solved: bool = True, variant: int = 0,
                evaluations: Sequence[EvaluationRecord] = ()) -> TrajectoryBundle:
    """`n_failed` failed attempts, each followed by a memo, then (optionally) one solving attempt."""
    word = WORDS[variant % len(WORDS)]
    other = WORDS[(variant + 3) % len(WORDS)]
    attempts: List[Attempt] = []
    memos: List[Memo] = []
    for i in range(1, n_failed + 1):
        commands = (f"cat {word}.py", f"python3 {word}.py --step {i}")
        if (i + variant) % 2:
            commands += (f"grep -n {other} {word}.py",)
        tests = (("test_" + word, False), ("test_" + other, i % 2 == 0))
        attempts.append(Attempt(index=i, commands=commands, stdout_text=f"attempt {i}: {word} error\n" * (i + variant),
                                reward=0.0 if i == 1 else 0.5, test_summary=tests))
        facts = [f"{word} loads {j} rows" for j in range(1, i + 1)]
        if i > 1 and variant % 3:
            facts.append(f"{other} is not the cause")
        strategy = f"rewrite the {word} loop" if (i + variant) % 3 else f"patch {other} in {word}.py line {10 + i}"
        # the memo records only the first two commands, so grounding is partial on some steps
        memos.append(make_memo(i, commands[:2], facts, f"`{word}.py` line {10 + i} raises KeyError", strategy))
    skill = None
    if solved:
        index = n_failed + 1
        commands = (f"sed -i 's/old/new/' {word}.py", f"python3 {word}.py --check", f"pytest tests -k {word}")
        attempts.append(Attempt(index=index, commands=commands, stdout_text=f"{word} ok\n2 passed\n", reward=1.0,
                                test_summary=(("test_" + word, True), ("test_" + other, True))))
        skill = parse_skill(skill_text(task_id, word))
    return TrajectoryBundle.build(task_id, attempts, memos, skill, evaluations)


def evaluation_set(task_id: str, model: str, baseline: float, generated: float,
                   human: Optional[float] = None) -> List[EvaluationRecord]:
    records = [EvaluationRecord(task_id, model, Condition.baseline, baseline),
               EvaluationRecord(task_id, model, Condition.generated_skill, generated)]
    if human is not None:
        records.append(EvaluationRecord(task_id, model, Condition.human_skill, human))
    return records
