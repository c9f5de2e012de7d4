from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from errors import InvariantViolation
from utils.terms import Condition, ModeLabel

SUCCESS_REWARD = 1.0


@dataclass(frozen=True)
class Attempt:
    index: int  # 1-based
    commands: Tuple[str, ...]
    stdout_text: str
    reward: float
    test_summary: Tuple[Tuple[str, bool], ...] = ()
    wall_time_sec: Optional[float] = None

    @property
    def solved(self) -> bool:
        return self.reward >= SUCCESS_REWARD

    def failed_tests(self) -> Tuple[str, ...]:
        return tuple(name for name, passed in self.test_summary if not passed)

    def passed_tests(self) -> Tuple[str, ...]:
        return tuple(name for name, passed in self.test_summary if passed)

    def validate(self, location: str = "attempt") -> None:
        if self.index < 1:
            raise InvariantViolation(f"index must be >= 1, got {self.index}", location)
        if not 0.0 <= self.reward <= 1.0:
            raise InvariantViolation(f"reward {self.reward} outside [0,1]", location)
        names = [name for name, _ in self.test_summary]
        if len(names) != len(set(names)):
            raise InvariantViolation("duplicate test names in test_summary", location)
        if self.wall_time_sec is not None and self.wall_time_sec < 0:
            raise InvariantViolation(f"negative wall_time_sec {self.wall_time_sec}", location)


@dataclass(frozen=True)
class Memo:
    attempt_count_header: int
    attempts_log: Tuple[str, ...]
    commands: Tuple[str, ...]
    verified_facts: Tuple[str, ...]
    current_error_pattern: str
    next_strategy: str
    raw_text: str

    def sections(self) -> Tuple:
        """Section contents without the raw text, for section-level equality."""
        return (self.attempts_log, self.commands, self.verified_facts,
                self.current_error_pattern, self.next_strategy)

    @property
    def facts_text(self) -> str:
        return "\n".join(self.verified_facts)

    @property
    def commands_text(self) -> str:
        return "\n".join(self.commands)


@dataclass(frozen=True)
class SkillDocument:
    frontmatter: Dict[str, str]
    frontmatter_text: str  # verbatim leading block including the --- fences, or ""
    body_text: str
    sections: Tuple[Tuple[str, int, str], ...]  # (heading, level, text)
    code_blocks: Tuple[str, ...]
    numbered_step_count: int

    @property
    def text(self) -> str:
        return self.frontmatter_text + self.body_text


@dataclass(frozen=True)
class EvaluationRecord:
    task_id: str
    model_id: str
    condition: Condition
    reward: float

    def validate(self, location: str = "evaluation") -> None:
        if not 0.0 <= self.reward <= 1.0:
            raise InvariantViolation(f"reward {self.reward} outside [0,1]", location)


@dataclass(frozen=True)
class TrajectoryBundle:
    task_id: str
    attempts: Tuple[Attempt, ...]
    memos: Tuple[Memo, ...] = ()
    skill: Optional[SkillDocument] = None
    solved_at: Optional[int] = None
    mode_label: Optional[ModeLabel] = None
    evaluations: Tuple[EvaluationRecord, ...] = field(default=())

    @classmethod
    def build(cls, task_id: str, attempts, memos=(), skill=None, evaluations=()) -> 'TrajectoryBundle':
        """Create a bundle with solved_at and mode_label derived, then validate it."""
        attempts = tuple(attempts)
        memos = tuple(memos)
        solved_at = next((a.index for a in attempts if a.solved), None)
        bundle = cls(
            task_id=task_id,
            attempts=attempts,
            memos=memos,
            skill=skill,
            solved_at=solved_at,
            mode_label=derive_mode(solved_at, len(memos)),
            evaluations=tuple(evaluations),
        )
        bundle.validate()
        return bundle

    @property
    def k(self) -> int:
        return len(self.attempts)

    @property
    def successful_attempt(self) -> Optional[Attempt]:
        if self.solved_at is None:
            return None
        return self.attempts[self.solved_at - 1]

    @property
    def is_iterative(self) -> bool:
        return self.mode_label is ModeLabel.iterative

    def validate(self) -> None:
        where = f"bundle {self.task_id}"
        if not self.task_id:
            raise InvariantViolation("empty task_id", where)
        if not self.attempts:
            raise InvariantViolation("bundle has no attempts", where)
        for position, attempt in enumerate(self.attempts, start=1):
            if attempt.index != position:
                raise InvariantViolation(
                    f"attempts must be strictly ordered 1..K, found index {attempt.index} at position {position}",
                    where)
            attempt.validate(f"{where} attempt {attempt.index}")
        if len(self.memos) > len(self.attempts):
            raise InvariantViolation(
                f"{len(self.memos)} memos for {len(self.attempts)} attempts", where)
        first_success = next((a.index for a in self.attempts if a.solved), None)
        if self.solved_at != first_success:
            raise InvariantViolation(
                f"solved_at={self.solved_at} but first successful attempt is {first_success}", where)
        if self.solved_at is not None:
            if self.solved_at != len(self.attempts):
                raise InvariantViolation("attempts recorded after the solving attempt", where)
            if len(self.memos) >= self.solved_at:
                raise InvariantViolation(f"memo exists for solving attempt {self.solved_at}", where)
        if self.mode_label != derive_mode(self.solved_at, len(self.memos)):
            raise InvariantViolation(f"mode_label {self.mode_label} inconsistent with history", where)
        keys = [(e.model_id, e.condition) for e in self.evaluations]
        if len(keys) != len(set(keys)):
            raise InvariantViolation("duplicate (model_id, condition) evaluation", where)
        for record in self.evaluations:
            if record.task_id != self.task_id:
                raise InvariantViolation(f"evaluation for foreign task {record.task_id}", where)
            record.validate(f"{where} evaluation {record.model_id}/{record.condition.value}")


def derive_mode(solved_at: Optional[int], memo_count: int) -> Optional[ModeLabel]:
    """interaction_free iff solved on the first attempt with no memos; unsolved bundles carry no label."""
    if solved_at is None:
        return None
    if solved_at == 1 and memo_count == 0:
        return ModeLabel.interaction_free
    return ModeLabel.iterative
