"""Pydantic schema of bundle.json (field names are part of the on-disk format)."""
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from utils.terms import Condition


class TestResult(BaseModel):
    name: str
    passed: bool


class AttemptRecord(BaseModel):
    index: int
    reward: Union[str, float]  # decimal string on write, exact parse on read
    wall_time_sec: Optional[float] = None
    test_summary: List[TestResult] = Field(default_factory=list)


class EvaluationEntry(BaseModel):
    model_id: str
    condition: Condition
    reward: Union[str, float]


class BundleFile(BaseModel):
    model_config = ConfigDict(extra="ignore")

    task_id: str
    attempts: List[AttemptRecord]
    solved_at: Optional[int] = None
    evaluations: List[EvaluationEntry] = Field(default_factory=list)
    # set only when commands.txt escapes multi-line commands; plain files are verbatim lines
    commands_encoding: Optional[Literal["escaped"]] = None
