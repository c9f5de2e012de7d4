"""Load and save trajectory bundles.

Layout of a bundle directory (or a .zip archive with the same members):

    bundle.json                 task_id, attempts, solved_at, evaluations
    memos/memo_<i>.md           verbatim memo text after failed attempt i
    skill/SKILL.md              verbatim skill document
    attempts/<i>/stdout.txt     captured output
    attempts/<i>/commands.txt   one command per line, verbatim unless bundle.json sets
                                commands_encoding="escaped" (backslash, LF and CR escaped)
"""
import json
import logging
import re
import zipfile
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Dict, Optional, Union

from pydantic import ValidationError

from errors import (InputError, InvariantViolation, IoFailure, MalformedAttempt, MemoParseFailure,
                    MissingField, TrajectoryError)
from models import Attempt, EvaluationRecord, TrajectoryBundle
from parsers import parse_memo, parse_skill
from schemas import AttemptRecord, BundleFile, EvaluationEntry, TestResult
from utils.file_utils import (ESCAPED, decode_commands, decode_text, encode_commands, needs_escaping,
                              reset_dir, write_text)

logger = logging.getLogger(__name__)

BUNDLE_FILE = "bundle.json"
MEMO_RE = re.compile(r"^memos/memo_(\d+)\.md$")


def parse_reward(value: Union[str, float], location: str) -> float:
    try:
        reward = Decimal(str(value).strip())
    except InvalidOperation as e:
        raise MalformedAttempt(f"reward {value!r} is not a decimal", location) from e
    if not reward.is_finite() or not Decimal(0) <= reward <= Decimal(1):
        raise InvariantViolation(f"reward {value!r} outside [0,1]", location)
    return float(reward)


def format_reward(reward: float) -> str:
    return repr(float(reward))


def _directory_reader(root: Path) -> Callable[[str], Optional[bytes]]:
    def read(member: str) -> Optional[bytes]:
        target = root / member
        if not target.is_file():
            return None
        with open(target, "rb") as f:
            return f.read()
    read.members = lambda: [p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()]
    return read


def _archive_reader(archive: zipfile.ZipFile) -> Callable[[str], Optional[bytes]]:
    names = [n for n in archive.namelist() if not n.endswith("/")]
    # members may sit under one top-level folder
    anchor = next((n for n in names if n.endswith(BUNDLE_FILE)), BUNDLE_FILE)
    prefix = anchor[:-len(BUNDLE_FILE)]
    members = {n[len(prefix):]: n for n in names if n.startswith(prefix)}

    def read(member: str) -> Optional[bytes]:
        name = members.get(member)
        return archive.read(name) if name is not None else None
    read.members = lambda: list(members)
    return read


def _translate_validation_error(error: ValidationError, where: str) -> TrajectoryError:
    first = error.errors()[0]
    field_path = ".".join(str(part) for part in first["loc"])
    location = f"{where}:{field_path}"
    if first["type"] == "missing":
        return MissingField(f"required field {field_path!r} is missing", location)
    if first["loc"] and first["loc"][0] == "attempts":
        return MalformedAttempt(first["msg"], location)
    return MissingField(first["msg"], location)


def _decode_bundle(read, where: str, strict_memos: bool) -> TrajectoryBundle:
    raw = read(BUNDLE_FILE)
    if raw is None:
        raise MissingField(f"{BUNDLE_FILE} not found", where)
    try:
        document = BundleFile.model_validate(json.loads(decode_text(raw)))
    except json.JSONDecodeError as e:
        raise MissingField(f"{BUNDLE_FILE} is not valid JSON: {e}", f"{where}/{BUNDLE_FILE}") from e
    except ValidationError as e:
        raise _translate_validation_error(e, f"{where}/{BUNDLE_FILE}") from e

    escaped = document.commands_encoding == ESCAPED
    attempts = []
    for record in sorted(document.attempts, key=lambda r: r.index):
        base = f"attempts/{record.index}"
        stdout = read(f"{base}/stdout.txt")
        commands = read(f"{base}/commands.txt")
        if stdout is None:
            raise MissingField("stdout.txt missing", f"{where}/{base}")
        if commands is None:
            raise MissingField("commands.txt missing", f"{where}/{base}")
        attempts.append(Attempt(
            index=record.index,
            commands=tuple(decode_commands(decode_text(commands), escaped=escaped)),
            stdout_text=decode_text(stdout),
            reward=parse_reward(record.reward, f"{where}/{BUNDLE_FILE}:attempts[{record.index}].reward"),
            test_summary=tuple((t.name, t.passed) for t in record.test_summary),
            wall_time_sec=record.wall_time_sec,
        ))
    if [a.index for a in attempts] != [r.index for r in document.attempts]:
        raise InvariantViolation("attempts are not strictly ordered by index", f"{where}/{BUNDLE_FILE}")

    memo_files: Dict[int, str] = {}
    for member in read.members():
        match = MEMO_RE.match(member)
        if match:
            memo_files[int(match.group(1))] = member
    if sorted(memo_files) != list(range(1, len(memo_files) + 1)):
        raise InvariantViolation(f"memo files are not numbered 1..n: {sorted(memo_files)}", f"{where}/memos")
    memos = []
    for i in sorted(memo_files):
        try:
            memo, diagnostics = parse_memo(decode_text(read(memo_files[i])), strict=strict_memos)
        except InputError as e:
            raise MemoParseFailure(e.message, f"{where}/{memo_files[i]}") from e
        for location, message in diagnostics.warnings:
            logger.warning("%s/%s %s: %s", where, memo_files[i], location, message)
        memos.append(memo)

    skill_raw = read("skill/SKILL.md")
    skill_text = decode_text(skill_raw) if skill_raw is not None else ""
    skill = parse_skill(skill_text) if skill_text else None

    evaluations = [
        EvaluationRecord(task_id=document.task_id, model_id=e.model_id, condition=e.condition,
                         reward=parse_reward(e.reward, f"{where}/{BUNDLE_FILE}:evaluations.{e.model_id}"))
        for e in document.evaluations
    ]
    try:
        bundle = TrajectoryBundle.build(document.task_id, attempts, memos, skill, evaluations)
    except InvariantViolation as e:
        raise InvariantViolation(e.message, f"{where} ({e.location})") from e
    if document.solved_at is not None and document.solved_at != bundle.solved_at:
        raise InvariantViolation(
            f"declared solved_at={document.solved_at} but rewards give {bundle.solved_at}",
            f"{where}/{BUNDLE_FILE}")
    return bundle


def load_bundle(path: Union[str, Path], strict_memos: bool = False) -> TrajectoryBundle:
    """Load and fully validate one bundle directory or .zip archive."""
    path = Path(path)
    try:
        if path.is_dir():
            return _decode_bundle(_directory_reader(path), str(path), strict_memos)
        if path.is_file() and zipfile.is_zipfile(path):
            with zipfile.ZipFile(path) as archive:
                return _decode_bundle(_archive_reader(archive), str(path), strict_memos)
    except OSError as e:
        raise IoFailure(str(e), str(path)) from e
    raise MissingField("not a bundle directory or archive", str(path))


def save_bundle(bundle: TrajectoryBundle, path: Union[str, Path]) -> None:
    bundle.validate()
    path = Path(path)
    escaped = needs_escaping(c for a in bundle.attempts for c in a.commands)
    document = BundleFile(
        task_id=bundle.task_id,
        attempts=[
            AttemptRecord(
                index=a.index,
                reward=format_reward(a.reward),
                wall_time_sec=a.wall_time_sec,
                test_summary=[TestResult(name=name, passed=passed) for name, passed in a.test_summary],
            )
            for a in bundle.attempts
        ],
        solved_at=bundle.solved_at,
        evaluations=[
            EvaluationEntry(model_id=e.model_id, condition=e.condition, reward=format_reward(e.reward))
            for e in bundle.evaluations
        ],
        commands_encoding=ESCAPED if escaped else None,
    )
    try:
        path.mkdir(parents=True, exist_ok=True)
        for managed in ("memos", "skill", "attempts"):
            reset_dir(path / managed)
        payload = json.dumps(document.model_dump(mode="json", exclude_none=True), indent=2, sort_keys=True)
        write_text(path / BUNDLE_FILE, payload + "\n")
        for i, memo in enumerate(bundle.memos, start=1):
            write_text(path / "memos" / f"memo_{i}.md", memo.raw_text)
        if bundle.skill is not None and bundle.skill.text:
            write_text(path / "skill" / "SKILL.md", bundle.skill.text)
        for attempt in bundle.attempts:
            base = path / "attempts" / str(attempt.index)
            write_text(base / "stdout.txt", attempt.stdout_text)
            write_text(base / "commands.txt", encode_commands(list(attempt.commands), escaped=escaped))
    except OSError as e:
        raise IoFailure(str(e), str(path)) from e
    logger.debug("saved bundle %s to %s", bundle.task_id, path)
