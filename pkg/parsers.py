"""Parsers for exploration memos, SKILL.md documents and verifier sources."""
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import yaml

from errors import EmptyInput, MissingSection, UnterminatedCodeFence
from models import Memo, SkillDocument
from utils.terms import (ATTEMPTS_LOG, COMMANDS, CURRENT_ERROR_PATTERN, MEMO_SECTIONS,
                         NEXT_STRATEGY, VERIFIED_FACTS)

logger = logging.getLogger(__name__)

HEADING_RE = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
MEMO_TITLE_RE = re.compile(r"exploration\s+memo\s*\(\s*(\d+)\s+failed\s+attempts?\s*\)", re.IGNORECASE)
BULLET_RE = re.compile(r"^\s*(?:[-*]|\d+[.)])\s+(.*)$")
NUMBERED_STEP_RE = re.compile(r"^\s*\d+[.)]")
FENCE_RE = re.compile(r"^\s*```")
FRONTMATTER_RE = re.compile(r"\A---[ \t]*\n(.*?)^---[ \t]*(?:\n|\Z)", re.DOTALL | re.MULTILINE)

LIST_SECTIONS = (ATTEMPTS_LOG, VERIFIED_FACTS)
REDACTED = "<REDACTED>"
ASSERTION_RE = re.compile(r"\bassert\w*|\bexpect\w*|\bshould\b", re.IGNORECASE)
LITERAL_RE = re.compile(
    r"""(?P<string>[rRbBuUfF]{0,2}(?:"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*'))"""
    r"""|(?P<number>(?<![\w.])(?:0[xX][0-9a-fA-F]+|\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)(?![\w.]))"""
)
PATH_LITERAL_RE = re.compile(r"^[\w.~-]*/[\w./-]*$|^[\w-]+\.[A-Za-z]\w{0,4}$")


@dataclass
class ParseDiagnostics:
    strict_mode: bool = False
    warnings: List[Tuple[str, str]] = field(default_factory=list)

    def warn(self, location: str, message: str, missing_section: bool = False) -> None:
        if self.strict_mode and missing_section:
            raise MissingSection(message, location)
        logger.debug("%s: %s", location, message)
        self.warnings.append((location, message))


def _match_section(heading: str) -> Optional[str]:
    """Section name a heading belongs to; trailing annotations are tolerated."""
    lowered = heading.strip().lower()
    for name in MEMO_SECTIONS:
        if lowered.startswith(name.lower()):
            return name
    return None


def _bullet_items(lines: List[str]) -> Tuple[str, ...]:
    items: List[str] = []
    for line in lines:
        if not line.strip():
            continue
        bullet = BULLET_RE.match(line)
        if bullet:
            items.append(bullet.group(1).strip())
        elif items:
            items[-1] = f"{items[-1]} {line.strip()}"
        else:
            items.append(line.strip())
    return tuple(items)


def _command_lines(lines: List[str]) -> Tuple[str, ...]:
    commands = []
    for line in lines:
        if not line.strip() or FENCE_RE.match(line):
            continue
        bullet = re.match(r"^\s*[-*]\s+(.*)$", line)
        commands.append((bullet.group(1) if bullet else line).strip())
    return tuple(commands)


def parse_memo(text: str, strict: bool = False) -> Tuple[Memo, ParseDiagnostics]:
    """Parse a five-section exploration memo.

    Sections are found by case-insensitive heading prefix at level >= 2, in any
    order. Missing sections become empty with a warning, or raise MissingSection
    in strict mode.
    """
    diagnostics = ParseDiagnostics(strict_mode=strict)
    if not text or not text.strip():
        raise EmptyInput("memo text is empty", "memo")

    header_count: Optional[int] = None
    found: Dict[str, List[str]] = {}
    current: Optional[str] = None
    in_fence = False
    for number, line in enumerate(text.splitlines(), start=1):
        if FENCE_RE.match(line):
            in_fence = not in_fence
        heading = None if in_fence else HEADING_RE.match(line)
        if heading:
            level, title = len(heading.group(1)), heading.group(2)
            title_match = MEMO_TITLE_RE.search(title)
            if title_match and header_count is None:
                header_count = int(title_match.group(1))
                current = None
                continue
            name = _match_section(title) if level >= 2 else None
            if name and name in found:
                diagnostics.warn(f"line {number}", f"duplicate section {name!r} ignored")
                current = None
            elif name:
                found[name] = []
                current = name
            else:
                current = None
            continue
        if current is not None:
            found[current].append(line)

    for name in MEMO_SECTIONS:
        if name not in found:
            diagnostics.warn("memo", f"missing section {name!r}", missing_section=True)
            found[name] = []

    attempts_log = _bullet_items(found[ATTEMPTS_LOG])
    memo = Memo(
        attempt_count_header=header_count if header_count is not None else len(attempts_log),
        attempts_log=attempts_log,
        commands=_command_lines(found[COMMANDS]),
        verified_facts=_bullet_items(found[VERIFIED_FACTS]),
        current_error_pattern="\n".join(found[CURRENT_ERROR_PATTERN]).strip(),
        next_strategy="\n".join(found[NEXT_STRATEGY]).strip(),
        raw_text=text,
    )
    return memo, diagnostics


def render_memo(attempt_count: int, attempts_log, commands, verified_facts,
                current_error_pattern: str, next_strategy: str) -> str:
    """Render the canonical memo template."""
    lines = [f"## Exploration Memo ({attempt_count} failed attempts)", "", f"### {ATTEMPTS_LOG}"]
    lines += [f"- {item}" for item in attempts_log]
    lines += ["", f"### {COMMANDS} From Last Attempt"]
    lines += list(commands)
    lines += ["", f"### {VERIFIED_FACTS}"]
    lines += [f"- {item}" for item in verified_facts]
    lines += ["", f"### {CURRENT_ERROR_PATTERN}", current_error_pattern,
              "", f"### {NEXT_STRATEGY}", next_strategy, ""]
    return "\n".join(lines)


def rerender(memo: Memo, **changes) -> Memo:
    """Return `memo` with some sections replaced, raw_text regenerated from the template."""
    fields = dict(
        attempt_count=memo.attempt_count_header,
        attempts_log=memo.attempts_log,
        commands=memo.commands,
        verified_facts=memo.verified_facts,
        current_error_pattern=memo.current_error_pattern,
        next_strategy=memo.next_strategy,
    )
    fields.update(changes)
    parsed, _ = parse_memo(render_memo(**fields), strict=True)
    return parsed


def _scan_fences(lines: List[str], diagnostics: Optional[ParseDiagnostics]):
    """Yield (line, inside_fence, is_fence_marker); warn on an unclosed fence."""
    in_fence = False
    for line in lines:
        if FENCE_RE.match(line):
            in_fence = not in_fence
            yield line, in_fence, True
        else:
            yield line, in_fence, False
    if in_fence:
        message = "unterminated code fence"
        if diagnostics is not None and diagnostics.strict_mode:
            raise UnterminatedCodeFence(message, "skill")
        logger.warning("skill: %s", message)
        if diagnostics is not None:
            diagnostics.warnings.append(("skill", message))


def _parse_frontmatter(block: str, diagnostics: Optional[ParseDiagnostics]) -> Dict[str, str]:
    try:
        meta = yaml.safe_load(block) if block.strip() else {}
    except yaml.YAMLError as e:
        meta = None
        logger.warning("skill frontmatter is not valid YAML: %s", e)
    if not isinstance(meta, dict):
        if diagnostics is not None and block.strip():
            diagnostics.warnings.append(("frontmatter", "frontmatter is not a mapping"))
        return {}
    return {str(k): "" if v is None else str(v) for k, v in meta.items()}


def parse_skill(text: str, strict: bool = False,
                diagnostics: Optional[ParseDiagnostics] = None) -> SkillDocument:
    """Parse a SKILL.md: frontmatter, heading sections, fenced code blocks and numbered steps."""
    if diagnostics is None:
        diagnostics = ParseDiagnostics(strict_mode=strict)
    match = FRONTMATTER_RE.match(text)
    frontmatter_text = match.group(0) if match else ""
    frontmatter = _parse_frontmatter(match.group(1), diagnostics) if match else {}
    body = text[len(frontmatter_text):]

    sections: List[Tuple[str, int, List[str]]] = []
    code_blocks: List[str] = []
    block: Optional[List[str]] = None
    steps = 0
    for line, inside, marker in _scan_fences(body.splitlines(), diagnostics):
        if marker:
            if inside:
                block = []
            else:
                code_blocks.append("\n".join(block))
                block = None
        elif inside:
            block.append(line)
        else:
            heading = HEADING_RE.match(line)
            if heading:
                sections.append((heading.group(2), len(heading.group(1)), []))
                continue
            if NUMBERED_STEP_RE.match(line):
                steps += 1
        if sections:
            sections[-1][2].append(line)
    if block is not None:
        code_blocks.append("\n".join(block))

    return SkillDocument(
        frontmatter=frontmatter,
        frontmatter_text=frontmatter_text,
        body_text=body,
        sections=tuple((title, level, "\n".join(lines).strip()) for title, level, lines in sections),
        code_blocks=tuple(code_blocks),
        numbered_step_count=steps,
    )


def strip_code_blocks(text: str) -> str:
    """Text with every fenced block (markers included) removed."""
    return "\n".join(line for line, inside, marker in _scan_fences(text.splitlines(), None)
                     if not inside and not marker)


def fenced_char_count(skill: SkillDocument) -> int:
    return sum(len(block) for block in skill.code_blocks)


def _redact_literal(match: re.Match) -> str:
    if match.group("string"):
        literal = match.group("string")
        content = literal.lstrip("rRbBuUfF")[1:-1]
        if PATH_LITERAL_RE.match(content):
            return literal
    return REDACTED


def redact_answers(verifier_text: str) -> str:
    """Replace string and numeric literals on assertion lines with a placeholder.

    Names, imports and path-like string literals are kept so the structure of the
    verifier stays readable.
    """
    lines = verifier_text.split("\n")
    return "\n".join(LITERAL_RE.sub(_redact_literal, line) if ASSERTION_RE.search(line) else line
                     for line in lines)
