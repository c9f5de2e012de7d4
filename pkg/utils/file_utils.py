import os
import re
import shutil
from pathlib import Path
from typing import Iterable, List

# Text is stored as UTF-8; undecodable bytes travel as surrogate escapes so
# captured stdout round-trips byte for byte.
ENCODING = "utf-8"
ERRORS = "surrogateescape"

_ESCAPE_RE = re.compile(r"\\(.)")
_UNESCAPE = {"\\": "\\", "n": "\n", "r": "\r"}


def write_text(path: Path, text: str) -> None:
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(text.encode(ENCODING, ERRORS))


def decode_text(raw: bytes) -> str:
    return raw.decode(ENCODING, ERRORS)


def read_text(path: Path) -> str:
    with open(path, "rb") as f:
        return decode_text(f.read())


ESCAPED = "escaped"


def needs_escaping(commands: Iterable[str]) -> bool:
    return any("\n" in c or "\r" in c for c in commands)


def encode_commands(commands: List[str], escaped: bool = False) -> str:
    """One command per line. With `escaped`, backslash, CR and LF inside a command are escaped."""
    if escaped:
        commands = [c.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r") for c in commands]
    elif needs_escaping(commands):
        raise ValueError("multi-line command needs the escaped encoding")
    return "".join(f"{c}\n" for c in commands)


def decode_commands(text: str, escaped: bool = False) -> List[str]:
    """Plain files are taken verbatim, one command per line."""
    if not text:
        return []
    lines = text.split("\n")
    if lines[-1] == "":
        lines = lines[:-1]
    if not escaped:
        return lines
    return [_ESCAPE_RE.sub(lambda m: _UNESCAPE.get(m.group(1), m.group(0)), line) for line in lines]


def reset_dir(path: Path) -> None:
    """Remove a managed bundle subdirectory before it is rewritten."""
    if path.is_dir():
        shutil.rmtree(path)
