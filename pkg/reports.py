"""CSV and JSON emission of report tables.

CSV output starts with a `# fingerprint: k=v;...` line; JSON output is an object
with `fingerprint` and `rows`. Absent values become empty cells or null.
"""
import json
import math
from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd

from errors import ConfigError, IoFailure, MissingField


def fingerprint_line(fingerprint: Mapping[str, str]) -> str:
    return "# fingerprint: " + ";".join(f"{k}={fingerprint[k]}" for k in sorted(fingerprint)) + "\n"


def _clean(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def to_frame(rows: Sequence[Mapping[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
    """Object-dtype frame so integers stay integers and floats keep their repr."""
    records = [{c: _clean(row.get(c)) for c in columns} for row in rows]
    return pd.DataFrame.from_records(records, columns=list(columns)).astype(object)


def render_csv(frame: pd.DataFrame, fingerprint: Mapping[str, str]) -> str:
    body = frame.to_csv(index=False, na_rep="", lineterminator="\n")
    return fingerprint_line(fingerprint) + body


def render_json(frame: pd.DataFrame, fingerprint: Mapping[str, str]) -> str:
    rows: List[Dict[str, Any]] = [
        {column: _clean(value) for column, value in record.items()}
        for record in frame.to_dict(orient="records")
    ]
    return json.dumps({"fingerprint": dict(fingerprint), "rows": rows}, sort_keys=True, indent=2) + "\n"


def render_table(rows: Sequence[Mapping[str, Any]], columns: Sequence[str], fingerprint: Mapping[str, str],
                 output_format: str = "csv") -> str:
    frame = to_frame(rows, columns)
    if output_format == "csv":
        return render_csv(frame, fingerprint)
    if output_format == "json":
        return render_json(frame, fingerprint)
    raise ConfigError(f"unknown output format {output_format!r}", "output_format")


def read_table(path, required: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Read a CSV written by `render_csv` (or any plain CSV), skipping `#` comment lines."""
    try:
        frame = pd.read_csv(path, comment="#", dtype={"task_id": str, "model_id": str, "group": str},
                            keep_default_na=True)
    except OSError as e:
        raise IoFailure(str(e), str(path)) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MissingField(f"cannot parse table: {e}", str(path)) from e
    missing = [c for c in (required or ()) if c not in frame.columns]
    if missing:
        raise MissingField(f"table lacks columns {missing}", str(path))
    return frame
