"""
Output-directory persistence: atomic JSON and CSV writes, line-aware readers
and the per-directory artifact catalog.
"""

import io
import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel

from acflab.errors import MissingInputError, OutputError, ParseError

logger = logging.getLogger(__name__)

CATALOG_NAME = "catalog.json"
_LINE_RE = re.compile(r"line (\d+)")


def ensure_output_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create output directory {out}: {e}") from None
    if not os.access(out, os.W_OK):
        raise OutputError(f"output directory {out} is not writable")
    return out


def _atomic_write(path: Path, text: str) -> None:
    """Write via a sibling tmp file and os.replace."""
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp_path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from None


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"
    _atomic_write(path, text)
    return path


def write_csv(path, df: pd.DataFrame, comment: Optional[str] = None) -> Path:
    """UTF-8, LF line endings, header always, optional leading '# ' comment line."""
    path = Path(path)
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    df.to_csv(buf, index=False, lineterminator="\n")
    _atomic_write(path, buf.getvalue())
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    _atomic_write(path, text)
    return path


# ============================================================================
# Readers
# ============================================================================

def require_inputs(out_dir, names: List[str]) -> None:
    out = Path(out_dir)
    missing = [n for n in names if not (out / n).is_file()]
    if missing:
        raise MissingInputError(missing)


def read_json(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError([path.name])
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path.name}: {e.msg}", line=e.lineno) from None


def read_comment(path) -> Optional[str]:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    return first[1:].strip() if first.startswith("#") else None


def read_csv(path, numeric: Tuple[str, ...] = ()) -> pd.DataFrame:
    """
    Read a CSV written by write_csv. Columns named in ``numeric`` must parse
    as finite numbers; failures report the 1-based file line.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError([path.name])
    offset = 1 if read_comment(path) is not None else 0
    try:
        df = pd.read_csv(path, comment=None, skiprows=offset, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path.name} is empty", line=1 + offset) from None
    except pd.errors.ParserError as e:
        m = _LINE_RE.search(str(e))
        line = int(m.group(1)) + offset if m else None
        raise ParseError(f"{path.name}: malformed row", line=line) from None

    for col in numeric:
        if col not in df.columns:
            raise ParseError(f"{path.name} lacks column {col!r}", line=1 + offset)
        values = pd.to_numeric(df[col], errors="coerce")
        bad = values.isna() | ~values.abs().lt(float("inf"))
        if bad.any():
            row = int(bad.to_numpy().nonzero()[0][0])
            # header is line 1 (after any comment)
            raise ParseError(
                f"{path.name}: column {col!r} value {df[col].iloc[row]!r} is not a number",
                line=row + 2 + offset,
            )
        df[col] = values.astype(float)
    return df


def parse_comment_fields(comment: Optional[str]) -> Dict[str, str]:
    """'seed=7 calibration=x' -> {'seed': '7', 'calibration': 'x'}."""
    if not comment:
        return {}
    fields = {}
    for token in comment.split():
        if "=" in token:
            k, v = token.split("=", 1)
            fields[k] = v
    return fields


# ============================================================================
# Catalog
# ============================================================================

def load_catalog(out_dir) -> Dict[str, Any]:
    """Load catalog.json if it exists, else return an empty catalog."""
    path = Path(out_dir) / CATALOG_NAME
    if not path.exists():
        return {"commands": {}}
    return read_json(path)


def register_artifacts(out_dir, command: str, artifacts: List[str]) -> None:
    """Record which files a command produced. No timestamps, so reruns leave it unchanged."""
    catalog = load_catalog(out_dir)
    catalog.setdefault("commands", {})[command] = sorted(set(artifacts))
    write_json(Path(out_dir) / CATALOG_NAME, catalog)
    logger.debug("catalog: %s -> %s", command, sorted(set(artifacts)))
