# src/dmoe/utils/fs_utils.py
"""
File system utilities for dmoe: text files, atomic writes and CSV tables.
"""

from __future__ import annotations

import csv
import io
import math
import os
from pathlib import Path, PurePosixPath
from tempfile import NamedTemporaryFile
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from ..errors import ParseError

# =============================================================================
# Pure helpers
# =============================================================================


def posix(p: Path | str) -> str:
    """Normalize path to POSIX string."""
    return PurePosixPath(str(p)).as_posix()


def format_cell(value: Any) -> str:
    """CSV cell text; floats keep full round-trip precision."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value).lower()
    if value is None:
        return ""
    return str(value)


def parse_cell(text: str) -> Any:
    """Inverse of ``format_cell`` for numbers and booleans; other text is kept."""
    if text in ("true", "false"):
        return text == "true"
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


# =============================================================================
# Text files
# =============================================================================


def read_text(path: Path) -> Optional[str]:
    """Return file contents as text, or None if binary."""
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        return None


def write_text(path: Path, text: str) -> None:
    """Write text to path, creating directories as needed."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def atomic_write_text(path: Path, text: str, prefix: str = ".dmoe.") -> None:
    """Write via a temp file in the same directory and ``os.replace`` it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_dir = path.parent
    with NamedTemporaryFile(
        "w",
        delete=False,
        dir=tmp_dir,
        prefix=prefix,
        suffix=".tmp",
        encoding="utf-8",
    ) as tf:
        tmp_name = tf.name
        tf.write(text)
        tf.flush()
        os.fsync(tf.fileno())

    try:
        os.replace(tmp_name, path)
        # fsync the directory to persist the rename on POSIX
        dir_fd = os.open(tmp_dir, os.O_DIRECTORY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)
    except Exception:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


# =============================================================================
# CSV tables
# =============================================================================


def format_csv(fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: format_cell(row.get(k)) for k in fieldnames})
    return buf.getvalue()


def write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    write_text(path, format_csv(fieldnames, rows))
    return path


def parse_csv(text: str, required: Sequence[str] = ()) -> Tuple[List[str], List[Dict[str, Any]]]:
    """Header and typed rows of a CSV document.

    Raises ParseError (with the 1-based line) on a missing header, a missing
    required column or a row whose cell count differs from the header.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty CSV document", line=1) from None
    except csv.Error as e:
        raise ParseError(str(e), line=1) from e
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}", line=1)

    rows: List[Dict[str, Any]] = []
    try:
        for cells in reader:
            if not cells:
                continue
            if len(cells) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(cells)}",
                    line=reader.line_num,
                )
            rows.append({k: parse_cell(v) for k, v in zip(header, cells)})
    except csv.Error as e:
        raise ParseError(str(e), line=reader.line_num) from e
    return header, rows


def read_csv(path: Path, required: Sequence[str] = ()) -> Tuple[List[str], List[Dict[str, Any]]]:
    text = read_text(path)
    if text is None:
        raise ParseError(f"{posix(path)} is not a text file")
    return parse_csv(text, required)
