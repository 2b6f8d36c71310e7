"""
Common utility functions shared across the uptake toolkit.

This module contains reusable functions for file reading and writing, hashing,
logging setup and progress bars used by the library modules and by
`control.py`.

Usage:
    from common_utils import DataError, read_jsonl, write_jsonl, create_progress_bar
"""

import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Dict, Generator, Iterable, List, Optional, Sequence, Tuple

# Third-party imports
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from tqdm import tqdm

# Local imports
from config import DEBUG_SETTINGS

logger = logging.getLogger(__name__)

_progress_enabled = DEBUG_SETTINGS['show_progress_bars']


class DataError(ValueError):
    """Malformed or inconsistent input data, optionally tied to a file line."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(self.__str__())

    def __str__(self) -> str:
        location = ""
        if self.path is not None:
            location = f"{self.path}:"
            if self.line is not None:
                location += f"{self.line}:"
            location += " "
        elif self.line is not None:
            location = f"line {self.line}: "
        return f"{location}{self.message}"


# --- Logging and Progress Utilities ---

def setup_logging(level: Optional[str] = None, quiet: bool = False) -> None:
    """
    Configure root logging to a rich handler on stderr.

    Args:
        level (str, optional): Log level name. Defaults to DEBUG_SETTINGS['log_level'].
        quiet (bool): Disable progress bars and lower verbosity to warnings.
    """
    global _progress_enabled
    level = (level or DEBUG_SETTINGS['log_level']).upper()
    if quiet:
        level = "WARNING"
        _progress_enabled = False

    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter(DEBUG_SETTINGS['log_format']))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)


def create_progress_bar(iterable: Iterable, description: str = "Processing",
                        total: Optional[int] = None) -> tqdm:
    """
    Create a progress bar for an iterable.

    Args:
        iterable: The iterable to wrap
        description (str): Description for the progress bar
        total (int, optional): Length hint when the iterable has no len()

    Returns:
        tqdm: Progress bar instance (silent when progress bars are disabled)
    """
    return tqdm(iterable, desc=description, total=total, disable=not _progress_enabled,
                leave=False)


def get_current_timestamp() -> str:
    """
    Get current UTC timestamp as ISO string.

    Returns:
        str: Current timestamp in ISO format
    """
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


# --- Hashing Utilities ---

def file_sha256(filepath: str) -> str:
    """Return the hex SHA-256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(filepath, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def stable_hash_int(*parts: Any) -> int:
    """
    Derive a 64-bit integer from the given parts, stable across processes.

    Python's built-in hash() is salted per process, so per-item random
    generators are seeded from this instead.
    """
    text = "\x1f".join(str(part) for part in parts)
    return int.from_bytes(hashlib.sha256(text.encode('utf-8')).digest()[:8], 'big')


def canonical_json(data: Any) -> str:
    """Serialize to JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


# --- File Operations ---

def ensure_parent_dir(filepath: str) -> None:
    """Create the directory that will hold `filepath` if it is missing."""
    parent = os.path.dirname(os.path.abspath(filepath))
    os.makedirs(parent, exist_ok=True)


def read_jsonl(filepath: str) -> Generator[Tuple[int, Dict[str, Any]], None, None]:
    """
    Read a JSONL file, yielding (line_number, object) pairs.

    Blank lines are skipped. Any line that is not a JSON object raises a
    DataError carrying the file path and line number.

    Args:
        filepath (str): Path to JSONL file

    Yields:
        tuple: (line_number, parsed object)
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Data file not found at '{filepath}'")

    with open(filepath, 'r', encoding='utf-8') as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed JSON: {e.msg}", filepath, line_num) from e
            if not isinstance(record, dict):
                raise DataError("expected a JSON object", filepath, line_num)
            yield line_num, record


def write_jsonl(filepath: str, records: Iterable[Dict[str, Any]]) -> int:
    """
    Write records to a JSONL file, one object per line.

    Args:
        filepath (str): Output path
        records: Iterable of JSON-serializable dictionaries

    Returns:
        int: Number of records written
    """
    ensure_parent_dir(filepath)
    count = 0
    with open(filepath, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + '\n')
            count += 1
    return count


def read_csv_rows(filepath: str, required_columns: Sequence[str]) -> List[Tuple[int, Dict[str, str]]]:
    """
    Read a CSV file as strings, checking the header.

    Args:
        filepath (str): Path to CSV file
        required_columns: Column names that must be present in the header

    Returns:
        list: (line_number, row) pairs, where line 1 is the header
    """
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Data file not found at '{filepath}'")
    if os.path.getsize(filepath) == 0:
        return []

    try:
        frame = pd.read_csv(filepath, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"could not parse CSV: {e}", filepath) from e

    missing = [col for col in required_columns if col not in frame.columns]
    if missing:
        raise DataError(f"missing column(s) {', '.join(missing)} in header", filepath, 1)

    rows = []
    for offset, record in enumerate(frame.to_dict(orient='records')):
        rows.append((offset + 2, {key: value.strip() for key, value in record.items()}))
    return rows


def write_csv_table(filepath: str, frame: pd.DataFrame, float_format: str = "%.12g") -> None:
    """Write a DataFrame as CSV with a fixed float format and empty missing cells."""
    ensure_parent_dir(filepath)
    frame.to_csv(filepath, index=False, float_format=float_format, na_rep="", lineterminator='\n')


def write_json(filepath: str, data: Any) -> None:
    """Write pretty-printed JSON with sorted keys."""
    ensure_parent_dir(filepath)
    with open(filepath, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write('\n')


def read_json(filepath: str) -> Any:
    """Read a JSON document, raising DataError on malformed content."""
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Data file not found at '{filepath}'")
    with open(filepath, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"malformed JSON: {e.msg}", filepath, e.lineno) from e


# --- Data Processing Utilities ---

def split_csv_option(value: Optional[str]) -> List[str]:
    """Split a comma-separated option value into trimmed, non-empty items."""
    if not value:
        return []
    if isinstance(value, (list, tuple)):
        return [str(item).strip() for item in value if str(item).strip()]
    return [item.strip() for item in value.split(',') if item.strip()]
