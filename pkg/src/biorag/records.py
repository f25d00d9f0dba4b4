"""Line-delimited JSON record helpers with deterministic formatting."""

from __future__ import annotations

import json
from pathlib import Path


def dump_line(record: dict) -> str:
    """Serialize one record to a canonical single line (sorted keys, LF)."""
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"


def read_jsonl_tolerant(path: Path | str) -> tuple[list[tuple[int, dict]], list[str]]:
    """Read a jsonl file, collecting bad lines as errors instead of raising."""
    records: list[tuple[int, dict]] = []
    errors: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                errors.append(f"line {lineno}: record is not an object")
                continue
            records.append((lineno, obj))
    return records, errors


def read_jsonl(path: Path | str) -> list[dict]:
    """Strict jsonl read; raises on the first malformed line."""
    records, errors = read_jsonl_tolerant(path)
    if errors:
        raise ValueError(f"{path}: {errors[0]}")
    return [record for _, record in records]
