"""Line-delimited JSON record files and bit-exact array encoding.

Every on-disk artifact in this package (datasets, masks, transforms, model
checkpoints, adversarial sets) is a text file of one JSON object per line.
The first line is a header object carrying file-level fields; the remaining
lines are records. Numeric arrays are embedded as base64 of their raw
little-endian bytes so round trips are bit-exact across platforms.
"""

from __future__ import annotations

import base64
import json

import numpy as np


class RecordError(ValueError):
    """Malformed record file. Message names the offending line."""


def dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_records(path, header: dict, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_line(header) + "\n")
        for rec in records:
            fh.write(dump_line(rec) + "\n")


def read_records(path) -> tuple[dict, list[dict]]:
    """Read header + records, raising RecordError with a 1-based line number."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}: line {lineno}: not valid JSON ({exc.msg})")
            if not isinstance(obj, dict):
                raise RecordError(f"{path}: line {lineno}: expected a JSON object")
            rows.append(obj)
    if not rows:
        raise RecordError(f"{path}: empty file, expected a header line")
    return rows[0], rows[1:]


# Canonical dtype strings include byte order, e.g. "<f8", "|u1".

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    if a.dtype.byteorder == ">":  # store little-endian always
        a = a.astype(a.dtype.newbyteorder("<"))
    return {
        "shape": list(a.shape),
        "dtype": a.dtype.str,
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"])
        arr = np.frombuffer(raw, dtype=np.dtype(d["dtype"]))
        return arr.reshape(d["shape"]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"bad array record: {exc}")
