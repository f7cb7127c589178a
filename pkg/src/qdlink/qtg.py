"""Binary time-tag file format (.qtg) and its JSON sidecar.

Layout, little-endian throughout:

    header, 16 bytes: magic "QTG1" | version u16 | resolution_ps u16 |
                      record_count u64
    records, 12 bytes each: channel u8 (0 = X, 1 = XX, 2 = background
                      marker, optional) | basis_id u8 | reserved u16 |
                      t_ps u64

Timestamps are in units of resolution_ps (this package always writes 1).
A sidecar JSON at <path>.json carries the basis schedule, the emitter
parameters and the seed; analysis commands need it, raw channel access
does not.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cascade import (
    QDParams,
    RECORD_DTYPE,
    ScheduleEntry,
    StreamHeader,
    TimeTagStream,
)
from .errors import FormatError
from .polmath import StokesVector

MAGIC = b"QTG1"
VERSION = 1
HEADER_STRUCT = struct.Struct("<4sHHQ")
RECORD_SIZE = 12

assert RECORD_DTYPE.itemsize == RECORD_SIZE


def _schedule_to_json(schedule) -> list:
    return [
        {
            "basis_id": e.basis_id,
            "role": e.role,
            "analyzer_x": list(e.analyzer_x.as_array()),
            "analyzer_xx": list(e.analyzer_xx.as_array()),
            "dwell_s": e.dwell_s,
        }
        for e in schedule
    ]


def _schedule_from_json(items) -> tuple:
    return tuple(
        ScheduleEntry(
            basis_id=int(item["basis_id"]),
            role=str(item["role"]),
            analyzer_x=StokesVector.normalized(*item["analyzer_x"]),
            analyzer_xx=StokesVector.normalized(*item["analyzer_xx"]),
            dwell_s=float(item["dwell_s"]),
        )
        for item in items
    )


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(str(path) + ".json")


def write_qtg(path: Union[str, Path], stream: TimeTagStream) -> None:
    """Write records plus the sidecar; byte-identical for identical streams."""
    path = Path(path)
    records = stream.records
    if records.dtype != RECORD_DTYPE:
        records = records.astype(RECORD_DTYPE)
    header = HEADER_STRUCT.pack(
        MAGIC, VERSION, stream.header.resolution_ps, records.size
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())
    meta = {
        "duration_s": stream.header.duration_s,
        "qd": None if stream.header.qd is None else asdict(stream.header.qd),
        "resolution_ps": stream.header.resolution_ps,
        "schedule": _schedule_to_json(stream.header.schedule),
        "seed": stream.header.seed,
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_qtg(path: Union[str, Path], require_sidecar: bool = True) -> TimeTagStream:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_STRUCT.size:
        raise FormatError("file too short for a header")
    magic, version, resolution_ps, count = HEADER_STRUCT.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    body = raw[HEADER_STRUCT.size:]
    if len(body) != count * RECORD_SIZE:
        raise FormatError(
            f"expected {count} records ({count * RECORD_SIZE} bytes), "
            f"found {len(body)} bytes"
        )
    records = np.frombuffer(body, dtype=RECORD_DTYPE).copy()

    side = sidecar_path(path)
    qd: Optional[QDParams] = None
    schedule: tuple = ()
    seed = None
    duration_s = 0.0
    if side.exists():
        meta = json.loads(side.read_text())
        if meta.get("qd") is not None:
            qd = QDParams(**meta["qd"])
        schedule = _schedule_from_json(meta.get("schedule", []))
        seed = meta.get("seed")
        duration_s = float(meta.get("duration_s", 0.0))
    elif require_sidecar:
        raise FormatError(f"sidecar {side} is required but missing")
    header = StreamHeader(
        schedule=schedule,
        qd=qd,
        seed=seed,
        duration_s=duration_s,
        resolution_ps=resolution_ps,
    )
    return TimeTagStream(header=header, records=records)
