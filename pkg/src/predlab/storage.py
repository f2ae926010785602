"""File formats: JSONL event logs, CSV tables, flat key=value configs.

Every output starts with a provenance header (config hash + seed). Writes go
to a temporary file that is renamed into place, so a failed command never
leaves a partial output behind.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .lob import BookSnapshot, OrderEvent


def config_hash(config: dict[str, Any] | str) -> str:
    if not isinstance(config, str):
        config = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(config.encode()).hexdigest()[:16]


@contextlib.contextmanager
def atomic_write(path: str | os.PathLike) -> Iterator[io.TextIOBase]:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    try:
        with open(tmp, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            tmp.unlink()
        raise


# -- event logs ---------------------------------------------------------------

def write_events(path, events: Iterable[OrderEvent], header: dict[str, Any] | None = None) -> None:
    with atomic_write(path) as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True, separators=(",", ":")) + "\n")
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_events(path) -> tuple[list[OrderEvent], dict[str, Any]]:
    """Return (events, header). Blank lines are skipped; the header line is optional."""
    events, header = [], {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "header" in d:
                header = d["header"]
                continue
            events.append(OrderEvent.from_dict(d))
    return events, header


# -- CSV ----------------------------------------------------------------------

def _fmt(v: Any) -> Any:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return v


def write_csv(path, fieldnames: Sequence[str], rows: Iterable[Sequence[Any] | dict[str, Any]],
              header: dict[str, Any] | None = None) -> None:
    """Write a CSV; ``header`` becomes a leading ``# key=value`` comment line. NaN/None -> empty."""
    with atomic_write(path) as fh:
        if header:
            fh.write("# " + " ".join(f"{k}={header[k]}" for k in sorted(header)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(k) for k in fieldnames]
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def snapshot_rows(snapshots: Iterable[BookSnapshot]) -> Iterator[tuple]:
    for snap in snapshots:
        for side_name, levels in (("YES", snap.bids_yes), ("NO", snap.bids_no)):
            for k, (price, qty) in enumerate(levels):
                yield (snap.contract_id, snap.t, k + 1, side_name, price, qty)


SNAPSHOT_FIELDS = ("contract", "t", "level", "side", "price", "qty")


# -- flat config --------------------------------------------------------------

def parse_value(text: str) -> Any:
    text = text.strip()
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_flat_config(path) -> dict[str, Any]:
    """``key = value`` per line; ``#`` starts a comment. Values are parsed as bool/int/float/str."""
    out: dict[str, Any] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = parse_value(value)
    return out
