"""
Load session click events from a CSV byte stream.

Expected columns (no quoting, comma separated):
    session_id  – opaque, non-empty
    timestamp   – integer seconds since epoch, >= 0
    item_id     – opaque, non-empty

A header row is optional; it is recognised by a non-numeric timestamp field in
the first data row. Lines starting with '#' are comments.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import pandas as pd

from app.config import MAX_MALFORMED_SHARE
from app.errors import FormatError

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ["session_id", "timestamp", "item_id"]


@dataclass(frozen=True)
class RawEvent:
    session_id: str
    timestamp: int
    item_id: str

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise FormatError(f"Negative timestamp {self.timestamp} in session {self.session_id!r}")
        if not self.session_id or not self.item_id:
            raise FormatError(f"Empty session_id or item_id in event {self!r}")


def _read_bytes(source: str | Path | bytes | BinaryIO) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def load_frame(source: str | Path | bytes | BinaryIO) -> tuple[pd.DataFrame, int]:
    """
    Parse the CSV into a DataFrame [session_id, timestamp, item_id] in file order.

    Returns the frame and the number of malformed rows that were skipped.
    """
    raw = _read_bytes(source)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"Input is not UTF-8 text: {exc}") from exc

    lines = pd.Series(text.splitlines(), dtype=object)
    if lines.empty:
        raise FormatError("no events parsed")
    lines.index = lines.index + 1  # 1-based line numbers

    stripped = lines.str.strip()
    lines = stripped[(stripped != "") & ~stripped.str.startswith("#")]
    if lines.empty:
        raise FormatError("no events parsed")

    n_fields = lines.str.count(",") + 1
    parts = lines.str.split(",", n=2, expand=True).reindex(columns=range(3)).fillna("")
    parts.columns = EVENT_COLUMNS
    parts = parts.apply(lambda col: col.astype(str).str.strip())

    ts = pd.to_numeric(parts["timestamp"], errors="coerce")

    # Header: first data row with a non-numeric timestamp
    first = lines.index[0]
    if pd.isna(ts.loc[first]) and n_fields.loc[first] == 3:
        lines, parts, ts, n_fields = (
            lines.drop(first), parts.drop(first), ts.drop(first), n_fields.drop(first)
        )
        if lines.empty:
            raise FormatError("no events parsed")

    valid = (
        (n_fields == 3)
        & ts.notna()
        & (ts >= 0)
        & (ts == ts.round())
        & parts["session_id"].ne("")
        & parts["item_id"].ne("")
    )
    malformed = int((~valid).sum())

    if malformed:
        bad_line = int(valid[~valid].index[0])
        share = malformed / len(valid)
        if share > MAX_MALFORMED_SHARE:
            raise FormatError(
                f"{malformed} of {len(valid)} rows are malformed ({share:.0%}); "
                f"first bad line {bad_line}: {lines.loc[bad_line]!r}"
            )
        logger.warning("Skipped %d malformed row(s); first at line %d", malformed, bad_line)

    df = parts[valid].copy()
    df["timestamp"] = ts[valid].astype("int64")
    if df.empty:
        raise FormatError("no events parsed")
    return df.reset_index(drop=True), malformed


def parse_events(source: str | Path | bytes | BinaryIO) -> list[RawEvent]:
    """Parse CSV events in file order."""
    df, _ = load_frame(source)
    return [
        RawEvent(session_id=s, timestamp=int(t), item_id=i)
        for s, t, i in zip(df["session_id"], df["timestamp"], df["item_id"])
    ]


def events_to_frame(events: Iterable[RawEvent] | pd.DataFrame) -> pd.DataFrame:
    """Normalise events (list of RawEvent or an already parsed frame) to a DataFrame."""
    if isinstance(events, pd.DataFrame):
        df = events[EVENT_COLUMNS].copy()
    else:
        df = pd.DataFrame(
            [(e.session_id, e.timestamp, e.item_id) for e in events], columns=EVENT_COLUMNS
        )
    df["session_id"] = df["session_id"].astype(str)
    df["item_id"] = df["item_id"].astype(str)
    df["timestamp"] = df["timestamp"].astype("int64")
    return df


def write_events_csv(
    events: Iterable[RawEvent],
    path: str | Path | None = None,
    header_comment: dict | None = None,
) -> bytes:
    """
    Serialise events to CSV with a header row.

    `header_comment` entries are written first as `# key=value` lines.
    Returns the bytes written (and writes them to `path` when given).
    """
    buf = io.StringIO()
    for key, value in (header_comment or {}).items():
        buf.write(f"# {key}={value}\n")
    events_to_frame(events).to_csv(buf, index=False, lineterminator="\n")
    data = buf.getvalue().encode("utf-8")
    if path is not None:
        Path(path).write_bytes(data)
    return data
