"""Curated onion lists (CSV) to observation streams.

A list file has a header row; ``SourceSpec.column_map`` says which columns
hold the alias, the onion URI and, optionally, a per-row timestamp.
Successive snapshots of the same list are compared with :func:`diff_lists`,
which emits only the rows the canonicalizer needs to see again (new
aliases and changed URIs).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .canonicalizer import Observation
from .core import Timestamp14, canonicalize_uri

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {"alias": "alias", "uri": "onion_uri"}


class MissingColumn(KeyError):
    pass


class NoTimestampAvailable(ValueError):
    pass


@dataclass
class SourceSpec:
    source_tag: str
    format: str = "csv"
    column_map: Dict[str, Union[str, int]] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    default_observed_at: Optional[str] = None

    def __post_init__(self):
        if self.format not in ("csv", "change_log"):
            raise ValueError(f"unknown source format {self.format!r}")
        if self.format == "csv":
            missing = {"alias", "uri"} - set(self.column_map)
            if missing:
                raise MissingColumn(f"column_map lacks {sorted(missing)}")
        if self.default_observed_at is not None:
            self.default_observed_at = Timestamp14(self.default_observed_at)


@dataclass
class Issue:
    """A row that was skipped or an entry that disappeared between snapshots."""

    kind: str
    detail: str
    row: Optional[int] = None
    alias: Optional[str] = None
    uri: Optional[str] = None

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _column_index(header: Sequence[str], key) -> int:
    if isinstance(key, int):
        if key >= len(header):
            raise MissingColumn(f"column {key} out of range")
        return key
    try:
        return list(header).index(key)
    except ValueError:
        raise MissingColumn(f"no column named {key!r}") from None


def _as_uri(cell: str) -> str:
    cell = cell.strip()
    return cell if "://" in cell else "http://" + cell


def parse_list(file, spec: SourceSpec, report: Optional[List[Issue]] = None) -> List[Observation]:
    """Parse a list file into observations, one per valid onion row.

    ``file`` is a path, or an open text stream. Rows with surface hosts or
    malformed onions are appended to ``report`` and otherwise skipped.
    """
    if report is None:
        report = []
    if isinstance(file, (str, Path)):
        with open(file, encoding="utf-8", newline="") as fh:
            return parse_list(fh, spec, report)
    if isinstance(file, bytes):
        file = io.StringIO(file.decode("utf-8"))

    rows = csv.reader(file)
    header = next(rows, None)
    if header is None:
        return []
    alias_idx = _column_index(header, spec.column_map["alias"])
    uri_idx = _column_index(header, spec.column_map["uri"])
    ts_idx = None
    if "observed_at" in spec.column_map:
        ts_idx = _column_index(header, spec.column_map["observed_at"])
    elif spec.default_observed_at is None:
        raise NoTimestampAvailable("no observed_at column and no default timestamp")

    out = []
    for rowno, row in enumerate(rows, 2):
        if not any(cell.strip() for cell in row):
            continue
        try:
            alias = row[alias_idx].strip()
            raw_uri = row[uri_idx]
            observed_at = spec.default_observed_at
            if ts_idx is not None and row[ts_idx].strip():
                observed_at = Timestamp14(row[ts_idx].strip())
            if observed_at is None:
                raise NoTimestampAvailable("row has no timestamp and there is no default")
            out.append(Observation(canonicalize_uri(_as_uri(raw_uri)), spec.source_tag, alias, observed_at))
        except IndexError:
            report.append(Issue("skipped", "short row", row=rowno))
        except ValueError as exc:
            report.append(
                Issue("skipped", f"{type(exc).__name__}: {exc}", row=rowno, alias=row[alias_idx] if len(row) > alias_idx else None,
                      uri=row[uri_idx] if len(row) > uri_idx else None)
            )
    for issue in report:
        log.debug("list %s: %s", spec.source_tag, issue.to_json())
    return out


def diff_lists(
    old: Iterable[Observation], new: Iterable[Observation], report: Optional[List[Issue]] = None
) -> List[Observation]:
    """Observations for aliases that are new or whose URI changed.

    Lists are keyed by alias (last row wins on duplicates). Removed aliases
    are reported only. The result is sorted by alias so that row order in
    either list does not matter.
    """
    if report is None:
        report = []
    before = {o.alias: o for o in old}
    after = {o.alias: o for o in new}
    emitted = []
    for alias in sorted(after):
        obs = after[alias]
        prev = before.get(alias)
        if prev is None or prev.uri.onion != obs.uri.onion:
            emitted.append(obs)
    for alias in sorted(set(before) - set(after)):
        report.append(Issue("removed", "alias no longer listed", alias=alias, uri=str(before[alias].uri)))
    return emitted


def ingest_history(
    snapshots: Iterable[Tuple[str, object]], spec: SourceSpec, report: Optional[List[Issue]] = None
) -> List[Observation]:
    """Turn a time-ordered series of list snapshots into one observation stream.

    Each snapshot is ``(timestamp, file)``; the timestamp becomes the default
    observation time for its rows. The first snapshot is emitted in full,
    later ones through :func:`diff_lists`.
    """
    stream: List[Observation] = []
    previous: Optional[List[Observation]] = None
    for ts, file in snapshots:
        snap_spec = SourceSpec(spec.source_tag, "csv", dict(spec.column_map), ts)
        current = parse_list(file, snap_spec, report)
        stream.extend(current if previous is None else diff_lists(previous, current, report))
        previous = current
    return stream


def write_list(path_or_stream, rows: Iterable[Tuple[str, str]], columns=("alias", "onion_uri")):
    """Write ``(alias, uri)`` rows as a list file (used by fixtures and demos)."""
    if isinstance(path_or_stream, (str, Path)):
        with open(path_or_stream, "w", encoding="utf-8", newline="") as fh:
            return write_list(fh, rows, columns)
    writer = csv.writer(path_or_stream, lineterminator="\r\n")
    writer.writerow(columns)
    for alias, uri in rows:
        writer.writerow([alias, uri])
