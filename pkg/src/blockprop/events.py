"""Replay ingestion: parse, validate and normalize platform events.

The canonical input is an NDJSON replay file, one record per line::

    {"id": "e1", "kind": "post", "action": "create", "actor": "u1",
     "ts": "2024-06-01T12:00:00Z", "text": "hello", "langs": ["en"]}

Malformed lines are counted and skipped. Events are sorted by
``(timestamp, event_id)`` and deduplicated by ``event_id`` with the first
occurrence in sorted order winning, so the result does not depend on the
order of lines in the input.
"""

from __future__ import annotations

import calendar
import io
import json
import logging
import os
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from functools import cached_property
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

KINDS = ("post", "reply", "repost", "like", "follow", "block")
ACTIONS = ("create", "delete")
TOX_KEYS = (
    "identity_attack",
    "insult",
    "obscene",
    "toxicity",
    "severe_toxicity",
    "threat",
    "sexually_explicit",
)
# Kinds that must name a target user on create.
TARGETED_KINDS = frozenset({"follow", "block", "like", "repost", "reply"})
TEXT_KINDS = frozenset({"post", "reply"})

KIND_CODE = {k: i for i, k in enumerate(KINDS)}
ACTION_CODE = {a: i for i, a in enumerate(ACTIONS)}

_MICRO = 1_000_000
_DAY_US = 86_400 * _MICRO

_RFC3339 = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt ](\d{2}):(\d{2}):(\d{2})(\.\d+)?"
    r"([Zz]|[+-]\d{2}:\d{2})$"
)


class IngestionError(Exception):
    """The replay stream could not be read."""


class CorruptInputError(IngestionError):
    """More than half of the lines are malformed; probably not a replay file."""


class MalformedRecord(ValueError):
    pass


def parse_timestamp(text: str) -> int:
    """Parse an RFC 3339 timestamp into integer microseconds since the epoch (UTC)."""
    m = _RFC3339.match(text)
    if m is None:
        raise MalformedRecord(f"bad timestamp {text!r}")
    year, month, day, hour, minute, second = (int(m.group(i)) for i in range(1, 7))
    frac = m.group(7)
    micros = int((frac[1:] + "000000")[:6]) if frac else 0
    try:
        # validates ranges (month 13, Feb 30, ...)
        datetime(year, month, day, hour, minute, min(second, 59))
    except ValueError as exc:
        raise MalformedRecord(f"bad timestamp {text!r}") from exc
    if second > 60:
        raise MalformedRecord(f"bad timestamp {text!r}")
    secs = calendar.timegm((year, month, day, hour, minute, second, 0, 0, 0))
    off = m.group(8)
    if off not in ("Z", "z"):
        sign = 1 if off[0] == "+" else -1
        secs -= sign * (int(off[1:3]) * 3600 + int(off[4:6]) * 60)
    return secs * _MICRO + micros


def format_timestamp(ts_us: int) -> str:
    secs, micros = divmod(ts_us, _MICRO)
    base = datetime(1970, 1, 1) + timedelta(seconds=secs)
    out = base.strftime("%Y-%m-%dT%H:%M:%S")
    if micros:
        out += f".{micros:06d}"
    return out + "Z"


@dataclass(frozen=True)
class TimeWindow:
    """Half-open UTC interval ``[start, end)`` in microseconds."""

    start_us: int
    end_us: int

    def __post_init__(self):
        if self.end_us <= self.start_us:
            raise ValueError("window end must be after start")

    @classmethod
    def from_strings(cls, start: str, end: str) -> "TimeWindow":
        return cls(parse_timestamp(_as_rfc3339(start)), parse_timestamp(_as_rfc3339(end)))

    @classmethod
    def from_days(cls, start: str, days: int) -> "TimeWindow":
        s = parse_timestamp(_as_rfc3339(start))
        return cls(s, s + days * _DAY_US)

    def __contains__(self, ts_us: int) -> bool:
        return self.start_us <= ts_us < self.end_us

    def days(self) -> list[date]:
        first = _day_of(self.start_us)
        last = _day_of(self.end_us - 1)
        return [first + timedelta(days=i) for i in range((last - first).days + 1)]

    def as_dict(self) -> dict:
        return {"start": format_timestamp(self.start_us), "end": format_timestamp(self.end_us)}


def _as_rfc3339(text: str) -> str:
    # bare dates are accepted for config convenience
    if re.fullmatch(r"\d{4}-\d{2}-\d{2}", text):
        return text + "T00:00:00Z"
    return text


def _day_of(ts_us: int) -> date:
    return date(1970, 1, 1) + timedelta(days=ts_us // _DAY_US)


@dataclass(frozen=True, slots=True)
class Event:
    event_id: str
    kind: str
    action: str
    actor: str
    ts_us: int
    subject_user: str | None = None
    subject_ref: str | None = None
    text: str | None = None
    declared_lang: tuple[str, ...] = ()
    urls: tuple[str, ...] = ()
    tox: tuple[float, ...] | None = None

    @property
    def timestamp(self) -> datetime:
        return datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(microseconds=self.ts_us)

    @property
    def is_original_post(self) -> bool:
        return self.action == "create" and self.kind in TEXT_KINDS

    def to_record(self) -> dict:
        rec = {
            "id": self.event_id,
            "kind": self.kind,
            "action": self.action,
            "actor": self.actor,
            "ts": format_timestamp(self.ts_us),
        }
        if self.subject_user is not None:
            rec["subject"] = self.subject_user
        if self.subject_ref is not None:
            rec["ref"] = self.subject_ref
        if self.text is not None:
            rec["text"] = self.text
        if self.declared_lang:
            rec["langs"] = list(self.declared_lang)
        if self.urls:
            rec["urls"] = list(self.urls)
        if self.tox is not None:
            rec["tox"] = dict(zip(TOX_KEYS, self.tox))
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _opt_str(rec: dict, key: str) -> str | None:
    val = rec.get(key)
    if val is None:
        return None
    if not isinstance(val, str):
        raise MalformedRecord(f"{key} must be a string")
    return val


def _str_list(rec: dict, key: str) -> tuple[str, ...]:
    val = rec.get(key)
    if val is None:
        return ()
    if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
        raise MalformedRecord(f"{key} must be a list of strings")
    return tuple(val)


def _tox(rec: dict) -> tuple[float, ...] | None:
    val = rec.get("tox")
    if val is None:
        return None
    if not isinstance(val, dict):
        raise MalformedRecord("tox must be an object")
    out = []
    for key in TOX_KEYS:
        x = val.get(key)
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise MalformedRecord(f"tox.{key} missing or not a number")
        x = float(x)
        if not (0.0 <= x <= 1.0):
            raise MalformedRecord(f"tox.{key} outside [0, 1]")
        out.append(x)
    return tuple(out)


def event_from_record(rec) -> Event:
    """Validate one decoded wire record and build an :class:`Event`."""
    if not isinstance(rec, dict):
        raise MalformedRecord("record is not an object")
    for key in ("id", "kind", "action", "actor", "ts"):
        if not isinstance(rec.get(key), str):
            raise MalformedRecord(f"missing or non-string {key!r}")
    kind, action = rec["kind"], rec["action"]
    if kind not in KIND_CODE:
        raise MalformedRecord(f"unknown kind {kind!r}")
    if action not in ACTION_CODE:
        raise MalformedRecord(f"unknown action {action!r}")
    if not rec["id"] or not rec["actor"]:
        raise MalformedRecord("empty id or actor")
    subject = _opt_str(rec, "subject")
    text = _opt_str(rec, "text")
    if action == "create" and kind in TARGETED_KINDS and not subject:
        raise MalformedRecord(f"{kind} create without subject")
    if text is not None and not (action == "create" and kind in TEXT_KINDS):
        raise MalformedRecord("text only allowed on post/reply creates")
    if text is None and action == "create" and kind in TEXT_KINDS:
        text = ""
    return Event(
        event_id=rec["id"],
        kind=kind,
        action=action,
        actor=rec["actor"],
        ts_us=parse_timestamp(rec["ts"]),
        subject_user=subject,
        subject_ref=_opt_str(rec, "ref"),
        text=text,
        declared_lang=_str_list(rec, "langs"),
        urls=_str_list(rec, "urls"),
        tox=_tox(rec),
    )


def parse_line(line: bytes) -> Event:
    try:
        rec = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedRecord(str(exc)) from exc
    return event_from_record(rec)


@dataclass(frozen=True)
class ParseStats:
    lines: int = 0
    malformed: int = 0
    out_of_window: int = 0
    duplicates: int = 0


@dataclass(frozen=True, eq=False)
class EventLog:
    """Immutable, time-ordered, deduplicated sequence of events.

    Columnar views (integer codes, user indices) are computed lazily and
    cached; they are what the feature and graph code consume.
    """

    events: tuple[Event, ...]
    window: TimeWindow | None = None
    stats: ParseStats = field(default_factory=ParseStats)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __getitem__(self, i):
        return self.events[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return self.window == other.window and self.events == other.events

    __hash__ = None

    @classmethod
    def from_events(cls, events: Iterable[Event], window: TimeWindow | None = None) -> "EventLog":
        """Normalize an arbitrary event collection (filter, sort, dedup)."""
        kept = [e for e in events if window is None or e.ts_us in window]
        log, _ = _normalize(kept, window)
        return log

    # columnar views -----------------------------------------------------

    @cached_property
    def users(self) -> tuple[str, ...]:
        """Sorted distinct user ids (actors and subjects)."""
        names = {e.actor for e in self.events}
        names.update(e.subject_user for e in self.events if e.subject_user is not None)
        return tuple(sorted(names))

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    @cached_property
    def kind_code(self) -> np.ndarray:
        return np.fromiter((KIND_CODE[e.kind] for e in self.events), dtype=np.int8, count=len(self))

    @cached_property
    def action_code(self) -> np.ndarray:
        return np.fromiter((ACTION_CODE[e.action] for e in self.events), dtype=np.int8, count=len(self))

    @cached_property
    def actor_idx(self) -> np.ndarray:
        idx = self.user_index
        return np.fromiter((idx[e.actor] for e in self.events), dtype=np.int64, count=len(self))

    @cached_property
    def subject_idx(self) -> np.ndarray:
        """Index of ``subject_user`` or -1."""
        idx = self.user_index
        return np.fromiter(
            (idx[e.subject_user] if e.subject_user is not None else -1 for e in self.events),
            dtype=np.int64,
            count=len(self),
        )

    @cached_property
    def ts_us(self) -> np.ndarray:
        return np.fromiter((e.ts_us for e in self.events), dtype=np.int64, count=len(self))

    def mask(self, kind: str | Sequence[str], action: str = "create") -> np.ndarray:
        kinds = (kind,) if isinstance(kind, str) else tuple(kind)
        codes = np.array([KIND_CODE[k] for k in kinds], dtype=np.int8)
        return np.isin(self.kind_code, codes) & (self.action_code == ACTION_CODE[action])

    def involving(self, user: str) -> "EventLog":
        """Sub-log of events where ``user`` is the actor or the subject."""
        sub = tuple(e for e in self.events if e.actor == user or e.subject_user == user)
        return EventLog(sub, self.window)

    # serialization ------------------------------------------------------

    def to_ndjson(self) -> bytes:
        return "".join(e.to_json() + "\n" for e in self.events).encode("utf-8")

    def write(self, path: str | os.PathLike) -> None:
        from .io import atomic_write_bytes

        atomic_write_bytes(path, self.to_ndjson())


def _sort_key(e: Event):
    return (e.ts_us, e.event_id, e.to_json())


def _normalize(events: list[Event], window: TimeWindow | None) -> tuple[EventLog, int]:
    events.sort(key=_sort_key)
    seen: set[str] = set()
    out = []
    dups = 0
    for e in events:
        if e.event_id in seen:
            dups += 1
            continue
        seen.add(e.event_id)
        out.append(e)
    return EventLog(tuple(out), window), dups


def _iter_lines(stream) -> Iterator[bytes]:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        stream = io.BytesIO(bytes(stream))
    try:
        for raw in stream:
            yield raw
    except OSError as exc:
        raise IngestionError(f"cannot read replay stream: {exc}") from exc


def parse_lines(lines: Iterable[bytes], window: TimeWindow | None) -> tuple[list[Event], ParseStats]:
    """Parse a chunk of lines without sorting or deduplicating."""
    events = []
    n = bad = outside = 0
    for raw in lines:
        line = raw.rstrip(b"\r\n")
        if not line.strip():
            continue
        n += 1
        try:
            ev = parse_line(line)
        except MalformedRecord as exc:
            bad += 1
            logger.debug("skipping malformed line %d: %s", n, exc)
            continue
        if window is not None and ev.ts_us not in window:
            outside += 1
            continue
        events.append(ev)
    return events, ParseStats(lines=n, malformed=bad, out_of_window=outside)


def parse_replay(stream: BinaryIO | bytes, window: TimeWindow | None = None) -> EventLog:
    """Parse an NDJSON replay into a normalized :class:`EventLog`.

    Parameters
    ----------
    stream : binary file object or bytes
        Newline-delimited JSON records.
    window : TimeWindow, optional
        Events outside ``[start, end)`` are dropped. ``None`` keeps all.

    Raises
    ------
    IngestionError
        The stream cannot be read.
    CorruptInputError
        More than 50% of the non-blank lines are malformed.
    """
    events, stats = parse_lines(_iter_lines(stream), window)
    if stats.lines and stats.malformed * 2 > stats.lines:
        raise CorruptInputError(
            f"{stats.malformed} of {stats.lines} lines malformed; is this an NDJSON replay?"
        )
    log, dups = _normalize(events, window)
    stats = ParseStats(stats.lines, stats.malformed, stats.out_of_window, dups)
    if stats.malformed:
        logger.info("skipped %d malformed lines of %d", stats.malformed, stats.lines)
    return EventLog(log.events, window, stats)


def read_replay(path: str | os.PathLike, window: TimeWindow | None = None) -> EventLog:
    try:
        fh = open(Path(path), "rb")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        return parse_replay(fh, window)


@dataclass(frozen=True)
class ActivitySummary:
    totals: dict[str, int]
    deletes: dict[str, int]
    unique_users: int
    days: tuple[date, ...]
    daily: dict[str, tuple[int, ...]]

    def daily_rows(self) -> list[dict]:
        return [
            {"day": d.isoformat(), **{k: self.daily[k][i] for k in KINDS}}
            for i, d in enumerate(self.days)
        ]


def summarize(log: EventLog) -> ActivitySummary:
    """Per-kind create totals, unique users and a zero-filled daily series."""
    creates = log.action_code == ACTION_CODE["create"]
    totals = {k: int(np.sum(creates & (log.kind_code == KIND_CODE[k]))) for k in KINDS}
    deletes = {k: int(np.sum(~creates & (log.kind_code == KIND_CODE[k]))) for k in KINDS}
    if log.window is not None:
        days = log.window.days()
    elif len(log):
        days = TimeWindow(int(log.ts_us.min()), int(log.ts_us.max()) + 1).days()
    else:
        days = []
    daily: dict[str, tuple[int, ...]] = {}
    if days:
        origin = (days[0] - date(1970, 1, 1)).days
        day_idx = log.ts_us // _DAY_US - origin
        for k in KINDS:
            sel = creates & (log.kind_code == KIND_CODE[k])
            daily[k] = tuple(int(c) for c in np.bincount(day_idx[sel], minlength=len(days))[: len(days)])
    else:
        daily = {k: () for k in KINDS}
    return ActivitySummary(totals, deletes, len(log.users), tuple(days), daily)

