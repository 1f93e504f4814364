"""Optional live adapter: NDJSON events over a resumable HTTP stream.

The server answers ``GET <endpoint>?cursor=<token>`` with newline-delimited
event records in the replay wire format, each carrying an extra ``seq``
string. A request with a cursor resumes strictly after that token. A
response that ends cleanly ends the stream; a connection that drops or a
body cut short triggers a reconnect from the last good cursor.
"""

from __future__ import annotations

import http.client
import json
import logging
import time
import urllib.error
import urllib.parse
import urllib.request
from typing import Callable, Iterator

from .events import Event, MalformedRecord, event_from_record

logger = logging.getLogger(__name__)


class StreamError(Exception):
    """The stream could not be (re)established within the retry budget."""

    def __init__(self, message: str, last_cursor: str | None):
        super().__init__(message)
        self.last_cursor = last_cursor


def _with_cursor(endpoint: str, cursor: str | None) -> str:
    if cursor is None:
        return endpoint
    parts = urllib.parse.urlsplit(endpoint)
    query = urllib.parse.parse_qsl(parts.query, keep_blank_values=True)
    query = [(k, v) for k, v in query if k != "cursor"] + [("cursor", cursor)]
    return urllib.parse.urlunsplit(parts._replace(query=urllib.parse.urlencode(query)))


class LiveStream:
    """Iterator over live events; ``cursor`` is the last delivered token.

    Parameters
    ----------
    endpoint : str
        HTTP(S) URL of the NDJSON stream.
    cursor : str, optional
        Resume token; events up to and including it are not re-delivered.
    max_retries : int
        Consecutive failed connection attempts tolerated before giving up.
    backoff : float
        Base delay in seconds; attempt ``k`` waits ``backoff * 2**k``.
    """

    def __init__(
        self,
        endpoint: str,
        cursor: str | None = None,
        max_retries: int = 5,
        backoff: float = 0.5,
        timeout: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.cursor = cursor
        self.max_retries = max_retries
        self.backoff = backoff
        self.timeout = timeout
        self.malformed = 0
        self.reconnects = 0
        self._sleep = sleep
        self._seen: set[str] = set()

    def __iter__(self) -> Iterator[Event]:
        failures = 0
        while True:
            try:
                resp = urllib.request.urlopen(_with_cursor(self.endpoint, self.cursor), timeout=self.timeout)
            except (urllib.error.URLError, OSError, ValueError, http.client.HTTPException) as exc:
                failures += 1
                if failures > self.max_retries:
                    raise StreamError(f"cannot connect to {self.endpoint}: {exc}", self.cursor) from exc
                self._sleep(self.backoff * 2 ** (failures - 1))
                continue
            try:
                with resp:
                    for ev in self._read(resp):
                        failures = 0
                        yield ev
                return
            except (http.client.HTTPException, OSError, _Truncated) as exc:
                failures += 1
                self.reconnects += 1
                logger.info("stream interrupted at cursor %s: %s", self.cursor, exc)
                if failures > self.max_retries:
                    raise StreamError(f"stream kept failing: {exc}", self.cursor) from exc
                self._sleep(self.backoff * 2 ** (failures - 1))

    def _read(self, resp) -> Iterator[Event]:
        while True:
            line = resp.readline()
            if not line:
                return
            if not line.endswith(b"\n"):
                raise _Truncated("partial line at end of body")
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = rec.pop("seq")
                if not isinstance(seq, str):
                    raise MalformedRecord("seq must be a string")
                ev = event_from_record(rec)
            except (ValueError, KeyError, TypeError):
                self.malformed += 1
                continue
            self.cursor = seq
            if ev.event_id in self._seen:
                continue
            self._seen.add(ev.event_id)
            yield ev


class _Truncated(Exception):
    pass


def connect_live(endpoint: str, cursor: str | None = None, **kwargs) -> LiveStream:
    """Open a resumable live stream; see :class:`LiveStream`."""
    return LiveStream(endpoint, cursor, **kwargs)
