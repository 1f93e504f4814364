import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

import pytest

from blockprop.live import StreamError, connect_live

from conftest import rec, ts


def emission(n):
    return [dict(rec(f"ev{i}", ts=ts(1, i)), seq=f"{i + 1:04d}") for i in range(n)]


class MockStream:
    """Serves ``events`` after the requested cursor; optionally cuts the body short."""

    def __init__(self, events, drop_after=None):
        self.events = events
        self.drop_after = list(drop_after or [])
        self.requests = []
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                cursor = parse_qs(urlsplit(self.path).query).get("cursor", [None])[0]
                mock.requests.append(cursor)
                todo = [e for e in mock.events if cursor is None or e["seq"] > cursor]
                body = b"".join(json.dumps(e).encode() + b"\n" for e in todo)
                cut = mock.drop_after.pop(0) if mock.drop_after else None
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                if cut is None:
                    self.wfile.write(body)
                else:
                    lines = body.splitlines(keepends=True)
                    # whole lines, then half of the next one, then hang up
                    partial = b"".join(lines[:cut]) + lines[cut][: len(lines[cut]) // 2]
                    self.wfile.write(partial)
                    self.wfile.flush()
                    self.close_connection = True

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/stream"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def serve():
    servers = []

    def make(*args, **kwargs):
        s = MockStream(*args, **kwargs)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


def test_clean_close_yields_all_events(serve):
    srv = serve(emission(5))
    stream = connect_live(srv.url, sleep=lambda s: None)
    events = list(stream)
    assert [e.event_id for e in events] == [f"ev{i}" for i in range(5)]
    assert stream.cursor == "0005"
    assert srv.requests == [None]


def test_dropped_connection_resumes_without_gaps_or_duplicates(serve):
    sent = emission(12)
    srv = serve(sent, drop_after=[4, 3])
    stream = connect_live(srv.url, sleep=lambda s: None)
    got = [e.event_id for e in stream]
    assert got == [e["id"] for e in sent]
    assert stream.reconnects == 2
    assert srv.requests == [None, "0004", "0007"]


def test_resume_from_given_cursor(serve):
    srv = serve(emission(6))
    got = [e.event_id for e in connect_live(srv.url, cursor="0003", sleep=lambda s: None)]
    assert got == ["ev3", "ev4", "ev5"]


def test_invalid_endpoint_raises_stream_error_with_no_events():
    delays = []
    stream = connect_live("http://127.0.0.1:9/none", cursor="0042", max_retries=2, sleep=delays.append)
    got = []
    with pytest.raises(StreamError) as info:
        for ev in stream:
            got.append(ev)
    assert got == []
    assert info.value.last_cursor == "0042"
    assert delays == [0.5, 1.0]
