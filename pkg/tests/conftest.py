from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and not report.passed):
        return
    props = dict(report.user_properties)
    name = props.get("criterion", report.nodeid.split("::")[-1])
    outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
    _acceptance.append((name, outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome, detail in sorted(_acceptance):
        line = f"{name}: {outcome}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


class StubServer:
    """Loopback HTTP server replaying a queue of canned responses.

    Each entry is ``(status, body_bytes, delay_seconds)``; the last entry
    repeats once the queue is exhausted. Request bodies and headers are kept.
    """

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests: list[tuple[str, dict, bytes]] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(n)
                stub.requests.append((self.path, dict(self.headers), body))
                idx = min(len(stub.requests) - 1, len(stub.responses) - 1)
                status, payload, delay = stub.responses[idx]
                if delay:
                    threading.Event().wait(delay)
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> "StubServer":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def make(responses):
        s = StubServer(responses).__enter__()
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.__exit__(None, None, None)


def fixture_bytes(name: str) -> bytes:
    return (FIXTURES / name).read_bytes()


def fixture_json(name: str):
    return json.loads(fixture_bytes(name))
