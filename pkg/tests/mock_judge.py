"""A local scriptable chat-completions server for exercising the judge
client: records request counts and the concurrency high-water mark, and
replies from a scripted queue (falling back to a default responder)."""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockJudgeServer:
    def __init__(self, default_response: str = "Score: 7\nLooks fine.", delay: float = 0.0):
        self.default_response = default_response
        self.delay = delay
        self.script: deque = deque()  # items: (status:int, text:str)
        self.request_count = 0
        self.prompts: list[str] = []
        self.max_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output clean
                pass

            def do_POST(self):
                with outer._lock:
                    outer.request_count += 1
                    outer._in_flight += 1
                    outer.max_in_flight = max(outer.max_in_flight, outer._in_flight)
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    body = json.loads(self.rfile.read(length) or b"{}")
                    parts = body.get("messages", [{}])[0].get("content", [])
                    text_part = next((p["text"] for p in parts if p.get("type") == "text"), "")
                    with outer._lock:
                        outer.prompts.append(text_part)
                        status, reply = (
                            outer.script.popleft()
                            if outer.script
                            else (200, outer.default_response)
                        )
                    if outer.delay:
                        time.sleep(outer.delay)
                    payload = json.dumps(
                        {"choices": [{"message": {"content": reply}}]}
                    ).encode("utf-8")
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    with outer._lock:
                        outer._in_flight -= 1

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockJudgeServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()
