"""A tiny OpenAI-style chat server for exercising the HTTP backend."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    def __init__(self, models=("local-model",), drop_first=0, status=200, reply=None):
        self.models = list(models)
        self.drop_remaining = drop_first
        self.status = status
        self.reply = reply
        self.requests: list[dict] = []
        self.lock = threading.Lock()
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()

    def _handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status, payload):
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path.endswith("/models"):
                    self._send(200, {"data": [{"id": m} for m in stub.models]})
                else:
                    self._send(404, {"error": "not found"})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                with stub.lock:
                    stub.requests.append({"path": self.path, "body": body})
                    drop = stub.drop_remaining > 0
                    if drop:
                        stub.drop_remaining -= 1
                if drop:
                    self.close_connection = True
                    self.connection.close()
                    return
                if stub.status != 200:
                    self._send(stub.status, {"error": "stub failure"})
                    return
                content = stub.reply if stub.reply is not None else body["messages"][0]["content"]
                self._send(200, {"choices": [{"message": {"role": "assistant", "content": content}}]})

        return Handler
