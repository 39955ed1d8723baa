"""In-process mock scoring endpoint for exercising the remote adapter.

Serves the toolkit's native wire protocol from a background thread,
classifying with a supplied model. Failure injection is pluggable: the
default predicate fails each arrival independently with a seeded
probability (transient; retries usually recover), and tests can supply any
``fail_predicate(arrival_index, request_json) -> bool`` for harder cases.
Every arrival is logged with its monotonic receive time so rate-limit
compliance can be audited from the server side.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from advkit import png as _png
from advkit.dataset import LABEL_NAMES
from advkit.image import Image
from advkit.model import forward
from advkit.rng import SplitMix64, derive_seed


@dataclass
class RequestRecord:
    arrival: float  # time.monotonic at receipt
    failed: bool
    top_k: int


class MockClassifierServer:
    """Context manager: ``with MockClassifierServer(params) as srv: srv.url``."""

    def __init__(
        self,
        params=None,
        label_names: tuple = LABEL_NAMES,
        transient_failure_rate: float = 0.0,
        seed: int = 0,
        fail_predicate=None,
        respond_fn=None,
    ):
        self.params = params
        self.label_names = label_names
        self.records: list = []
        self.respond_fn = respond_fn
        self._lock = threading.Lock()
        self._arrivals = 0
        if fail_predicate is not None:
            self._fail = fail_predicate
        elif transient_failure_rate > 0.0:
            rate = transient_failure_rate
            base = derive_seed(seed, "mock-fail")

            def _fail(index, _body, rate=rate, base=base):
                return SplitMix64(derive_seed(base, index)).uniform() < rate

            self._fail = _fail
        else:
            self._fail = lambda _i, _b: False
        self._server = None
        self._thread = None

    # ------------------------------------------------------------- control

    def __enter__(self) -> "MockClassifierServer":
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                outer._handle(self)

            def log_message(self, *args):  # silence default stderr noise
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()
        return False

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/classify"

    @property
    def arrivals(self) -> int:
        with self._lock:
            return self._arrivals

    # ------------------------------------------------------------ handling

    def _handle(self, handler: BaseHTTPRequestHandler) -> None:
        arrival_time = time.monotonic()
        with self._lock:
            index = self._arrivals
            self._arrivals += 1
        length = int(handler.headers.get("Content-Length", 0))
        raw = handler.rfile.read(length)
        try:
            body = json.loads(raw)
        except json.JSONDecodeError:
            body = {}

        if self._fail(index, body):
            with self._lock:
                self.records.append(RequestRecord(arrival_time, True, int(body.get("top_k", 0))))
            handler.send_response(503)
            handler.end_headers()
            return

        if self.respond_fn is not None:
            status, payload = self.respond_fn(body)
        else:
            status, payload = self._classify(body)
        with self._lock:
            self.records.append(RequestRecord(arrival_time, False, int(body.get("top_k", 0))))
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        handler.send_response(status)
        handler.send_header("Content-Type", "application/json")
        handler.send_header("Content-Length", str(len(data)))
        handler.end_headers()
        handler.wfile.write(data)

    def _classify(self, body: dict):
        try:
            arr = _png.decode(base64.b64decode(body["image_png_b64"]))
        except Exception:
            return 400, {"error": "bad image"}
        top_k = int(body.get("top_k", 5))
        pred = forward(self.params, Image(arr), labels=self.label_names).prediction
        order = np.argsort(-pred.scores, kind="stable")[:top_k]
        labels = [
            {"name": pred.labels[i], "score": float(pred.scores[i])} for i in order
        ]
        return 200, {"labels": labels}
