"""HTTP adapter for classifiers exposed as remote scoring endpoints.

Wire protocol (the toolkit's native schema):

    POST <endpoint>
    {"image_png_b64": "<base64 PNG>", "top_k": 5}

    200 -> {"labels": [{"name": "cat", "score": 0.93}, ...]}

Vendor endpoints with different response shapes are mapped via a
field-path configuration instead of code: ``labels_path`` locates the list
of label entries (dotted path into the JSON), ``name_field``/``score_field``
name the keys inside each entry. Retries are exponential-backoff with the
POST assumed idempotent; a logical classify counts one query no matter how
many attempts it takes. Rate limiting paces request starts through one
serialized accounting point.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

from advkit import png as _png
from advkit.errors import ProtocolError, TransportError
from advkit.image import Image
from advkit.model import Prediction

import numpy as np

DEFAULT_TIMEOUT_MS = 5000
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_S = 0.05


@dataclass(frozen=True)
class FieldMap:
    """Where to find labels in a vendor response."""

    labels_path: str = "labels"
    name_field: str = "name"
    score_field: str = "score"

    def to_json(self) -> dict:
        return {
            "labels_path": self.labels_path,
            "name_field": self.name_field,
            "score_field": self.score_field,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FieldMap":
        return cls(
            labels_path=obj.get("labels_path", "labels"),
            name_field=obj.get("name_field", "name"),
            score_field=obj.get("score_field", "score"),
        )


class RemoteTarget:
    """Black-box classifier behind an HTTP endpoint."""

    def __init__(
        self,
        endpoint: str,
        auth_header: str = None,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        max_retries: int = DEFAULT_RETRIES,
        rate_limit_qps: float = None,
        top_k: int = 5,
        field_map: FieldMap = None,
        backoff_s: float = DEFAULT_BACKOFF_S,
    ):
        self.endpoint = endpoint
        self.auth_header = auth_header
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.rate_limit_qps = rate_limit_qps
        self.top_k = top_k
        self.field_map = field_map or FieldMap()
        self.backoff_s = backoff_s
        self._lock = threading.Lock()
        self._queries = 0
        self._next_allowed = 0.0
        # monotonic send slots granted by the rate limiter; sends never
        # start before their slot, so slot spacing proves cap compliance
        self.request_times: list = []

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def descriptor(self) -> dict:
        return {"kind": "remote", "endpoint": self.endpoint, "top_k": self.top_k}

    def classify(self, img: Image) -> Prediction:
        """One logical query: counted once, retried up to max_retries."""
        with self._lock:
            self._queries += 1
        body = json.dumps(
            {"image_png_b64": base64.b64encode(_png.encode(img.array)).decode("ascii"),
             "top_k": self.top_k}
        ).encode("utf-8")
        last_error = None
        for attempt in range(self.max_retries + 1):
            self._pace()
            try:
                payload = self._post(body)
                return self._parse(payload)
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                last_error = exc
                time.sleep(self.backoff_s * (2**attempt))
        raise TransportError(
            f"{self.endpoint} unreachable after {self.max_retries + 1} attempts: {last_error}"
        )

    def _pace(self) -> None:
        if self.rate_limit_qps is None:
            return
        interval = 1.0 / self.rate_limit_qps
        with self._lock:
            now = time.monotonic()
            start = max(now, self._next_allowed)
            self._next_allowed = start + interval
            self.request_times.append(start)
        while True:
            remaining = start - time.monotonic()
            if remaining <= 0:
                return
            time.sleep(remaining)

    def _post(self, body: bytes) -> dict:
        req = urllib.request.Request(self.endpoint, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        if self.auth_header:
            req.add_header("Authorization", self.auth_header)
        with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
            raw = resp.read()
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc

    def _parse(self, payload: dict) -> Prediction:
        node = payload
        for part in self.field_map.labels_path.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ProtocolError(f"missing {self.field_map.labels_path!r} in response")
            node = node[part]
        if not isinstance(node, list) or not node:
            raise ProtocolError("label list is empty or not a list")
        names = []
        scores = []
        for entry in node:
            if (
                not isinstance(entry, dict)
                or self.field_map.name_field not in entry
                or self.field_map.score_field not in entry
            ):
                raise ProtocolError(f"malformed label entry: {entry!r}")
            name = entry[self.field_map.name_field]
            score = entry[self.field_map.score_field]
            if not isinstance(name, str) or not isinstance(score, (int, float)):
                raise ProtocolError(f"bad types in label entry: {entry!r}")
            if not 0.0 <= float(score) <= 1.0:
                raise ProtocolError(f"score {score} outside [0, 1]")
            names.append(name)
            scores.append(float(score))
        return Prediction(labels=tuple(names), scores=np.asarray(scores))
