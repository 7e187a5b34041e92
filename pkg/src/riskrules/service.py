"""HTTP scoring service around a fitted pipeline.

Endpoints: POST /predict, GET /model, GET /health.  Requests and responses
are JSON; numbers are plain decimals.  The loaded pipeline is immutable,
so concurrent requests share it safely.
"""

from __future__ import annotations

import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .data import FeatureSpec, PatientRecord
from .errors import DataError
from .pipeline import ARTIFACT_VERSION, FittedPipeline, predict_patient
from .report import prediction_to_dict
from .rules import describe_rule


class RequestError(DataError):
    """Client-side request problem; maps to a 4xx response."""

    def __init__(self, message, status=400):
        super().__init__(message)
        self.status = status


def _parse_value(feat: FeatureSpec, value) -> float:
    if value is None or (isinstance(value, str) and not value.strip()):
        return float("nan")
    if isinstance(value, bool):
        raise RequestError(f"feature {feat.name!r}: booleans not accepted; "
                           "use the level name or 0/1")
    if isinstance(value, (int, float)):
        if feat.kind == "continuous":
            return float(value)
        parsed = float(value)
        try:
            feat.validate_value(parsed)
        except DataError as exc:
            raise RequestError(str(exc)) from None
        return parsed
    if isinstance(value, str):
        try:
            return feat.parse_cell(value)
        except DataError as exc:
            raise RequestError(f"feature {feat.name!r}: {exc}") from None
    raise RequestError(f"feature {feat.name!r}: unsupported value type")


class PredictionService:
    """Transport-independent request handlers wrapping one pipeline."""

    def __init__(self, pipeline: FittedPipeline):
        self.pipeline = pipeline

    def health(self) -> dict:
        return {"status": "ok"}

    def model_info(self) -> dict:
        pipe = self.pipeline
        features = [{"name": f.name, "kind": f.kind, "levels": list(f.levels)}
                    for f in pipe.schema]
        rules = []
        for rule in pipe.rules:
            spec = next((f for f in pipe.schema if f.name == rule.feature), None)
            rules.append({
                "feature": rule.feature,
                "threshold": rule.threshold,
                "death_direction": rule.death_direction,
                "positive_centroid": rule.positive_centroid,
                "negative_centroid": rule.negative_centroid,
                "text": describe_rule(rule, spec),
            })
        return {"version": ARTIFACT_VERSION,
                "features": features,
                "rules": rules,
                "strat_threshold": pipe.strat_threshold,
                "calibration": {"beta0": pipe.calibration.beta0,
                                "beta1": pipe.calibration.beta1}}

    def predict(self, payload) -> dict:
        if not isinstance(payload, dict):
            raise RequestError("request body must be a JSON object of feature values")
        known = {f.name: f for f in self.pipeline.schema}
        unknown = [k for k in payload if k not in known]
        if unknown:
            raise RequestError(f"unknown feature names: {sorted(unknown)}")
        values = np.array([_parse_value(f, payload.get(f.name))
                           for f in self.pipeline.schema])
        pred = predict_patient(self.pipeline, PatientRecord(values))
        doc = prediction_to_dict(pred, self.pipeline)
        doc["model_version"] = ARTIFACT_VERSION
        return doc


def _make_handler(service: PredictionService):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # quiet by default
            pass

        def _send(self, status: int, doc: dict):
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, service.health())
            elif self.path == "/model":
                self._send(200, service.model_info())
            else:
                self._send(404, {"error": f"unknown path {self.path}"})

        def do_POST(self):
            if self.path != "/predict":
                self._send(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                try:
                    payload = json.loads(raw.decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    raise RequestError(f"malformed JSON body: {exc}") from None
                self._send(200, service.predict(payload))
            except RequestError as exc:
                self._send(exc.status, {"error": str(exc)})
            except DataError as exc:
                self._send(400, {"error": str(exc)})

    return Handler


def make_server(pipeline: FittedPipeline, host: str = "127.0.0.1",
                port: int = 8000) -> ThreadingHTTPServer:
    """Threaded HTTP server; port 0 picks a free port (see server_address)."""
    service = PredictionService(pipeline)
    return ThreadingHTTPServer((host, port), _make_handler(service))
