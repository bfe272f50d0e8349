"""HTTP facade: a threaded stdlib server over the DeskEngine.

Every response body is JSON except GET /artifacts/{id}, which streams the
stored bytes under the kind's media type.  Errors use one envelope,
``{"error": {"code", "message"}}``, with a machine-readable code.  The
server binds eagerly so a busy port fails fast with StartupError.
"""
from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import (
    CommandError,
    DrivedeskError,
    InvalidModel,
    InvalidParams,
    InvalidWeights,
    ModelNotFitted,
    NotFound,
    SessionClosed,
    StartupError,
    UnknownAgent,
)
from .config import ServiceConfig
from .engine import DeskEngine

_HEX64 = r"([0-9a-f]{64})"
_NAME = r"([A-Za-z0-9_-]+)"

#: method, path pattern, engine dispatch, success status
ROUTES = (
    ("GET", re.compile(r"^/health$"), "health", 200),
    ("POST", re.compile(r"^/shapes$"), "shapes", 200),
    ("POST", re.compile(r"^/train$"), "train", 202),
    ("GET", re.compile(rf"^/jobs/{_NAME}$"), "job", 200),
    ("POST", re.compile(r"^/sketch$"), "sketch", 200),
    ("POST", re.compile(r"^/retrieve/sketch$"), "retrieve_sketch", 200),
    ("POST", re.compile(r"^/retrieve/feature$"), "retrieve_feature", 200),
    ("POST", re.compile(r"^/interpolate$"), "interpolate", 200),
    ("POST", re.compile(r"^/reconstruct$"), "reconstruct", 200),
    ("POST", re.compile(r"^/mesh$"), "mesh", 202),
    ("POST", re.compile(rf"^/mesh/{_HEX64}/refine$"), "refine", 202),
    ("GET", re.compile(rf"^/mesh/{_HEX64}/quality$"), "quality", 200),
    ("POST", re.compile(r"^/surrogate/predict$"), "predict", 200),
    ("GET", re.compile(r"^/surrogate/eval$"), "eval", 200),
    ("POST", re.compile(r"^/sessions$"), "create_session", 200),
    ("POST", re.compile(rf"^/sessions/{_NAME}/messages$"), "message", 200),
    ("GET", re.compile(rf"^/sessions/{_NAME}/transcript$"), "transcript", 200),
    ("GET", re.compile(rf"^/artifacts/{_HEX64}$"), "artifact", 200),
)

#: exception class -> (http status, machine-readable code); order matters
_ERROR_MAP = (
    (NotFound, 404, "not_found"),
    (UnknownAgent, 404, "unknown_agent"),
    (CommandError, 400, "bad_command"),
    (ModelNotFitted, 409, "no_model"),
    (InvalidModel, 409, "no_model"),
    (SessionClosed, 409, "session_closed"),
    (InvalidWeights, 400, "invalid_params"),
    (InvalidParams, 400, "invalid_params"),
    (DrivedeskError, 400, "operation_failed"),
)


def error_payload(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}


def map_error(exc: Exception):
    """(status, payload) for any exception escaping an engine call."""
    for cls, status, code in _ERROR_MAP:
        if isinstance(exc, cls):
            return status, error_payload(code, str(exc))
    return 500, error_payload("internal_error", f"{type(exc).__name__}: {exc}")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "drivedesk"

    # -- plumbing -----------------------------------------------------------

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, content: bytes, content_type: str) -> None:
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(content)))
        self.end_headers()
        self.wfile.write(content)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise _MalformedBody(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise _MalformedBody("request body must be a JSON object")
        return body

    # -- dispatch -----------------------------------------------------------

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0]
        match_any_method = False
        for route_method, pattern, name, status in ROUTES:
            match = pattern.match(path)
            if not match:
                continue
            if route_method != method:
                match_any_method = True
                continue
            try:
                self._handle(name, status, match.groups())
            except _MalformedBody as exc:
                self._send_json(400, error_payload("malformed_body", str(exc)))
            except Exception as exc:  # noqa: BLE001 - map everything
                status_code, payload = map_error(exc)
                self._send_json(status_code, payload)
            return
        if match_any_method:
            self._send_json(
                405, error_payload("method_not_allowed", f"{method} not allowed on {path}")
            )
        else:
            self._send_json(404, error_payload("unknown_route", f"no route for {path}"))

    def _handle(self, name: str, status: int, groups: tuple) -> None:
        engine: DeskEngine = self.server.engine  # type: ignore[attr-defined]
        if name == "health":
            self._send_json(status, engine.health())
        elif name == "shapes":
            self._send_json(status, engine.generate_shapes(self._read_body()))
        elif name == "train":
            self._send_json(status, engine.submit_train(self._read_body()))
        elif name == "job":
            self._send_json(status, engine.job(groups[0]))
        elif name == "sketch":
            self._send_json(status, engine.make_sketch(self._read_body()))
        elif name == "retrieve_sketch":
            self._send_json(status, engine.retrieve_sketch(self._read_body()))
        elif name == "retrieve_feature":
            self._send_json(status, engine.retrieve_feature(self._read_body()))
        elif name == "interpolate":
            self._send_json(status, engine.interpolate(self._read_body()))
        elif name == "reconstruct":
            self._send_json(status, engine.reconstruct(self._read_body()))
        elif name == "mesh":
            self._send_json(status, engine.submit_mesh(self._read_body()))
        elif name == "refine":
            self._send_json(status, engine.submit_refine(groups[0], self._read_body()))
        elif name == "quality":
            self._send_json(status, engine.mesh_quality(groups[0]))
        elif name == "predict":
            self._send_json(status, engine.predict(self._read_body()))
        elif name == "eval":
            self._send_json(status, engine.surrogate_eval())
        elif name == "create_session":
            self._send_json(status, engine.create_session(self._read_body()))
        elif name == "message":
            self._send_json(status, engine.post_message(groups[0], self._read_body()))
        elif name == "transcript":
            self._send_json(status, engine.transcript(groups[0]))
        elif name == "artifact":
            content, content_type = engine.artifact(groups[0])
            self._send_bytes(content, content_type)
        else:  # pragma: no cover - route table and handlers move together
            self._send_json(500, error_payload("internal_error", f"unwired route {name}"))

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")


class _MalformedBody(Exception):
    """Request body failed to parse; always a 400 malformed_body."""


class DeskService:
    """Embeddable service: construct, start, request, stop."""

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.engine = DeskEngine(config)
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        if self._server is None:
            raise InvalidParams("service is not running")
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.port}"

    def start(self) -> "DeskService":
        if self._server is not None:
            raise InvalidParams("service is already running")
        try:
            server = ThreadingHTTPServer((self.config.host, self.config.port), _Handler)
        except OSError as exc:
            raise StartupError(
                f"cannot bind {self.config.host}:{self.config.port}: {exc}"
            ) from exc
        server.daemon_threads = True
        server.engine = self.engine  # type: ignore[attr-defined]
        self._server = server
        self._thread = threading.Thread(
            target=server.serve_forever, name="drivedesk-http", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
            self._thread = None
        self.engine.shutdown()

    def __enter__(self) -> "DeskService":
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(config: ServiceConfig) -> DeskService:
    """Start a service on config's host:port; StartupError if the port is taken."""
    return DeskService(config).start()
