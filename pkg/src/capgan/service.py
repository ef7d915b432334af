"""HTTP manipulation service.

A session pins one latent z at creation; every edit re-renders with the
same z, so the only input that ever changes between a session's images
is the caption text. Sessions live in memory with LRU eviction.

Endpoints (JSON over HTTP, CORS open):
  POST /session              {caption, seed?} -> ids, images per stage
  POST /session/{id}/edit    {caption} -> new image, diff vs original
  GET  /session/{id}         current state
  GET  /vocab                token list
  GET  /health               {status, step, config_hash, png}
Static UI files are served under /ui when a directory is configured.
"""
from __future__ import annotations

import base64
import json
import os
import secrets
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .config import TrainConfig
from .imgio import pgm_bytes, png_bytes, ppm_bytes
from .model import CapGanModel, RenderResult
from .seeding import SALT_GENERATE, stream_rng
from .text import OovError, tokenize
from .training import TrainState, init_state, l2_metrics, load_state, pixel_sq_distance

DEFAULT_PORT = 8765
MAX_SESSIONS = 256

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".svg": "image/svg+xml",
    ".map": "application/json",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class ApiError(Exception):
    def __init__(self, status: int, payload: dict):
        super().__init__(payload.get("error", ""))
        self.status = status
        self.payload = payload


@dataclass
class Session:
    sid: str
    z: np.ndarray
    original_caption: list[str]
    original: RenderResult
    current_caption: list[str]
    current: RenderResult
    edits: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class ManipulationService:
    """Session table plus rendering glue; transport-agnostic."""

    def __init__(
        self,
        state: TrainState | None,
        ui_dir: str | None = None,
        max_sessions: int = MAX_SESSIONS,
    ):
        self.state = state
        self.ui_dir = os.path.realpath(ui_dir) if ui_dir else None
        self.max_sessions = max_sessions
        self.sessions: OrderedDict[str, Session] = OrderedDict()
        self.table_lock = threading.Lock()
        self.render_lock = threading.Lock()
        self._session_counter = 0

    @classmethod
    def from_checkpoint(cls, path: str, **kw) -> "ManipulationService":
        return cls(load_state(path), **kw)

    @classmethod
    def from_config(cls, cfg: TrainConfig, **kw) -> "ManipulationService":
        return cls(init_state(cfg), **kw)

    # -- helpers ----------------------------------------------------------

    @property
    def model(self) -> CapGanModel | None:
        return self.state.model if self.state is not None else None

    def _require_model(self) -> CapGanModel:
        if self.model is None:
            raise ApiError(409, {"error": "model not loaded"})
        return self.model

    def _tokenize(self, raw) -> list[str]:
        if not isinstance(raw, str) or not raw.strip():
            raise ApiError(400, {"error": "caption must be a non-empty string"})
        tokens = tokenize(raw)
        model = self._require_model()
        try:
            model.vocab.encode(tokens, strict=True)
        except OovError as exc:
            raise ApiError(400, {"error": "unknown tokens", "tokens": exc.tokens}) from None
        if len(tokens) > model.cfg.l_max:
            raise ApiError(400, {"error": f"caption longer than {model.cfg.l_max} tokens"})
        return tokens

    def _render(self, tokens: list[str], z: np.ndarray) -> RenderResult:
        with self.render_lock:
            return self._require_model().render([tokens], z)

    def _image_payload(self, img: np.ndarray, accept: str) -> tuple[str, str]:
        if "image/png" in (accept or ""):
            return _b64(png_bytes(img)), "png"
        return _b64(ppm_bytes(img)), "ppm"

    def _get_session(self, sid: str) -> Session:
        with self.table_lock:
            session = self.sessions.get(sid)
            if session is None:
                raise ApiError(404, {"error": f"unknown session {sid!r}"})
            self.sessions.move_to_end(sid)
            return session

    def _attention_maps(self, result: RenderResult, tokens: list[str]) -> dict[str, str]:
        """Final attended stage's per-word heatmaps, keyed ``index:word``."""
        if not result.betas:
            return {}
        stage = max(result.betas)
        beta = result.betas[stage][0]  # (H*W, L)
        side = int(np.sqrt(beta.shape[0]))
        out: dict[str, str] = {}
        for i, word in enumerate(tokens):
            m = beta[:, i].reshape(side, side)
            span = m.max() - m.min()
            norm = (m - m.min()) / span if span > 0 else np.zeros_like(m)
            out[f"{i}:{word}"] = _b64(pgm_bytes(norm))
        return out

    # -- endpoint logic -----------------------------------------------------

    def health(self) -> dict:
        if self.state is None:
            return {"status": "no-model", "step": 0, "config_hash": None, "png": True}
        return {
            "status": "ok",
            "step": self.state.step,
            "config_hash": self.state.cfg.config_hash(),
            "png": True,
        }

    def vocab(self) -> dict:
        model = self._require_model()
        return {"tokens": model.vocab.tokens}

    def create_session(self, body: dict, accept: str) -> dict:
        model = self._require_model()
        tokens = self._tokenize(body.get("caption"))
        seed = body.get("seed")
        with self.table_lock:
            counter = self._session_counter
            self._session_counter += 1
        if seed is not None:
            if not isinstance(seed, int):
                raise ApiError(400, {"error": "seed must be an integer"})
            rng = stream_rng(seed, SALT_GENERATE, 0)
        else:
            rng = stream_rng(model.cfg.seed, SALT_GENERATE, counter + 1)
        z = rng.standard_normal((1, model.cfg.noise_dim))
        result = self._render(tokens, z)
        sid = secrets.token_hex(8)
        session = Session(sid, z, tokens, result, tokens, result)
        with self.table_lock:
            self.sessions[sid] = session
            while len(self.sessions) > self.max_sessions:
                self.sessions.popitem(last=False)
        image_b64, fmt = self._image_payload(result.final[0], accept)
        return {
            "session_id": sid,
            "caption": tokens,
            "image_b64": image_b64,
            "format": fmt,
            "stages": [
                {"size": img.shape[2], "image_b64": self._image_payload(img[0], accept)[0]}
                for img in result.images
            ],
        }

    def edit_session(self, sid: str, body: dict, accept: str) -> dict:
        session = self._get_session(sid)
        tokens = self._tokenize(body.get("caption"))
        with session.lock:
            result = self._render(tokens, session.z)
            session.current_caption = tokens
            session.current = result
            session.edits += 1
            base = session.original.final[0]
        cur = result.final[0]
        metrics = l2_metrics(base, cur, np.zeros(base.shape[1:], dtype=bool))
        diff = pixel_sq_distance(base, cur)
        span = diff.max()
        diff_norm = diff / span if span > 0 else diff
        image_b64, fmt = self._image_payload(cur, accept)
        return {
            "session_id": sid,
            "caption": tokens,
            "image_b64": image_b64,
            "format": fmt,
            "diff_b64": _b64(pgm_bytes(diff_norm)),
            "l2_full": metrics["l2_full"],
            "attention": self._attention_maps(result, tokens),
        }

    def session_state(self, sid: str, accept: str) -> dict:
        session = self._get_session(sid)
        with session.lock:
            image_b64, fmt = self._image_payload(session.current.final[0], accept)
            original_b64, _ = self._image_payload(session.original.final[0], accept)
            return {
                "session_id": sid,
                "original_caption": session.original_caption,
                "caption": session.current_caption,
                "image_b64": image_b64,
                "original_image_b64": original_b64,
                "format": fmt,
                "edits": session.edits,
            }

    # -- static files ---------------------------------------------------------

    def ui_file(self, path: str) -> tuple[bytes, str]:
        if self.ui_dir is None:
            raise ApiError(404, {"error": "no ui directory configured"})
        rel = path[len("/ui") :].lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(self.ui_dir, rel))
        if not full.startswith(self.ui_dir + os.sep) and full != self.ui_dir:
            raise ApiError(404, {"error": "not found"})
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            raise ApiError(404, {"error": "not found"})
        ext = os.path.splitext(full)[1].lower()
        with open(full, "rb") as fh:
            return fh.read(), _CONTENT_TYPES.get(ext, "application/octet-stream")


class _Handler(BaseHTTPRequestHandler):
    # the service is attached to the server object by create_server
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> ManipulationService:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # quiet; tests and demos drive this hard
        if os.environ.get("CGAN_HTTP_LOG"):
            super().log_message(fmt, *args)

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type, Accept")

    def _send_json(self, status: int, obj: dict):
        data = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self._cors()
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _send_bytes(self, data: bytes, ctype: str):
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError:
            raise ApiError(400, {"error": "body is not valid JSON"}) from None
        if not isinstance(obj, dict):
            raise ApiError(400, {"error": "body must be a JSON object"})
        return obj

    def _dispatch(self, method: str):
        path = self.path.split("?", 1)[0].rstrip("/") or "/"
        accept = self.headers.get("Accept", "")
        try:
            if method == "OPTIONS":
                self.send_response(204)
                self._cors()
                self.send_header("Content-Length", "0")
                self.end_headers()
                return
            if method == "GET" and path == "/health":
                self._send_json(200, self.service.health())
            elif method == "GET" and path == "/vocab":
                self._send_json(200, self.service.vocab())
            elif method == "POST" and path == "/session":
                self._send_json(200, self.service.create_session(self._body(), accept))
            elif method == "POST" and path.startswith("/session/") and path.endswith("/edit"):
                sid = path[len("/session/") : -len("/edit")]
                self._send_json(200, self.service.edit_session(sid, self._body(), accept))
            elif method == "GET" and path.startswith("/session/"):
                self._send_json(200, self.service.session_state(path[len("/session/") :], accept))
            elif method == "GET" and (path == "/ui" or path.startswith("/ui/")):
                data, ctype = self.service.ui_file(path)
                self._send_bytes(data, ctype)
            else:
                self._send_json(404, {"error": f"no route for {method} {path}"})
        except ApiError as exc:
            self._send_json(exc.status, exc.payload)
        except Exception as exc:  # pragma: no cover - defensive surface
            self._send_json(500, {"error": f"internal error: {exc}"})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        self._dispatch("OPTIONS")


def create_server(service: ManipulationService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _Handler)
    server.service = service  # type: ignore[attr-defined]
    return server


def resolve_port(cli_port: int | None) -> int:
    if cli_port is not None:
        return cli_port
    env = os.environ.get("CGAN_PORT")
    return int(env) if env else DEFAULT_PORT
