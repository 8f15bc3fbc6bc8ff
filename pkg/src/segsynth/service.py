"""HTTP inference service backing the editor UI.

Endpoints (all JSON unless noted; errors are ``{"code", "message"}``):

- ``GET  /catalog`` -> class names, palette, resolution, generation order.
- ``POST /sample`` ``{"labels": [names], "seed": int}`` -> map payload.
- ``POST /session`` ``{"labels", "seed"}`` or ``{"map": payload}`` ->
  creates a session seeded from a sample or an uploaded map.
- ``POST /edit`` ``{"session", "kind", "target", "seed"}`` -> edited map;
  illegal edits (e.g. adding a present class) answer 409.
- ``GET  /session/<id>`` -> current session state.
- ``GET  /session/<id>/export`` -> PNG+manifest bundle as a zip
  (deterministic bytes for a given state).

Map payload wire format::

    {
      "width": W, "height": H,
      "label_set": [present class names],
      "channels": {name: base64(RLE)},   # one entry per present class
      "index_map": [H*W ints, row-major],  # 0 = background, k+1 = class k
      "seed": <request seed>
    }

The RLE is alternating run lengths over the row-major flattened binary mask,
starting with the run of zeros, each length a little-endian u16 (runs longer
than 65535 are split with zero-length separators).

Sessions are in-memory with a 30-minute idle expiry. Model parameters are
loaded once and shared read-only; per-session state is mutated under a
per-session lock.
"""
from __future__ import annotations

import base64
import io
import json
import secrets
import struct
import threading
import time
import zipfile
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .checkpoint import load_model
from .core import LabelSet, SemanticMap, compose_index_map, make_label_set
from .data import Dataset, Example, export
from .editing import EditError, EditRequest, apply_edit
from .model import generate
from .networks import IterativeMaskVAE

SESSION_IDLE_SECONDS = 30 * 60


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


# ---------------------------------------------------------------------------
# Mask wire encoding

def rle_encode(mask: np.ndarray) -> bytes:
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    runs = []
    value = 0
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    segments = np.concatenate([[0], boundaries, [flat.size]])
    for start, end in zip(segments[:-1], segments[1:]):
        run_value = int(flat[start]) if flat.size else 0
        if run_value != value:
            runs.append(0)
            value = run_value
        length = int(end - start)
        while length > 0xFFFF:
            runs.extend([0xFFFF, 0])
            length -= 0xFFFF
        runs.append(length)
        value ^= 1
    return struct.pack(f"<{len(runs)}H", *runs)


def rle_decode(raw: bytes, size: int) -> np.ndarray:
    runs = struct.unpack(f"<{len(raw) // 2}H", raw)
    out = np.zeros(size, dtype=np.uint8)
    pos = 0
    value = 0
    for run in runs:
        if pos + run > size:
            raise ApiError(400, "bad_request", "RLE data longer than mask")
        if value:
            out[pos : pos + run] = 1
        pos += run
        value ^= 1
    if pos != size:
        raise ApiError(400, "bad_request", f"RLE data covers {pos} of {size} pixels")
    return out


def map_payload(
    map_: SemanticMap, label_set: LabelSet, model: IterativeMaskVAE, seed: int | None
) -> dict:
    catalog = model.cfg.catalog
    h, w = map_.resolution
    channels = {
        catalog.names[k]: base64.b64encode(rle_encode(map_.channels[k])).decode("ascii")
        for k in label_set.indices()
    }
    index_map = compose_index_map(map_, model.cfg.generation_order())
    return {
        "width": w,
        "height": h,
        "label_set": label_set.names(catalog),
        "channels": channels,
        "index_map": index_map.ravel().tolist(),
        "seed": seed,
    }


def payload_to_map(payload: dict, model: IterativeMaskVAE) -> tuple[SemanticMap, LabelSet]:
    catalog = model.cfg.catalog
    h, w = model.cfg.resolution
    if payload.get("width") != w or payload.get("height") != h:
        raise ApiError(400, "bad_request", f"map must be {w}x{h}")
    channels = np.zeros((catalog.count, h, w), dtype=np.uint8)
    names = []
    for name, b64 in payload.get("channels", {}).items():
        k = _class_index(catalog, name)
        channels[k] = rle_decode(base64.b64decode(b64), h * w).reshape(h, w)
        names.append(name)
    map_ = SemanticMap(channels)
    return map_, make_label_set(names, catalog)


def _class_index(catalog, name: str) -> int:
    try:
        return catalog.index_of(name)
    except ValueError as exc:
        raise ApiError(400, "bad_request", str(exc)) from None


# ---------------------------------------------------------------------------
# Sessions

class Session:
    def __init__(self, map_: SemanticMap, label_set: LabelSet, seed: int | None):
        self.id = secrets.token_urlsafe(16)
        self.map = map_
        self.label_set = label_set
        self.last_seed = seed
        self.lock = threading.Lock()
        self.touched = time.monotonic()

    def touch(self):
        self.touched = time.monotonic()


class SessionStore:
    def __init__(self, idle_seconds: float = SESSION_IDLE_SECONDS):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.idle_seconds = idle_seconds

    def add(self, session: Session) -> None:
        with self._lock:
            self._sweep()
            self._sessions[session.id] = session

    def get(self, session_id: str) -> Session:
        with self._lock:
            self._sweep()
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "not_found", f"no session {session_id!r}")
        session.touch()
        return session

    def _sweep(self) -> None:
        now = time.monotonic()
        stale = [
            sid
            for sid, s in self._sessions.items()
            if now - s.touched > self.idle_seconds
        ]
        for sid in stale:
            del self._sessions[sid]


# ---------------------------------------------------------------------------
# Application

class App:
    def __init__(self, model: IterativeMaskVAE, idle_seconds: float = SESSION_IDLE_SECONDS):
        self.model = model
        self.sessions = SessionStore(idle_seconds)

    # -- endpoint logic ----------------------------------------------------
    def catalog(self) -> dict:
        cfg = self.model.cfg
        return {
            "names": list(cfg.catalog.names),
            "palette": [list(rgb) for rgb in cfg.catalog.palette],
            "resolution": list(cfg.resolution),
            "order": [cfg.catalog.names[k] for k in cfg.generation_order().sequence],
        }

    def sample(self, body: dict) -> dict:
        labels, seed = self._labels_seed(body)
        map_ = generate(self.model, labels, seed)
        return map_payload(map_, labels, self.model, seed)

    def create_session(self, body: dict) -> dict:
        if "map" in body:
            map_, labels = payload_to_map(body["map"], self.model)
            seed = body.get("seed")
        else:
            labels, seed = self._labels_seed(body)
            map_ = generate(self.model, labels, seed)
        session = Session(map_, labels, seed)
        self.sessions.add(session)
        return {"session": session.id, "map": map_payload(map_, labels, self.model, seed)}

    def edit(self, body: dict) -> dict:
        session = self.sessions.get(self._require(body, "session"))
        kind = self._require(body, "kind")
        target_name = self._require(body, "target")
        seed = int(body.get("seed", 0))
        target = _class_index(self.model.cfg.catalog, target_name)
        with session.lock:
            req = EditRequest(
                kind=kind,
                target=target,
                map=session.map,
                label_set=session.label_set,
                seed=seed,
            )
            try:
                new_map, new_labels = apply_edit(self.model, req)
            except EditError as exc:
                raise ApiError(409, "conflict", str(exc)) from None
            session.map = new_map
            session.label_set = new_labels
            session.last_seed = seed
        return {
            "session": session.id,
            "map": map_payload(new_map, new_labels, self.model, seed),
        }

    def session_state(self, session_id: str) -> dict:
        session = self.sessions.get(session_id)
        return {
            "session": session.id,
            "map": map_payload(session.map, session.label_set, self.model, session.last_seed),
        }

    def session_export(self, session_id: str) -> bytes:
        session = self.sessions.get(session_id)
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            dataset = Dataset(
                [Example(session.map, session.label_set, "session")],
                self.model.cfg.catalog,
            )
            export(dataset, tmp, self.model.cfg.generation_order())
            buf = io.BytesIO()
            with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
                for name in sorted(p.name for p in Path(tmp).iterdir()):
                    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                    info.compress_type = zipfile.ZIP_DEFLATED
                    zf.writestr(info, (Path(tmp) / name).read_bytes())
            return buf.getvalue()

    # -- helpers -------------------------------------------------------------
    def _labels_seed(self, body: dict) -> tuple[LabelSet, int]:
        names = body.get("labels")
        if names is None or not isinstance(names, list):
            raise ApiError(400, "bad_request", "body needs a 'labels' list")
        seed = int(body.get("seed", 0))
        try:
            labels = make_label_set(names, self.model.cfg.catalog)
        except ValueError as exc:
            raise ApiError(400, "bad_request", str(exc)) from None
        return labels, seed

    @staticmethod
    def _require(body: dict, key: str):
        if key not in body:
            raise ApiError(400, "bad_request", f"body needs {key!r}")
        return body[key]


def make_handler(app: App):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            raw = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(raw)

        def _send_error(self, exc: ApiError) -> None:
            self._send_json(exc.status, {"code": exc.code, "message": exc.message})

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length))
            except json.JSONDecodeError as exc:
                raise ApiError(400, "bad_request", f"invalid JSON body: {exc}") from None

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()

        def do_GET(self):
            try:
                if self.path == "/catalog":
                    self._send_json(200, app.catalog())
                elif self.path.startswith("/session/") and self.path.endswith("/export"):
                    sid = self.path[len("/session/") : -len("/export")]
                    raw = app.session_export(sid)
                    self.send_response(200)
                    self.send_header("Content-Type", "application/zip")
                    self.send_header("Content-Length", str(len(raw)))
                    self.send_header("Access-Control-Allow-Origin", "*")
                    self.end_headers()
                    self.wfile.write(raw)
                elif self.path.startswith("/session/"):
                    sid = self.path[len("/session/") :]
                    self._send_json(200, app.session_state(sid))
                else:
                    raise ApiError(404, "not_found", f"no route {self.path}")
            except ApiError as exc:
                self._send_error(exc)

        def do_POST(self):
            try:
                body = self._read_body()
                if self.path == "/sample":
                    self._send_json(200, app.sample(body))
                elif self.path == "/session":
                    self._send_json(200, app.create_session(body))
                elif self.path == "/edit":
                    self._send_json(200, app.edit(body))
                else:
                    raise ApiError(404, "not_found", f"no route {self.path}")
            except ApiError as exc:
                self._send_error(exc)

    return Handler


def start_server(
    checkpoint: str | Path | IterativeMaskVAE,
    host: str = "127.0.0.1",
    port: int = 8765,
    idle_seconds: float = SESSION_IDLE_SECONDS,
) -> ThreadingHTTPServer:
    """Build the server (without blocking). Accepts a checkpoint path or an
    already-loaded model; a bad checkpoint fails here, before binding."""
    model = (
        checkpoint
        if isinstance(checkpoint, IterativeMaskVAE)
        else load_model(checkpoint)
    )
    app = App(model, idle_seconds)
    server = ThreadingHTTPServer((host, port), make_handler(app))
    server.app = app
    return server


def run_server(checkpoint: str | Path, host: str, port: int) -> None:
    server = start_server(checkpoint, host, port)
    print(f"serving on http://{host}:{port} (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
