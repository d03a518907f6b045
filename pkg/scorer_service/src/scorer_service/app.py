"""FastAPI app implementing the scoring wire protocol.

POST /score
    request  {"id": str, "image_png_b64": str, "mode": "imagenet_class"|"clip_text",
              "target": str}
    response {"id": str, "score": number} on 200,
             {"id": str, "error": str} on 4xx/5xx.

GET /healthz
    200 once both models are loaded, 503 while they are still loading.

Scores are maximize-better for every mode: classifier loss is reported as
-cross_entropy here, CLIP similarity passes through as cosine similarity.
"""

from __future__ import annotations

import base64
import binascii
import contextlib
import io
import json
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .config import ServiceConfig
from .models import ModelBundle, load_bundle

MODES = ("imagenet_class", "clip_text")


def _error(status: int, request_id: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"id": request_id, "error": message})


def create_app(config: ServiceConfig | None = None, *, defer_load: bool = False) -> FastAPI:
    """Build the service app.

    Models load in a background thread at startup so the server answers
    /healthz (with 503) immediately; ``defer_load=True`` skips the automatic
    load so tests can drive it explicitly via ``app.state.load_models()``.
    """

    config = config or ServiceConfig()

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        if not defer_load and app.state.bundle is None:
            threading.Thread(target=load_models, daemon=True).start()
        yield

    app = FastAPI(title="scorer-service", lifespan=lifespan)
    app.state.config = config
    app.state.bundle = None
    app.state.load_error = None

    def load_models() -> None:
        try:
            bundle = load_bundle(config)
        except Exception as exc:  # surfaced via /healthz, not a crash
            app.state.load_error = f"{type(exc).__name__}: {exc}"
            return
        app.state.bundle = bundle

    app.state.load_models = load_models

    @app.get("/healthz")
    def healthz():
        if app.state.bundle is not None:
            return JSONResponse({"status": "ok"})
        detail = {"status": "loading"}
        if app.state.load_error:
            detail = {"status": "failed", "error": app.state.load_error}
        return JSONResponse(detail, status_code=503)

    @app.post("/score")
    async def score(request: Request):
        raw = await request.body()
        if len(raw) > config.max_request_bytes:
            return _error(413, "", f"request exceeds {config.max_request_bytes} bytes")
        try:
            body = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            return _error(400, "", "malformed JSON body")
        if not isinstance(body, dict):
            return _error(400, "", "malformed JSON body")
        request_id = str(body.get("id", ""))

        bundle: ModelBundle | None = app.state.bundle
        if bundle is None:
            return _error(503, request_id, "models are not loaded yet")

        mode = body.get("mode")
        target = body.get("target")
        png_b64 = body.get("image_png_b64")
        if mode not in MODES:
            return _error(400, request_id, f"mode must be one of {list(MODES)}")
        if not isinstance(target, str):
            return _error(400, request_id, "target must be a string")
        if not isinstance(png_b64, str):
            return _error(400, request_id, "image_png_b64 must be a base64 string")

        if mode == "imagenet_class":
            try:
                class_index = int(target)
            except ValueError:
                return _error(400, request_id, f"target {target!r} is not an integer")
            if not 0 <= class_index <= 999:
                return _error(400, request_id, f"target {class_index} outside [0, 999]")
        elif not target:
            return _error(400, request_id, "caption target must be non-empty")

        try:
            png_bytes = base64.b64decode(png_b64, validate=True)
        except (binascii.Error, ValueError):
            return _error(400, request_id, "image_png_b64 is not valid base64")
        try:
            with Image.open(io.BytesIO(png_bytes)) as img:
                image = img.convert("RGB")
        except Exception:
            return _error(400, request_id, "image_png_b64 does not decode as an image")

        try:
            if mode == "imagenet_class":
                value = bundle.neg_cross_entropy(image, class_index)
            else:
                value = bundle.clip_cosine(image, target)
        except Exception as exc:
            return _error(500, request_id, f"inference failure: {type(exc).__name__}")

        return JSONResponse({"id": request_id, "score": value})

    return app
