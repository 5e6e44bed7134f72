"""HTTP inference service: the final trained model behind a small JSON API.

Endpoints:
  POST /predict     multipart image upload, optional ?explain=true
  GET  /health      liveness + model-loaded flag
  GET  /model-info  checkpoint metadata

The model is loaded once at startup and held immutable; configuration comes
from environment variables (FLUORODX_CHECKPOINT, FLUORODX_HOST,
FLUORODX_PORT, FLUORODX_EXPLAIN_DEFAULT, FLUORODX_CORS_ORIGINS).
"""

from __future__ import annotations

import base64
import io
import os
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, Query, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image as PILImage

from .gradcam import export_heatmap, grad_cam, overlay
from .manifest import Label
from .models import CLASS_ORDER, ClassifierModel, load_checkpoint
from .training import predict_proba

MAX_UPLOAD_BYTES = 20 * 1024 * 1024


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


def create_app(checkpoint_path: Optional[str | Path] = None, defer_load: bool = False) -> FastAPI:
    from contextlib import asynccontextmanager

    checkpoint = checkpoint_path or os.environ.get("FLUORODX_CHECKPOINT")

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if not defer_load and checkpoint is not None:
            model, meta = load_checkpoint(checkpoint)
            model.eval()
            app.state.model = model
            app.state.metadata = meta
        yield

    app = FastAPI(title="fluorodx inference service", lifespan=lifespan)
    origins = os.environ.get("FLUORODX_CORS_ORIGINS", "*").split(",")
    app.add_middleware(
        CORSMiddleware, allow_origins=origins, allow_methods=["*"], allow_headers=["*"]
    )
    app.state.model = None
    app.state.metadata = {}
    app.state.explain_default = os.environ.get("FLUORODX_EXPLAIN_DEFAULT", "0") in ("1", "true")

    @app.get("/health")
    def health():
        loaded = app.state.model is not None
        return {
            "status": "ok" if loaded else "starting",
            "model_loaded": loaded,
            "model_id": app.state.metadata.get("checkpoint_digest"),
        }

    @app.get("/model-info")
    def model_info():
        if app.state.model is None:
            return _error(503, "model_not_loaded", "model is still loading")
        meta = app.state.metadata
        return {
            "architecture": meta.get("architecture"),
            "dataset_variant": meta.get("dataset_variant"),
            "augmentation_strategy": meta.get("augmentation_strategy"),
            "training_config_digest": meta.get("train_config_digest"),
            "class_order": meta.get("class_order"),
            "model_id": meta.get("checkpoint_digest"),
        }

    @app.post("/predict")
    async def predict(file: UploadFile = File(...), explain: Optional[bool] = Query(default=None)):
        if app.state.model is None:
            return _error(503, "model_not_loaded", "model is still loading")
        payload = await file.read()
        if len(payload) > MAX_UPLOAD_BYTES:
            return _error(422, "image_too_large", f"upload exceeds {MAX_UPLOAD_BYTES} bytes")
        try:
            with PILImage.open(io.BytesIO(payload)) as img:
                array = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        except Exception:
            return _error(422, "undecodable_image", "upload is not a decodable PNG/JPEG image")

        start = time.perf_counter()
        model: ClassifierModel = app.state.model
        probs = predict_proba(model, [array])[0]
        predicted_idx = int(np.argmax(probs))
        response = {
            "label": CLASS_ORDER[predicted_idx].value,
            "probabilities": {label.value: float(p) for label, p in zip(CLASS_ORDER, probs)},
            "model_id": app.state.metadata.get("checkpoint_digest"),
            "heatmap": None,
        }
        want_explain = app.state.explain_default if explain is None else explain
        if want_explain:
            cam = grad_cam(model, array, predicted_idx)
            blended = overlay(cam, array, alpha=0.5)
            buf = io.BytesIO()
            PILImage.fromarray(np.clip(np.round(blended * 255), 0, 255).astype(np.uint8)).save(buf, format="PNG")
            response["heatmap"] = base64.b64encode(buf.getvalue()).decode("ascii")
        response["latency_ms"] = (time.perf_counter() - start) * 1000.0
        return response

    return app


def run(host: str | None = None, port: int | None = None, checkpoint: str | None = None) -> None:
    import uvicorn

    uvicorn.run(
        create_app(checkpoint),
        host=host or os.environ.get("FLUORODX_HOST", "127.0.0.1"),
        port=int(port or os.environ.get("FLUORODX_PORT", "8000")),
    )


if __name__ == "__main__":
    run()
