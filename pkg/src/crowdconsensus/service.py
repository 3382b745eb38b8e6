"""HTTP service: upload annotations (or pull them from a platform) and get
back a ZIP with one consensus file per question."""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import __version__, pipeline
from .dataio import RunConfig
from .errors import CrowdError, FormatError, InvalidConfig, InvalidLabelSpace, ValidationError, ModelError
from .platform import PlatformClient, PlatformUnavailable

log = logging.getLogger(__name__)

DEFAULT_BIND = "127.0.0.1:8000"
DEFAULT_MAX_UPLOAD = 50 * 1024 * 1024


@dataclass(frozen=True)
class Settings:
    bind_addr: str = DEFAULT_BIND
    platform_base_url: Optional[str] = None
    platform_api_key: Optional[str] = None
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD
    max_parallel_fits: int = max(1, os.cpu_count() or 1)
    platform_page_size: int = 100

    @classmethod
    def from_env(cls, env=None):
        env = os.environ if env is None else env
        return cls(
            bind_addr=env.get("CCK_BIND_ADDR", DEFAULT_BIND),
            platform_base_url=env.get("CCK_PLATFORM_BASE_URL") or None,
            platform_api_key=env.get("CCK_PLATFORM_API_KEY") or None,
            max_upload_bytes=int(env.get("CCK_MAX_UPLOAD_BYTES", DEFAULT_MAX_UPLOAD)),
        )


def split_bind(addr):
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


class ApiError(Exception):
    def __init__(self, status, code, message, detail=None):
        super().__init__(message)
        self.status, self.code, self.message = status, code, message
        self.detail = detail or {}


def _error(status, code, message, detail=None):
    return JSONResponse({"code": code, "message": message, "detail": detail or {}}, status_code=status)


def _status_for(exc):
    if isinstance(exc, (FormatError, InvalidConfig, InvalidLabelSpace)):
        return 400
    if isinstance(exc, PlatformUnavailable):
        return 502
    if isinstance(exc, (ValidationError, ModelError)):
        return 422
    return 500


def _zip_response(out):
    return Response(out.bundle(), media_type="application/zip",
                    headers={"Content-Disposition": 'attachment; filename="consensus.zip"'})


async def _read_part(form, name, required):
    part = form.get(name)
    if part is None:
        if required:
            raise ApiError(400, "missing_part", f"multipart part {name!r} is required", {"part": name})
        return None
    if isinstance(part, str):
        return part.encode("utf-8")
    return await part.read()


def create_app(settings: Optional[Settings] = None) -> FastAPI:
    settings = settings or Settings.from_env()
    app = FastAPI(title="crowdconsensus", version=__version__)
    fits = threading.BoundedSemaphore(settings.max_parallel_fits)

    def compute(fn, *args):
        with fits:
            return fn(*args)

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request, exc):
        code = {404: "not_found", 405: "method_not_allowed"}.get(exc.status_code, "http_error")
        return _error(exc.status_code, code, str(exc.detail))

    @app.exception_handler(ApiError)
    async def api_error(request, exc):
        return _error(exc.status, exc.code, exc.message, exc.detail)

    @app.exception_handler(CrowdError)
    async def crowd_error(request, exc):
        status = _status_for(exc)
        if status == 500:
            return await internal_error(request, exc)
        return _error(status, exc.code, exc.message, exc.detail)

    @app.exception_handler(Exception)
    async def internal_error(request, exc):
        error_id = uuid.uuid4().hex
        log.exception("internal error %s", error_id)
        return _error(500, "internal_error", "internal server error", {"error_id": error_id})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/v1/consensus")
    async def consensus_upload(request: Request):
        length = request.headers.get("content-length")
        if length and length.isdigit() and int(length) > settings.max_upload_bytes:
            raise ApiError(413, "payload_too_large", f"upload exceeds {settings.max_upload_bytes} bytes")
        body = await request.body()
        if len(body) > settings.max_upload_bytes:
            raise ApiError(413, "payload_too_large", f"upload exceeds {settings.max_upload_bytes} bytes")
        if not request.headers.get("content-type", "").startswith("multipart/form-data"):
            raise ApiError(400, "bad_request", "expected multipart/form-data")
        try:
            form = await request.form(max_part_size=settings.max_upload_bytes)
        except Exception as exc:  # malformed multipart framing
            raise ApiError(400, "bad_request", f"could not parse multipart body: {exc}") from None
        annotations = await _read_part(form, "annotations", True)
        tasks = await _read_part(form, "tasks", False)
        config = RunConfig.from_json(await _read_part(form, "config", True))
        out = await run_in_threadpool(compute, pipeline.run_csv, annotations, tasks, config)
        return _zip_response(out)

    @app.post("/v1/consensus/platform")
    async def consensus_from_platform(request: Request):
        try:
            doc = json.loads(await request.body())
        except ValueError:
            raise ApiError(400, "bad_request", "body must be JSON") from None
        if not isinstance(doc, dict) or "project_id" not in doc:
            raise ApiError(400, "bad_request", "body needs project_id and config")
        config = RunConfig.from_dict(doc.get("config") or {})
        if not settings.platform_base_url:
            raise ApiError(502, "platform_unavailable", "no platform base URL configured")

        def fetch():
            with PlatformClient(settings.platform_base_url, settings.platform_api_key,
                                settings.platform_page_size) as client:
                return client.fetch_project(doc["project_id"])

        def run(raw_tasks, raw_annotations):
            dataset = pipeline.build_dataset(raw_annotations, raw_tasks, config)
            return pipeline.run_dataset(dataset, config)

        raw_tasks, raw_annotations = await run_in_threadpool(fetch)
        out = await run_in_threadpool(compute, run, raw_tasks, raw_annotations)
        return _zip_response(out)

    return app


def serve(settings: Optional[Settings] = None):
    import uvicorn

    settings = settings or Settings.from_env()
    host, port = split_bind(settings.bind_addr)
    uvicorn.run(create_app(settings), host=host, port=port, log_level="info")
