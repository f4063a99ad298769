"""HTTP API over the editing pipeline, consumed by the editor UI and tests.

One service instance exposes every project under a root directory as a
scene. Reads are served directly; job submissions are validated inline and
executed on a single background worker (the gaussian scene is one mutable
resource per project). Every error response carries a machine code:

    {"status": 422, "code": "PLAN_INVALID", "message": "..."}
"""

from __future__ import annotations

import base64
import io
import queue
import socket
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .errors import (
    BackendError,
    DegenerateSegmentationError,
    IcegError,
    IntegrityError,
    JobStateError,
    NotFoundError,
    ParameterError,
    PlanError,
)
from .features import describe_region, extract_features, match_regions
from .pipeline import (
    JobStore,
    create_edit_job,
    make_feature_provider,
    make_segmenter,
    preview_edit,
    resolve_image_ref,
    resolve_plan,
    run_edit_job,
)
from .project import PROJECT_FILE, Project, ProjectConfig
from .segmentation import segment_and_consolidate
from .style2d import save_png


class ApiException(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)


_ERROR_CODES = [
    (PlanError, 422, "PLAN_INVALID"),
    (ParameterError, 422, "PARAM_INVALID"),
    (NotFoundError, 404, "NOT_FOUND"),
    (JobStateError, 409, "JOB_CONFLICT"),
    (DegenerateSegmentationError, 502, "SEGMENTATION_FAILED"),
    (BackendError, 502, "BACKEND_FAILED"),
    (IntegrityError, 500, "FILE_CORRUPT"),
    (IcegError, 500, "INTERNAL"),
]


def _to_api_exception(exc: Exception) -> ApiException:
    if isinstance(exc, ApiException):
        return exc
    for klass, status, code in _ERROR_CODES:
        if isinstance(exc, klass):
            return ApiException(status, code, str(exc))
    return ApiException(500, "INTERNAL", str(exc))


def _png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    save_png(pixels, buf)
    return buf.getvalue()


def _label_png_bytes(maskset) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(maskset.label_map(), mode="L").save(buf, format="PNG")
    return buf.getvalue()


class SceneRegistry:
    """Projects under the service root, keyed by directory name."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def scene_ids(self) -> list[str]:
        return sorted(p.parent.name for p in self.root.glob(f"*/{PROJECT_FILE}"))

    def project(self, scene_id: str) -> Project:
        path = self.root / scene_id
        if not (path / PROJECT_FILE).exists():
            raise ApiException(404, "SCENE_NOT_FOUND", f"no scene {scene_id!r}")
        return Project.open(path)

    def find_job(self, job_id: str):
        for sid in self.scene_ids():
            project = self.project(sid)
            store = JobStore(project)
            if store.exists(job_id):
                return project, store.load(job_id)
        raise ApiException(404, "JOB_NOT_FOUND", f"no job {job_id!r}")


class JobWorker:
    """Single background thread draining a queue of (project, job_id)."""

    def __init__(self):
        self.queue: queue.Queue = queue.Queue()
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def submit(self, project: Project, job_id: str) -> None:
        self.queue.put((project, job_id))

    def _loop(self) -> None:
        while True:
            project, job_id = self.queue.get()
            try:
                run_edit_job(project, job_id=job_id)
            except Exception:
                pass  # the runner already persisted the FAILED record
            finally:
                self.queue.task_done()

    def drain(self) -> None:
        self.queue.join()


def create_app(project_root) -> FastAPI:
    registry = SceneRegistry(Path(project_root))
    worker = JobWorker()
    app = FastAPI(title="iceg", version="0.1.0")
    app.state.registry = registry
    app.state.worker = worker

    def _error_response(exc: Exception) -> JSONResponse:
        api = _to_api_exception(exc)
        return JSONResponse(
            status_code=api.status,
            content={"status": api.status, "code": api.code, "message": api.message},
        )

    @app.exception_handler(ApiException)
    async def _handle_api(request: Request, exc: ApiException):
        return _error_response(exc)

    @app.exception_handler(IcegError)
    async def _handle_iceg(request: Request, exc: IcegError):
        return _error_response(exc)

    @app.exception_handler(Exception)
    async def _handle_any(request: Request, exc: Exception):
        return _error_response(exc)

    def _config(project: Project, overrides: dict | None) -> ProjectConfig:
        if not overrides:
            return project.config
        try:
            return project.config.overridden(**overrides)
        except ParameterError as e:
            raise ApiException(422, "PARAM_INVALID", str(e)) from e

    @app.get("/api/scenes")
    def list_scenes():
        out = []
        for sid in registry.scene_ids():
            project = registry.project(sid)
            dataset = project.load_scene()
            h, w = dataset.resolution
            out.append({"id": sid, "name": project.name, "n_views": len(dataset), "width": w, "height": h})
        return out

    @app.get("/api/scenes/{scene_id}/views")
    def list_views(scene_id: str):
        dataset = registry.project(scene_id).load_scene()
        h, w = dataset.resolution
        return {"view_ids": dataset.view_ids(), "width": w, "height": h}

    @app.get("/api/scenes/{scene_id}/views/{view_id}.png")
    def view_png(scene_id: str, view_id: str):
        dataset = registry.project(scene_id).load_scene()
        if view_id not in dataset.view_ids():
            raise ApiException(404, "VIEW_NOT_FOUND", f"no view {view_id!r}")
        view, _ = dataset.get(view_id)
        return Response(content=_png_bytes(view.pixels), media_type="image/png")

    @app.post("/api/segment")
    def segment(body: dict):
        project = registry.project(str(body.get("scene_id", "")))
        config = _config(project, body.get("config"))
        view_id = str(body.get("view_id", ""))
        dataset = project.load_scene()
        if view_id not in dataset.view_ids():
            raise ApiException(404, "VIEW_NOT_FOUND", f"no view {view_id!r}")
        view, _ = dataset.get(view_id)
        max_masks = int(body.get("max_masks", config.max_masks))
        maskset = segment_and_consolidate(
            view.pixels, make_segmenter(config), max_masks, grid_side=config.grid_side, view_id=view_id
        )
        return {
            "view_id": view_id,
            "shape": list(maskset.shape),
            "mask_ids": maskset.mask_ids(),
            "areas": [m.area for m in maskset.masks],
            "label_map_png_b64": base64.b64encode(_label_png_bytes(maskset)).decode("ascii"),
        }

    @app.post("/api/match")
    def match(body: dict):
        project = registry.project(str(body.get("scene_id", "")))
        config = _config(project, body.get("config"))
        view_id = str(body.get("view_id", ""))
        dataset = project.load_scene()
        if view_id not in dataset.view_ids():
            raise ApiException(404, "VIEW_NOT_FOUND", f"no view {view_id!r}")
        ref = str(body.get("edit_image_ref", ""))
        edit_image = resolve_image_ref(project, ref, dataset)
        backend = make_segmenter(config)
        provider = make_feature_provider(config)
        edit_maskset = segment_and_consolidate(edit_image, backend, config.max_masks, grid_side=config.grid_side)
        edit_feat = extract_features(edit_image, provider)
        descriptors = [describe_region(edit_feat, m) for m in edit_maskset.masks]
        view, _ = dataset.get(view_id)
        maskset = segment_and_consolidate(view.pixels, backend, config.max_masks, grid_side=config.grid_side)
        featmap = extract_features(view.pixels, provider, view_id=view_id)
        assignment = match_regions(maskset, featmap, descriptors, normalization=config.match_normalization)
        return {"view_id": view_id, "entries": assignment.to_dict()}

    @app.post("/api/preview")
    def preview(body: dict):
        project = registry.project(str(body.get("scene_id", "")))
        config = _config(project, body.get("config"))
        view_id = str(body.get("view_id", ""))
        plan = resolve_plan(project, body.get("plan") or {}, config)
        edited = preview_edit(project, view_id, plan, config)
        return Response(content=_png_bytes(edited), media_type="image/png")

    @app.post("/api/jobs")
    def submit_job(body: dict):
        project = registry.project(str(body.get("scene_id", "")))
        config = _config(project, body.get("config"))
        plan = resolve_plan(project, body.get("plan") or {}, config)
        seed = body.get("seed")
        job = create_edit_job(project, plan, config=config, seed=seed, job_id=body.get("job_id"))
        worker.submit(project, job.job_id)
        return JSONResponse(status_code=202, content={"job_id": job.job_id, "state": job.state})

    @app.get("/api/jobs/{job_id}")
    def job_record(job_id: str):
        _, job = registry.find_job(job_id)
        return job.to_dict()

    def _file_png(path: Path, code: str) -> Response:
        if not path.exists():
            raise ApiException(404, code, f"{path.name} not available")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/jobs/{job_id}/renders/{view_id}.png")
    def job_render(job_id: str, view_id: str):
        project, job = registry.find_job(job_id)
        return _file_png(project.renders_dir / job.job_id / f"{view_id}.png", "RENDER_NOT_FOUND")

    @app.get("/api/jobs/{job_id}/edits/{view_id}.png")
    def job_edit(job_id: str, view_id: str):
        project, job = registry.find_job(job_id)
        rel = job.edited_views.get(view_id)
        if rel is None:
            raise ApiException(404, "EDIT_NOT_FOUND", f"view {view_id!r} was not edited by this job")
        return _file_png(project.root / rel, "EDIT_NOT_FOUND")

    return app


def serve(project_root, port: int = 8000, host: str = "127.0.0.1") -> None:
    """Run the service until interrupted. Raises if the port is taken."""
    import uvicorn

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as e:
        raise IcegError(f"cannot serve on {host}:{port}: {e}") from e
    finally:
        probe.close()
    uvicorn.run(create_app(project_root), host=host, port=port, log_level="warning")
