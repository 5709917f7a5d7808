"""HTTP service for live trial conduct.

One JSON document per trial on a filesystem store; mutations go through an
optimistic version check so exactly one of two racing writers succeeds.  The
audit log is append-only and carries enough payload to replay a trial from
scratch; randomness is server-seeded, so replay reproduces the identical
state.  Long efficacy fits can run on a bounded worker pool: enrollment
either returns the recommendation directly or, in async mode, a job token to
poll.
"""

from __future__ import annotations

import hashlib
import json
import os
import pathlib
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, Header, Query, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from doseopt.covariates import CovariateSchema
from doseopt.design import (
    DesignConfig,
    DuplicateOutcomeError,
    ExcludedSubgroupError,
    StageError,
    TrialEngine,
    TrialState,
    UnknownPatientError,
)
from doseopt.grid import DoseGrid, InputError


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field_paths=()):
        self.status = status
        self.code = code
        self.message = message
        self.field_paths = list(field_paths)


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class TrialStore:
    """Filesystem key-value store with per-trial optimistic versioning."""

    def __init__(self, root):
        self.root = pathlib.Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, trial_id: str) -> pathlib.Path:
        return self.root / f"{trial_id}.json"

    def create(self, doc: dict) -> None:
        with self._lock:
            path = self._path(doc["trial_id"])
            if path.exists():
                raise ApiError(409, "conflict", f"trial {doc['trial_id']} already exists")
            path.write_text(json.dumps(doc, sort_keys=True))

    def load(self, trial_id: str) -> dict:
        path = self._path(trial_id)
        if not path.exists():
            raise ApiError(404, "not_found", f"no trial {trial_id}")
        return json.loads(path.read_text())

    def save(self, doc: dict, expected_version: int) -> None:
        """Compare-and-swap on the document version."""
        with self._lock:
            current = self.load(doc["trial_id"])
            if current["version"] != expected_version:
                raise ApiError(
                    409, "version_conflict",
                    f"trial {doc['trial_id']} moved from version {expected_version}",
                )
            doc["version"] = expected_version + 1
            tmp = self._path(doc["trial_id"]).with_suffix(".tmp")
            tmp.write_text(json.dumps(doc, sort_keys=True))
            os.replace(tmp, self._path(doc["trial_id"]))

    def idempotency_lookup(self, key: str):
        path = self.root / "idempotency.json"
        if path.exists():
            return json.loads(path.read_text()).get(key)
        return None

    def idempotency_record(self, key: str, trial_id: str) -> None:
        with self._lock:
            path = self.root / "idempotency.json"
            table = json.loads(path.read_text()) if path.exists() else {}
            table[key] = trial_id
            path.write_text(json.dumps(table, sort_keys=True))

    def list_ids(self) -> list:
        return sorted(p.stem for p in self.root.glob("*.json") if p.stem != "idempotency")


def new_document(state: TrialState, trial_id: str) -> dict:
    return {"trial_id": trial_id, "version": 1, "state": state.to_dict(), "audit_log": []}


def append_audit(doc: dict, actor: str, action: str, payload) -> None:
    doc["audit_log"].append(
        {
            "timestamp": time.time(),
            "actor": actor,
            "action": action,
            "payload": payload,
            "payload_digest": _digest(payload),
        }
    )


def replay_from_audit(doc: dict) -> TrialState:
    """Rebuild the trial state by replaying enrollment/outcome actions."""
    base = TrialState.from_dict(doc["state"])
    engine = TrialEngine.new(base.config, base.grid, base.schema, base.seed)
    # replay uses the original schema captured at creation
    engine.state.schema = CovariateSchema.from_dict(doc["audit_log"][0]["payload"]["schema"]) \
        if doc["audit_log"] and doc["audit_log"][0]["action"] == "create" else base.schema
    for entry in doc["audit_log"]:
        if entry["action"] == "enroll":
            engine.enroll(entry["payload"]["pattern"], entry["payload"]["at"])
        elif entry["action"] == "outcome":
            engine.record_outcome(entry["payload"]["patient_id"], entry["payload"]["outcome"])
    return engine.state


class CreateTrialRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    grid: dict
    schema_: dict | None = Field(default=None, alias="schema")
    seed: int = 0
    idempotency_key: str | None = None

    model_config = {"populate_by_name": True}


class EnrollRequest(BaseModel):
    pattern: dict = Field(default_factory=dict)
    at: float = Field(ge=0)


class OutcomeRequest(BaseModel):
    tox: int | None = Field(default=None, ge=0, le=1)
    tox_time: float | None = None
    eff: int | None = Field(default=None, ge=0, le=1)
    eff_time: float | None = None
    auc: float | None = Field(default=None, gt=0)


def create_app(data_dir=None, frontend_dir=None) -> FastAPI:
    data_dir = data_dir or os.environ.get("DOSEOPT_DATA_DIR", ".doseopt-data")
    workers = int(os.environ.get("DOSEOPT_WORKERS", "2"))
    token = os.environ.get("DOSEOPT_TOKEN")
    store = TrialStore(data_dir)
    pool = ThreadPoolExecutor(max_workers=max(workers, 1))
    jobs: dict = {}

    app = FastAPI(title="doseopt trial service", version="1.0")
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "field_paths": exc.field_paths},
        )

    def _auth(authorization: str | None):
        if token and authorization != f"Bearer {token}":
            raise ApiError(401, "unauthorized", "missing or invalid token")

    def _engine(doc: dict) -> TrialEngine:
        return TrialEngine(TrialState.from_dict(doc["state"]))

    def _domain_error(exc: Exception) -> ApiError:
        if isinstance(exc, ExcludedSubgroupError):
            return ApiError(409, "excluded_subgroup", str(exc))
        if isinstance(exc, StageError):
            return ApiError(409, "stage_conflict", str(exc))
        if isinstance(exc, UnknownPatientError):
            return ApiError(404, "not_found", str(exc))
        if isinstance(exc, DuplicateOutcomeError):
            return ApiError(409, "duplicate_outcome", str(exc))
        if isinstance(exc, InputError):
            return ApiError(422, "validation_error", str(exc))
        raise exc

    @app.post("/v1/trials", status_code=201)
    def create_trial(
        req: CreateTrialRequest,
        authorization: str | None = Header(default=None),
        x_actor: str = Header(default="anonymous"),
    ):
        _auth(authorization)
        if req.idempotency_key:
            existing = store.idempotency_lookup(req.idempotency_key)
            if existing:
                doc = store.load(existing)
                return {"trial_id": existing, "stage": doc["state"]["stage"], "duplicate": True}
        try:
            config = DesignConfig.from_dict(req.config) if req.config else DesignConfig()
            grid = DoseGrid.from_dict(req.grid)
            schema = CovariateSchema.from_dict(req.schema_) if req.schema_ else CovariateSchema(())
            engine = TrialEngine.new(config, grid, schema, req.seed)
        except (InputError, TypeError, KeyError) as exc:
            raise ApiError(422, "validation_error", str(exc), field_paths=_guess_fields(exc))
        trial_id = uuid.uuid4().hex[:12]
        doc = new_document(engine.state, trial_id)
        append_audit(
            doc, x_actor, "create",
            {"config": config.to_dict(), "grid": grid.to_dict(), "schema": schema.to_dict(), "seed": req.seed},
        )
        store.create(doc)
        if req.idempotency_key:
            store.idempotency_record(req.idempotency_key, trial_id)
        return {"trial_id": trial_id, "stage": engine.state.stage, "duplicate": False}

    def _do_enroll(trial_id: str, req: EnrollRequest, actor: str) -> dict:
        doc = store.load(trial_id)
        version = doc["version"]
        engine = _engine(doc)
        try:
            rec = engine.enroll(req.pattern, req.at)
        except Exception as exc:  # noqa: BLE001 - mapped to API errors below
            err = _domain_error(exc)
            # a futility stop mutates state even when enrollment is refused
            if engine.state.to_dict() != doc["state"]:
                doc["state"] = engine.state.to_dict()
                append_audit(doc, actor, "enroll_refused", {"pattern": req.pattern, "at": req.at})
                store.save(doc, version)
            raise err
        doc["state"] = engine.state.to_dict()
        append_audit(doc, actor, "enroll", {"pattern": req.pattern, "at": req.at})
        store.save(doc, version)
        return rec

    @app.post("/v1/trials/{trial_id}/patients")
    def enroll(
        trial_id: str,
        req: EnrollRequest,
        mode: str = Query(default="sync"),
        authorization: str | None = Header(default=None),
        x_actor: str = Header(default="anonymous"),
    ):
        _auth(authorization)
        if mode == "async":
            job_id = uuid.uuid4().hex[:12]
            jobs[job_id] = {"status": "pending", "result": None, "error": None}

            def _work():
                try:
                    jobs[job_id] = {"status": "done", "result": _do_enroll(trial_id, req, x_actor), "error": None}
                except ApiError as exc:
                    jobs[job_id] = {
                        "status": "failed", "result": None,
                        "error": {"code": exc.code, "message": exc.message},
                    }

            pool.submit(_work)
            return JSONResponse(status_code=202, content={"job_id": job_id, "status": "pending"})
        return _do_enroll(trial_id, req, x_actor)

    @app.get("/v1/trials/{trial_id}/jobs/{job_id}")
    def job_status(trial_id: str, job_id: str, authorization: str | None = Header(default=None)):
        _auth(authorization)
        if job_id not in jobs:
            raise ApiError(404, "not_found", f"no job {job_id}")
        return jobs[job_id]

    @app.post("/v1/trials/{trial_id}/patients/{patient_id}/outcomes")
    def record_outcome(
        trial_id: str,
        patient_id: int,
        req: OutcomeRequest,
        authorization: str | None = Header(default=None),
        x_actor: str = Header(default="anonymous"),
    ):
        _auth(authorization)
        doc = store.load(trial_id)
        version = doc["version"]
        engine = _engine(doc)
        outcome = {}
        if req.tox is not None:
            outcome["tox"] = req.tox
            outcome["tox_time"] = req.tox_time
        if req.eff is not None:
            outcome["eff"] = req.eff
            outcome["eff_time"] = req.eff_time
        if req.auc is not None:
            outcome["auc"] = req.auc
        try:
            info = engine.record_outcome(patient_id, outcome)
        except Exception as exc:  # noqa: BLE001
            raise _domain_error(exc)
        doc["state"] = engine.state.to_dict()
        append_audit(doc, x_actor, "outcome", {"patient_id": patient_id, "outcome": outcome})
        store.save(doc, version)
        return info

    @app.get("/v1/trials/{trial_id}/report")
    def get_report(
        trial_id: str,
        request: Request,
        curves: int = Query(default=1),
        authorization: str | None = Header(default=None),
    ):
        _auth(authorization)
        doc = store.load(trial_id)
        engine = _engine(doc)
        out = engine.summary()
        out["trial_id"] = trial_id
        out["version"] = doc["version"]
        out["schema"] = engine.state.schema.to_dict()
        pattern = {
            k: v for k, v in request.query_params.items()
            if k in {c.name for c in engine.state.schema.characteristics}
        }
        if curves:
            try:
                out["curves"] = engine.report_curves(pattern or None)
            except Exception as exc:  # noqa: BLE001
                raise _domain_error(exc)
            out["curves"]["pattern"] = pattern
        return out

    @app.get("/v1/trials")
    def list_trials(authorization: str | None = Header(default=None)):
        _auth(authorization)
        return {"trials": store.list_ids()}

    front = pathlib.Path(frontend_dir) if frontend_dir else _default_frontend()
    if front and front.is_dir():

        @app.get("/")
        def index():
            return FileResponse(front / "index.html")

        @app.get("/{asset}.js")
        def bundle(asset: str):
            path = (front / f"{asset}.js").resolve()
            if front.resolve() not in path.parents or not path.is_file():
                raise ApiError(404, "not_found", f"no asset {asset}.js")
            return FileResponse(path, media_type="text/javascript")

    return app


def _default_frontend():
    here = pathlib.Path(__file__).resolve()
    for base in (here.parent.parent.parent, pathlib.Path.cwd()):
        cand = base / "frontend" / "dist"
        if cand.is_dir():
            return cand
    return None


def _guess_fields(exc: Exception) -> list:
    text = str(exc)
    fields = []
    for token in ("n1", "n2", "skeleton", "dosage", "prevalence", "reference"):
        if token in text:
            fields.append(token)
    return fields
