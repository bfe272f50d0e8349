"""HTTP service: configuration, job queue, engine, and the server.

Public surface:

- config: ServiceConfig, load_config (CLI > env > file > defaults).
- jobs: JobRecord, JobQueue, JOB_STATES.
- engine: DeskEngine (shared state behind endpoints and CLI).
- app: DeskService, serve, ROUTES, map_error.
- schemas: ENDPOINT_SCHEMAS, load_schema, schema_for.
"""
from .app import ROUTES, DeskService, error_payload, map_error, serve
from .config import ENV_PREFIX, ServiceConfig, load_config
from .engine import DRAG_LAMBDA, DeskEngine, build_manifest, shapes_from_manifest
from .jobs import JOB_STATES, JobQueue, JobRecord
from .schemas import ENDPOINT_SCHEMAS, ERROR_SCHEMA, load_schema, schema_for, schema_names

__all__ = [
    "DRAG_LAMBDA",
    "ENDPOINT_SCHEMAS",
    "ENV_PREFIX",
    "ERROR_SCHEMA",
    "JOB_STATES",
    "JobQueue",
    "JobRecord",
    "DeskEngine",
    "DeskService",
    "ROUTES",
    "ServiceConfig",
    "build_manifest",
    "error_payload",
    "load_config",
    "load_schema",
    "map_error",
    "schema_for",
    "schema_names",
    "serve",
    "shapes_from_manifest",
]
