"""Published response schemas and the endpoint-to-schema index.

Schema files ship inside the package (``drivedesk/service/schemas``); the
index below keys them by the route names in ``app.ROUTES`` so a test can
walk every endpoint and validate its response.  Binary artifact downloads
have no JSON schema; the ``artifact`` entry covers the JSON-kind case.
"""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from ..errors import NotFound

#: route name (see app.ROUTES) -> schema file for its success response
ENDPOINT_SCHEMAS = {
    "health": "health.json",
    "shapes": "shapes.json",
    "train": "job.json",
    "job": "job.json",
    "sketch": "sketch.json",
    "retrieve_sketch": "retrieve.json",
    "retrieve_feature": "retrieve.json",
    "interpolate": "interpolate.json",
    "reconstruct": "reconstruct.json",
    "mesh": "job.json",
    "refine": "job.json",
    "quality": "quality.json",
    "predict": "predict.json",
    "eval": "eval.json",
    "create_session": "session.json",
    "message": "messages.json",
    "transcript": "transcript.json",
    "artifact": "artifact_json.json",
}

#: every error response, any endpoint
ERROR_SCHEMA = "error.json"


def schema_names() -> list:
    return sorted(set(ENDPOINT_SCHEMAS.values()) | {ERROR_SCHEMA})


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    path = resources.files("drivedesk.service").joinpath("schemas", name)
    try:
        text = path.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError):
        raise NotFound(f"no shipped schema named {name!r}") from None
    return json.loads(text)


def schema_for(route_name: str) -> dict:
    try:
        file_name = ENDPOINT_SCHEMAS[route_name]
    except KeyError:
        raise NotFound(f"no schema registered for route {route_name!r}") from None
    return load_schema(file_name)
