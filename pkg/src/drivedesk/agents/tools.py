"""Tool bindings: the bridge from agent tasks to engine operations.

A tool is a pure function ``(ToolContext, args: dict) -> dict payload``.
Payloads are JSON values; artifacts produced by a tool go into the
context's content-addressed store and appear in the payload as
``{"id", "kind"}`` references (never paths), which keeps transcripts
content-addressed and replayable after a store migration.

The standard registry binds one tool per command verb plus the styling
agent's metadata tool.  All tools are deterministic: same context data and
arguments, same payload — that property is what replay verification
checks end to end.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codec import DecoderParams, LatentCode, interpolate, reconstruct
from ..errors import InvalidModel, InvalidParams, NotFound, UnresolvedTool
from ..geometry.marching import marching_cubes
from ..geometry.trimesh import stl_bytes
from ..imaging import (
    canny,
    feature_descriptor,
    parse_pgm,
    pgm_bytes,
    render_silhouette,
)
from ..mesher import (
    DomainSpec,
    RefinementRegion,
    background_mesh,
    castellate,
    check_mesh,
    read_vtk,
    refine,
    vtk_bytes,
    MAX_LEVEL_CAP,
)
from ..retrieval import (
    FeatureEntry,
    FeatureIndex,
    retrieve_by_feature,
    retrieve_by_latent,
)
from ..shapegen import CarParams, build_record, describe
from ..store import ArtifactStore
from ..surrogate import RidgeModel, drag_oracle, predict_cd
from .grammar import VERBS

# which tool realizes each command verb
VERB_TOOLS = {
    "sketch": "make_sketch",
    "render": "render_silhouette",
    "retrieve": "retrieve_similar",
    "interpolate": "interpolate_codes",
    "reconstruct": "reconstruct_mesh",
    "mesh": "build_mesh",
    "checkmesh": "check_mesh",
    "refine": "refine_mesh",
    "predict-drag": "predict_drag",
    "report": "compose_report",
}
assert set(VERB_TOOLS) == set(VERBS)

DEFAULT_DOMAIN = DomainSpec(
    box_min=(-3.0, -2.0, -1.2),
    box_max=(5.0, 2.0, 1.8),
    counts=(8, 4, 3),
    keep_point=(3.5, 0.0, 0.5),
)

_RENDER_SIZE = 128  # default raster for tool-produced images
_RECORD_RESOLUTION = 48  # marching-cubes grid for canonical shape records
_DB_STL_RESOLUTION = 24  # geometry files backing the feature index
_QUERY_SIZE = 160  # re-render size for shape-based retrieval queries


@dataclass
class ToolContext:
    """Everything tools may touch: the store plus bound engine state.

    ``shapes`` is the canonical dataset (id -> CarParams).  Decoder,
    latent table and drag model are optional; tools that need a missing
    binding fail with a toolkit error, which the runtime records as an
    error tool_result.
    """

    store: ArtifactStore
    shapes: dict
    decoder: DecoderParams | None = None
    latents: dict | None = None
    drag_model: RidgeModel | None = None
    domain: DomainSpec = DEFAULT_DOMAIN
    _records: dict = field(default_factory=dict, repr=False)
    _feature_index: FeatureIndex | None = field(default=None, repr=False)

    def params_of(self, shape_id: str) -> CarParams:
        try:
            return self.shapes[shape_id]
        except KeyError:
            raise NotFound(f"unknown shape id {shape_id!r}") from None

    def record_of(self, shape_id: str):
        """Unit-sphere-normalized shape record, cached per context."""
        if shape_id not in self._records:
            self._records[shape_id] = build_record(
                self.params_of(shape_id), resolution=_RECORD_RESOLUTION
            )
        return self._records[shape_id]


def _require(args: dict, key: str) -> object:
    if key not in args:
        raise InvalidParams(f"missing required option --{key}")
    return args[key]


def _sketch_image(ctx: ToolContext, shape_id: str, view: str, size: int):
    record = ctx.record_of(shape_id)
    silhouette = render_silhouette(record.field, view, size)
    return canny(silhouette)


def tool_render_silhouette(ctx: ToolContext, args: dict) -> dict:
    shape_id = str(_require(args, "shape"))
    view = str(args.get("view", "side"))
    size = int(args.get("size", _RENDER_SIZE))
    record = ctx.record_of(shape_id)
    img = render_silhouette(record.field, view, size)
    ref = ctx.store.put(pgm_bytes(img), "pgm")
    return {"artifact": ref.to_jsonable(), "shape": shape_id, "view": view, "size": size}


def tool_make_sketch(ctx: ToolContext, args: dict) -> dict:
    shape_id = str(_require(args, "shape"))
    view = str(args.get("view", "side"))
    size = int(args.get("size", _RENDER_SIZE))
    img = _sketch_image(ctx, shape_id, view, size)
    ref = ctx.store.put(pgm_bytes(img), "pgm")
    return {"artifact": ref.to_jsonable(), "shape": shape_id, "view": view, "size": size}


def tool_attach_metadata(ctx: ToolContext, args: dict) -> dict:
    shape_id = str(_require(args, "shape"))
    meta = describe(ctx.params_of(shape_id))
    ref = ctx.store.put_json(meta)
    return {"artifact": ref.to_jsonable(), "shape": shape_id, "category": meta["category"]}


def _feature_db(ctx: ToolContext) -> FeatureIndex:
    """Feature index over the whole context dataset, built once.

    Entries carry store-backed STL paths so geometry-missing filtering
    has real files to check.
    """
    if ctx._feature_index is None:
        entries = {}
        for shape_id in sorted(ctx.shapes):
            record = ctx.record_of(shape_id)
            sketch = _sketch_image(ctx, shape_id, "side", _RENDER_SIZE)
            sketch_ref = ctx.store.put(pgm_bytes(sketch), "pgm")
            stl = marching_cubes(record.field, _DB_STL_RESOLUTION)
            stl_ref = ctx.store.put(stl_bytes(stl), "stl")
            entries[shape_id] = FeatureEntry(
                features=feature_descriptor(sketch),
                stl_path=stl_ref.path,
                sketch_path=sketch_ref.path,
            )
        ctx._feature_index = FeatureIndex(entries)
    return ctx._feature_index


def tool_retrieve_similar(ctx: ToolContext, args: dict) -> dict:
    """Rank dataset shapes against a query.

    Three query forms: --query <pgm artifact id> matches by sketch
    descriptor; --shape <id> with a latent table ranks the category by
    latent distance; --shape <id> without one re-renders the shape at a
    held-out raster size and matches by descriptor.
    """
    k = int(args.get("k", 3))
    if "query" in args:
        img = parse_pgm(ctx.store.get(str(args["query"])))
        result = retrieve_by_feature(img, _feature_db(ctx), k)
        mode = "feature"
    elif "shape" in args:
        shape_id = str(args["shape"])
        if ctx.latents and shape_id in ctx.latents:
            category = str(args.get("category") or shape_id.split("-", 1)[0])
            result = retrieve_by_latent(ctx.latents[shape_id], category, k, ctx.latents)
            mode = "latent"
        else:
            img = _sketch_image(ctx, shape_id, "side", _QUERY_SIZE)
            result = retrieve_by_feature(img, _feature_db(ctx), k)
            mode = "feature"
    else:
        raise InvalidParams("retrieve needs --query <artifact> or --shape <id>")
    return {
        "mode": mode,
        "k": k,
        "entries": [
            {"shape": e.shape_id, "score": float(e.score)} for e in result.entries
        ],
    }


def _latent_from_args(ctx: ToolContext, args: dict) -> LatentCode:
    if "latent" in args:
        data = ctx.store.get_json(str(args["latent"]))
        try:
            values = data["values"]
        except (TypeError, KeyError):
            raise InvalidParams("latent artifact must be JSON with a 'values' list")
        return LatentCode(np.asarray(values, dtype=float))
    if "shape" in args:
        shape_id = str(args["shape"])
        if not ctx.latents or shape_id not in ctx.latents:
            raise NotFound(f"no latent code bound for shape {shape_id!r}")
        return ctx.latents[shape_id]
    raise InvalidParams("need --latent <artifact> or --shape <id>")


def tool_interpolate_codes(ctx: ToolContext, args: dict) -> dict:
    ids = [str(s) for s in _require(args, "ids")]
    weights = [float(w) for w in _require(args, "weights")]
    if not ctx.latents:
        raise NotFound("no latent table bound to this session")
    codes = []
    for shape_id in ids:
        if shape_id not in ctx.latents:
            raise NotFound(f"no latent code bound for shape {shape_id!r}")
        codes.append(ctx.latents[shape_id])
    blended = interpolate(codes, weights)
    ref = ctx.store.put_json(
        {"values": [float(v) for v in blended.values], "parents": ids, "weights": weights}
    )
    return {"artifact": ref.to_jsonable(), "ids": ids, "weights": weights}


def tool_reconstruct_mesh(ctx: ToolContext, args: dict) -> dict:
    if ctx.decoder is None:
        raise InvalidModel("no decoder bound to this session")
    resolution = int(args.get("resolution", 48))
    z = _latent_from_args(ctx, args)
    mesh = reconstruct(ctx.decoder, z, resolution)
    ref = ctx.store.put(stl_bytes(mesh), "stl")
    return {
        "artifact": ref.to_jsonable(),
        "triangles": int(len(mesh.triangles)),
        "resolution": resolution,
    }


def tool_build_mesh(ctx: ToolContext, args: dict) -> dict:
    """Background hex mesh of the flow domain; with --shape, refine a
    surface band and castellate the shape out of the domain."""
    mesh = background_mesh(ctx.domain)
    if "shape" in args:
        record = ctx.record_of(str(args["shape"]))
        level = int(args.get("level", 1))
        band = RefinementRegion.surface_band(distance=0.3, level=level)
        mesh = refine(mesh, [band], body=record.field)
        if bool(args.get("castellate", True)):
            mesh = castellate(mesh, record.field)
    ref = ctx.store.put(vtk_bytes(mesh), "vtk")
    return {
        "artifact": ref.to_jsonable(),
        "cells": int(len(mesh.leaves)),
        "max_level": int(max(leaf[0] for leaf in mesh.leaves)),
    }


def tool_refine_mesh(ctx: ToolContext, args: dict) -> dict:
    """One more refinement pass over a stored mesh.

    Default region: the central half of the domain box, one level above
    the mesh's current deepest level — always a strict cell-count
    increase until the level cap.
    """
    mesh = read_vtk(ctx.store.ref(str(_require(args, "mesh"))).path)
    current_max = max(leaf[0] for leaf in mesh.leaves)
    level = int(args.get("level", min(current_max + 1, MAX_LEVEL_CAP)))
    if "box" in args:
        values = [float(v) for v in args["box"]]
        if len(values) != 6:
            raise InvalidParams("--box needs x0,y0,z0,x1,y1,z1")
        lo, hi = tuple(values[:3]), tuple(values[3:])
    else:
        mins = np.asarray(mesh.spec.box_min)
        maxs = np.asarray(mesh.spec.box_max)
        lo = tuple((mins + 0.25 * (maxs - mins)).tolist())
        hi = tuple((mins + 0.75 * (maxs - mins)).tolist())
    region = RefinementRegion.box_region(lo, hi, level)
    refined = refine(mesh, [region])
    ref = ctx.store.put(vtk_bytes(refined), "vtk")
    return {
        "artifact": ref.to_jsonable(),
        "cells": int(len(refined.leaves)),
        "added": int(len(refined.leaves) - len(mesh.leaves)),
        "level": level,
    }


def tool_check_mesh(ctx: ToolContext, args: dict) -> dict:
    mesh = read_vtk(ctx.store.ref(str(_require(args, "mesh"))).path)
    report = check_mesh(mesh)
    ref = ctx.store.put_json(report.to_jsonable())
    return {
        "artifact": ref.to_jsonable(),
        "overall_pass": bool(report.overall_pass),
        "cells": int(report.cell_count),
        "checks": [
            {"name": c.name, "pass": bool(c.passed)} for c in report.checks
        ],
    }


def tool_predict_drag(ctx: ToolContext, args: dict) -> dict:
    """Drag estimate: the calibrated oracle for dataset shapes, or the
    fitted latent-space regressor for a latent artifact."""
    if "latent" in args:
        if ctx.drag_model is None:
            raise NotFound("no drag model bound to this session")
        z = _latent_from_args(ctx, args)
        return {"cd": float(predict_cd(ctx.drag_model, z)), "source": "surrogate"}
    if "shape" in args:
        shape_id = str(args["shape"])
        return {
            "cd": float(drag_oracle(ctx.params_of(shape_id))),
            "source": "oracle",
            "shape": shape_id,
        }
    raise InvalidParams("predict-drag needs --shape <id> or --latent <artifact>")


def tool_compose_report(ctx: ToolContext, args: dict) -> dict:
    """Aggregate upstream artifacts into one JSON report artifact."""
    inputs = [str(s) for s in args.get("inputs", [])]
    items = []
    for artifact_id in inputs:
        ref = ctx.store.ref(artifact_id)  # NotFound if a reference dangles
        items.append(ref.to_jsonable())
    title = str(args.get("title", "design review"))
    ref = ctx.store.put_json({"title": title, "inputs": items, "count": len(items)})
    return {"artifact": ref.to_jsonable(), "title": title, "count": len(items)}


class ToolRegistry:
    """Named tool table; agent specs must resolve against one of these."""

    def __init__(self, tools: dict | None = None) -> None:
        self._tools: dict = dict(tools or {})

    def register(self, name: str, fn) -> None:
        if not name or not isinstance(name, str):
            raise InvalidParams(f"tool name must be a non-empty string, got {name!r}")
        if not callable(fn):
            raise InvalidParams(f"tool {name!r} must be callable")
        self._tools[name] = fn

    def resolve(self, name: str):
        try:
            return self._tools[name]
        except KeyError:
            raise UnresolvedTool(f"no tool named {name!r} in the registry") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def names(self) -> list:
        return sorted(self._tools)


def standard_tool_registry() -> ToolRegistry:
    return ToolRegistry(
        {
            "render_silhouette": tool_render_silhouette,
            "make_sketch": tool_make_sketch,
            "attach_metadata": tool_attach_metadata,
            "retrieve_similar": tool_retrieve_similar,
            "interpolate_codes": tool_interpolate_codes,
            "reconstruct_mesh": tool_reconstruct_mesh,
            "build_mesh": tool_build_mesh,
            "refine_mesh": tool_refine_mesh,
            "check_mesh": tool_check_mesh,
            "predict_drag": tool_predict_drag,
            "compose_report": tool_compose_report,
        }
    )


def standard_agents() -> list:
    """The five stock agents, named after their roles."""
    from .types import AgentSpec

    return [
        AgentSpec("styling", "styling", ("render_silhouette", "make_sketch", "attach_metadata")),
        AgentSpec("cad", "cad", ("retrieve_similar", "interpolate_codes", "reconstruct_mesh")),
        AgentSpec("meshing", "meshing", ("build_mesh", "refine_mesh", "check_mesh")),
        AgentSpec("simulation", "simulation", ("predict_drag",)),
        AgentSpec("orchestrator", "orchestrator", ("compose_report",)),
    ]
