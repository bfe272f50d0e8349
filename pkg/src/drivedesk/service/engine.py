"""Shared engine state behind the HTTP endpoints and the CLI.

One DeskEngine owns the artifact store, the current shape dataset (as a
ToolContext), the decoder/latent bindings, the drag model, interactive
sessions, and the job queue.  Endpoint handlers delegate here; handlers
never touch engine internals directly.

Handlers reuse the agent tool functions wherever a tool exists for the
operation, so HTTP payloads and transcript tool_result payloads stay
structurally identical.

Concurrency: short operations run under one engine lock.  Long jobs
(train, mesh, refine) snapshot the context under the lock, work without
it, and re-acquire it only to bind results.  The store itself is safe for
concurrent writers (content-addressed, atomic renames).
"""
from __future__ import annotations

import base64
import binascii
import os
import tempfile
import threading

import numpy as np

from .. import __version__
from ..codec import (
    LatentCode,
    TrainConfig,
    load_checkpoint,
    load_latent_table,
    save_checkpoint,
    train,
)
from ..errors import (
    EmptyCategory,
    InvalidParams,
    ModelNotFitted,
    NotFound,
)
from ..geometry.sampling import sample_sdf
from ..imaging import parse_pgm, pgm_bytes
from ..shapegen import CarParams, build_record, params_id, sample_params
from ..store import ArtifactStore
from ..surrogate import (
    DragSample,
    delta_cd,
    drag_oracle,
    eval_distribution,
    eval_trend,
    fit_ridge,
)
from ..agents import (
    AUTO_RECIPIENT,
    CATEGORY_NAMES,
    AgentRegistry,
    Session,
    make_prompt,
    session_step,
    standard_agents,
    standard_tool_registry,
)
from ..agents.tools import (
    ToolContext,
    tool_build_mesh,
    tool_check_mesh,
    tool_interpolate_codes,
    tool_make_sketch,
    tool_predict_drag,
    tool_reconstruct_mesh,
    tool_refine_mesh,
    tool_retrieve_similar,
)
from .config import ServiceConfig
from .jobs import JobQueue

#: ridge strength used whenever the engine fits the drag model itself
DRAG_LAMBDA = 1e-2

#: Table-4 row order for the evaluation payload
DELTA_PAIRS = (("FD", "FS"), ("FD", "N"), ("E", "FD"), ("N", "FS"), ("E", "FS"), ("E", "N"))

_CONTENT_TYPES = {
    "stl": "model/stl",
    "pgm": "image/x-portable-graymap",
    "vtk": "text/plain",
    "json": "application/json",
    "checkpoint": "application/octet-stream",
}

_DTYPES = {"float32": np.float32, "float64": np.float64}

_MAX_RESOLUTION = 128


def _require_type(value, types, what: str):
    if not isinstance(value, types):
        raise InvalidParams(f"{what} has the wrong type")
    return value


def _get_int(body: dict, key: str, default=None, low=None, high=None):
    if key not in body:
        if default is None:
            raise InvalidParams(f"missing required field {key!r}")
        return default
    value = body[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidParams(f"field {key!r} must be an integer")
    if low is not None and value < low:
        raise InvalidParams(f"field {key!r} must be >= {low}")
    if high is not None and value > high:
        raise InvalidParams(f"field {key!r} must be <= {high}")
    return value


def _get_str(body: dict, key: str, default=None):
    if key not in body:
        if default is None:
            raise InvalidParams(f"missing required field {key!r}")
        return default
    value = body[key]
    if not isinstance(value, str) or not value:
        raise InvalidParams(f"field {key!r} must be a non-empty string")
    return value


def build_manifest(per_category: int, seed: int) -> dict:
    """Deterministic dataset manifest: same arguments, same JSON."""
    params_list = sample_params(per_category, seed=seed)
    return {
        "per_category": per_category,
        "seed": seed,
        "count": len(params_list),
        "shapes": [{"id": params_id(p), "params": p.to_dict()} for p in params_list],
    }


def shapes_from_manifest(manifest: dict) -> dict:
    """id -> CarParams in manifest order; ids are verified against params."""
    if not isinstance(manifest, dict) or not isinstance(manifest.get("shapes"), list):
        raise InvalidParams("manifest must be a JSON object with a 'shapes' list")
    shapes: dict = {}
    for row in manifest["shapes"]:
        if not isinstance(row, dict) or "id" not in row or "params" not in row:
            raise InvalidParams("manifest rows need 'id' and 'params'")
        params = CarParams.from_dict(row["params"])
        if params_id(params) != row["id"]:
            raise InvalidParams(f"manifest id {row['id']!r} does not match its params")
        shapes[row["id"]] = params
    return shapes


class DeskEngine:
    """All service state; every public method returns a jsonable payload."""

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        os.makedirs(config.data_dir, exist_ok=True)
        self.store = ArtifactStore(os.path.join(config.data_dir, "artifacts"))
        self.tools = standard_tool_registry()
        self.registry = AgentRegistry(self.tools)
        for spec in standard_agents():
            self.registry.register(spec)
        self.jobs = JobQueue(config.workers)
        self.context = ToolContext(store=self.store, shapes={})
        self._sessions: dict = {}
        self._session_counter = 0
        self._lock = threading.RLock()
        if config.dataset_path:
            self._preload_dataset(config.dataset_path)
        if config.checkpoint_path:
            self.context.decoder = load_checkpoint(config.checkpoint_path)
        if config.latents_path:
            self.context.latents = load_latent_table(config.latents_path)
            self._refit_drag_model()

    # -- dataset ------------------------------------------------------------

    def _preload_dataset(self, path: str) -> None:
        import json

        try:
            with open(path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except OSError as exc:
            raise InvalidParams(f"cannot read dataset manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidParams(f"dataset manifest {path} is not valid JSON: {exc}") from exc
        self.context = ToolContext(store=self.store, shapes=shapes_from_manifest(manifest))

    def generate_shapes(self, body: dict) -> dict:
        per_category = _get_int(body, "per_category", low=1, high=256)
        seed = _get_int(body, "seed", default=0)
        manifest = build_manifest(per_category, seed)
        with self._lock:
            ref = self.store.put_json(manifest)
            # a new dataset invalidates shape-bound state but keeps the
            # decoder (it can still reconstruct stored latent artifacts)
            decoder = self.context.decoder
            self.context = ToolContext(
                store=self.store,
                shapes=shapes_from_manifest(manifest),
                decoder=decoder,
            )
        return {
            "count": manifest["count"],
            "shape_ids": [row["id"] for row in manifest["shapes"]],
            "manifest": ref.to_jsonable(),
        }

    # -- training (job) -----------------------------------------------------

    def _refit_drag_model(self) -> None:
        ctx = self.context
        if not ctx.latents or not ctx.shapes:
            ctx.drag_model = None
            return
        ids = sorted(sid for sid in ctx.latents if sid in ctx.shapes)
        if len(ids) < 17:  # ridge needs rows > features
            ctx.drag_model = None
            return
        codes = [ctx.latents[sid] for sid in ids]
        labels = [drag_oracle(ctx.shapes[sid]) for sid in ids]
        ctx.drag_model = fit_ridge(codes, labels, DRAG_LAMBDA)

    def submit_train(self, body: dict) -> dict:
        steps = _get_int(body, "steps", default=2000, low=1, high=200_000)
        samples = _get_int(body, "samples_per_shape", default=2000, low=1000, high=100_000)
        seed = _get_int(body, "seed", default=0)
        batch = _get_int(body, "batch_size", default=TrainConfig().batch_size, low=1, high=4096)
        dtype_name = _get_str(body, "dtype", default="float32")
        if dtype_name not in _DTYPES:
            raise InvalidParams("field 'dtype' must be 'float32' or 'float64'")
        with self._lock:
            ctx = self.context
            if len(ctx.shapes) < 2:
                raise InvalidParams("training needs a dataset of at least 2 shapes")
            order = list(ctx.shapes)
        params = {
            "steps": steps,
            "samples_per_shape": samples,
            "seed": seed,
            "batch_size": batch,
            "dtype": dtype_name,
            "shapes": len(order),
        }

        def job_fn(job_params: dict):
            data = {}
            for index, sid in enumerate(order):
                record = build_record(ctx.shapes[sid])
                data[sid] = sample_sdf(record.field, n=samples, seed=index)
            cfg = TrainConfig(steps=steps, batch_size=batch, seed=seed)
            result = train(data, cfg, dtype=_DTYPES[dtype_name])

            fd, tmp_path = tempfile.mkstemp(suffix=".ckpt", dir=self.config.data_dir)
            os.close(fd)
            try:
                save_checkpoint(result.params, tmp_path)
                with open(tmp_path, "rb") as fh:
                    ckpt_ref = self.store.put(fh.read(), "checkpoint")
            finally:
                os.unlink(tmp_path)
            table = {
                sid: [float(v) for v in code.values]
                for sid, code in result.latents.items()
            }
            latents_ref = self.store.put_json(table)

            with self._lock:
                if self.context is ctx:  # dataset unchanged while training
                    ctx.decoder = result.params
                    ctx.latents = dict(result.latents)
                    self._refit_drag_model()
            tail = result.loss_history[-500:]
            payload = {
                "checkpoint": ckpt_ref.to_jsonable(),
                "latents": latents_ref.to_jsonable(),
                "shapes": len(order),
                "steps": steps,
                "final_loss": float(np.mean(tail)),
            }
            return payload, [ckpt_ref.id, latents_ref.id]

        return self.jobs.submit("train", params, job_fn).to_jsonable()

    def job(self, job_id: str) -> dict:
        return self.jobs.get(job_id).to_jsonable()

    # -- imaging and retrieval ------------------------------------------------

    def make_sketch(self, body: dict) -> dict:
        if "pgm_base64" in body:
            raw = _require_type(body["pgm_base64"], str, "field 'pgm_base64'")
            try:
                blob = base64.b64decode(raw, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise InvalidParams(f"field 'pgm_base64' is not valid base64: {exc}") from exc
            image = parse_pgm(blob)  # canonicalize before storing
            with self._lock:
                ref = self.store.put(pgm_bytes(image), "pgm")
            return {
                "artifact": ref.to_jsonable(),
                "source": "upload",
                "size": int(max(image.pixels.shape)),
            }
        shape_id = _get_str(body, "shape_id")
        view = _get_str(body, "view", default="side")
        size = _get_int(body, "size", default=128, low=16, high=512)
        with self._lock:
            payload = tool_make_sketch(
                self.context, {"shape": shape_id, "view": view, "size": size}
            )
        payload["source"] = "render"
        return payload

    def retrieve_sketch(self, body: dict) -> dict:
        sketch_id = _get_str(body, "sketch_id")
        k = _get_int(body, "k", default=3, low=1, high=64)
        with self._lock:
            return tool_retrieve_similar(self.context, {"query": sketch_id, "k": k})

    def retrieve_feature(self, body: dict) -> dict:
        shape_id = _get_str(body, "shape_id")
        k = _get_int(body, "k", default=3, low=1, high=64)
        args: dict = {"shape": shape_id, "k": k}
        if "category" in body:
            # accept long names and codes alike, same as agent commands
            raw = _get_str(body, "category")
            args["category"] = CATEGORY_NAMES.get(raw, raw)
        with self._lock:
            return tool_retrieve_similar(self.context, args)

    # -- latent operations ----------------------------------------------------

    def interpolate(self, body: dict) -> dict:
        ids = body.get("shape_ids")
        if not isinstance(ids, list) or not ids or not all(isinstance(s, str) for s in ids):
            raise InvalidParams("field 'shape_ids' must be a non-empty list of strings")
        weights = body.get("weights")
        if not isinstance(weights, list) or not all(
            isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights
        ):
            raise InvalidParams("field 'weights' must be a list of numbers")
        with self._lock:
            return tool_interpolate_codes(
                self.context, {"ids": ids, "weights": [float(w) for w in weights]}
            )

    def reconstruct(self, body: dict) -> dict:
        resolution = _get_int(body, "resolution", default=48, low=4, high=_MAX_RESOLUTION)
        args: dict = {"resolution": resolution}
        if "latent_id" in body:
            args["latent"] = _get_str(body, "latent_id")
        elif "shape_id" in body:
            args["shape"] = _get_str(body, "shape_id")
        else:
            raise InvalidParams("need field 'shape_id' or 'latent_id'")
        with self._lock:
            return tool_reconstruct_mesh(self.context, args)

    # -- meshing (jobs + synchronous quality) ----------------------------------

    def submit_mesh(self, body: dict) -> dict:
        args: dict = {}
        if "shape_id" in body:
            args["shape"] = _get_str(body, "shape_id")
            args["level"] = _get_int(body, "level", default=1, low=0, high=6)
            castellate = body.get("castellate", True)
            if not isinstance(castellate, bool):
                raise InvalidParams("field 'castellate' must be a boolean")
            args["castellate"] = castellate
        with self._lock:
            ctx = self.context
            if "shape" in args:
                ctx.params_of(args["shape"])  # NotFound now, not inside the job

        def job_fn(job_params: dict):
            payload = tool_build_mesh(ctx, args)
            return payload, [payload["artifact"]["id"]]

        return self.jobs.submit("mesh", dict(args), job_fn).to_jsonable()

    def submit_refine(self, mesh_id: str, body: dict) -> dict:
        with self._lock:
            ctx = self.context
            ref = ctx.store.ref(mesh_id)  # NotFound now
        if ref.kind != "vtk":
            raise InvalidParams(f"artifact {mesh_id[:12]} is {ref.kind}, not a vtk mesh")
        args: dict = {"mesh": mesh_id}
        if "level" in body:
            args["level"] = _get_int(body, "level", low=1, high=8)
        if "box" in body:
            box = body["box"]
            if not isinstance(box, list) or len(box) != 6 or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in box
            ):
                raise InvalidParams("field 'box' must be [x0,y0,z0,x1,y1,z1]")
            args["box"] = [float(v) for v in box]

        def job_fn(job_params: dict):
            payload = tool_refine_mesh(ctx, args)
            return payload, [payload["artifact"]["id"]]

        return self.jobs.submit("refine", dict(args), job_fn).to_jsonable()

    def mesh_quality(self, mesh_id: str) -> dict:
        with self._lock:
            ref = self.context.store.ref(mesh_id)
            if ref.kind != "vtk":
                raise InvalidParams(f"artifact {mesh_id[:12]} is {ref.kind}, not a vtk mesh")
            return tool_check_mesh(self.context, {"mesh": mesh_id})

    # -- surrogate --------------------------------------------------------------

    def predict(self, body: dict) -> dict:
        if "latent_id" in body:
            with self._lock:
                if self.context.drag_model is None:
                    raise ModelNotFitted(
                        "no drag model fitted yet: train a decoder (or load "
                        "latents) so the regressor has features"
                    )
                return tool_predict_drag(
                    self.context, {"latent": _get_str(body, "latent_id")}
                )
        shape_id = _get_str(body, "shape_id")
        with self._lock:
            return tool_predict_drag(self.context, {"shape": shape_id})

    def surrogate_eval(self) -> dict:
        with self._lock:
            ctx = self.context
            model = ctx.drag_model
            if model is None or not ctx.latents:
                return {"fitted": False, "count": 0}
            ids = sorted(sid for sid in ctx.latents if sid in ctx.shapes)
            if len(ids) < 20:  # distribution evaluation needs >= 20 shapes
                return {"fitted": False, "count": len(ids)}
            items = [
                (ctx.latents[sid], DragSample(sid, drag_oracle(ctx.shapes[sid])))
                for sid in ids
            ]
            trend = eval_trend(model, items)
            dist = eval_distribution(model, items)
            deltas = []
            for pair in DELTA_PAIRS:
                try:
                    report = delta_cd(model, items, pair)
                except EmptyCategory:
                    continue
                deltas.append(
                    {
                        "pair": f"{pair[0]}-{pair[1]}",
                        "oracle": report.oracle_delta,
                        "predicted": report.predicted_delta,
                        "agree": report.sign_agreement,
                    }
                )
            return {
                "fitted": True,
                "count": len(ids),
                "trend": trend.to_jsonable(),
                "distribution": dist.to_jsonable(),
                "deltas": deltas,
            }

    # -- sessions -----------------------------------------------------------------

    def create_session(self, body: dict) -> dict:
        with self._lock:
            session_id = f"s{self._session_counter}"
            self._session_counter += 1
            self._sessions[session_id] = Session(self.registry, self.context, session_id)
        return {"session_id": session_id}

    def _session(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise NotFound(f"no session with id {session_id!r}") from None

    def post_message(self, session_id: str, body: dict) -> dict:
        command = _get_str(body, "command")
        recipient = _get_str(body, "recipient", default=AUTO_RECIPIENT)
        inputs = body.get("inputs", [])
        if not isinstance(inputs, list) or not all(isinstance(s, str) for s in inputs):
            raise InvalidParams("field 'inputs' must be a list of artifact ids")
        with self._lock:
            session = self._session(session_id)
            prompt = make_prompt("user", command, recipient=recipient, inputs=inputs)
            new_messages = session_step(session, prompt)
        return {
            "session_id": session_id,
            "messages": [m.to_jsonable() for m in new_messages],
        }

    def transcript(self, session_id: str) -> dict:
        with self._lock:
            session = self._session(session_id)
            transcript = session.transcript()
        return {
            "session_id": transcript.session_id,
            "messages": [m.to_jsonable() for m in transcript.messages],
            "final_artifacts": list(transcript.final_artifacts),
        }

    # -- artifacts -------------------------------------------------------------------

    def artifact(self, artifact_id: str):
        """(content bytes, content type) for GET /artifacts/{id}."""
        with self._lock:
            ref = self.store.ref(artifact_id)
            content = self.store.get(artifact_id)
        return content, _CONTENT_TYPES[ref.kind]

    def health(self) -> dict:
        return {"status": "ok", "version": __version__}

    def shutdown(self) -> None:
        self.jobs.shutdown()
