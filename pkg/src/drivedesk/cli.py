"""Command-line interface: one subcommand per engine operation.

Every subcommand accepts the uniform flags ``--seed``, ``--config`` and
``--out`` (plus ``--data-dir`` for the artifact store); configuration
resolves as CLI flag > DRIVEDESK_* environment variable > config file >
built-in default.  Each run prints one machine-readable JSON line on
stdout.  Exit codes: 0 success, 2 usage error, 1 operation error.
"""
from __future__ import annotations

import argparse
import base64
import json
import os
import sys
import time

from .agents import Message, Transcript, save_transcript
from .errors import DrivedeskError
from .service import DeskEngine, load_config, map_error, serve
from .service.engine import build_manifest
from .store import content_id


class UsageError(Exception):
    """Flag combination errors that argparse cannot express."""


def _canonical_bytes(payload) -> bytes:
    """Same encoding the artifact store uses, so file hash == artifact id."""
    return json.dumps(payload, sort_keys=True, indent=2).encode("ascii")


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), flush=True)


def _csv_floats(text: str) -> list:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _csv_strings(text: str) -> list:
    parts = text.split(",")
    if any(not p for p in parts):
        raise argparse.ArgumentTypeError(f"empty item in list {text!r}")
    return parts


def _bool_flag(text: str) -> bool:
    if text not in ("true", "false"):
        raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")
    return text == "true"


def _engine(args, dataset=None, checkpoint=None, latents=None) -> DeskEngine:
    cfg = load_config(
        cli={
            "data_dir": getattr(args, "data_dir", None),
            "dataset_path": dataset,
            "checkpoint_path": checkpoint,
            "latents_path": latents,
        },
        config_path=args.config,
    )
    return DeskEngine(cfg)


def _wait_job(engine: DeskEngine, record: dict) -> dict:
    while True:
        current = engine.job(record["job_id"])
        if current["state"] in ("done", "failed"):
            return current
        time.sleep(0.05)


def _finished_job(engine: DeskEngine, record: dict) -> dict:
    """Block until the job ends; operation error if it failed."""
    current = _wait_job(engine, record)
    if current["state"] == "failed":
        raise DrivedeskError(f"job {current['job_id']} failed: {current['error']}")
    return current


def _export(engine: DeskEngine, artifact_id: str, out_path: str) -> str:
    with open(out_path, "wb") as fh:
        fh.write(engine.store.get(artifact_id))
    return out_path


def _store_file(engine: DeskEngine, path: str, kind: str) -> str:
    try:
        with open(path, "rb") as fh:
            content = fh.read()
    except OSError as exc:
        raise DrivedeskError(f"cannot read {path}: {exc}") from exc
    return engine.store.put(content, kind).id


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_shapes(args) -> int:
    manifest = build_manifest(args.per_category, args.seed)
    blob = _canonical_bytes(manifest)
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(blob)
    _emit(
        {
            "manifest_hash": content_id(blob),
            "count": manifest["count"],
            "out": args.out,
        }
    )
    return 0


def cmd_train(args) -> int:
    engine = _engine(args, dataset=args.dataset)
    record = engine.submit_train(
        {
            "steps": args.steps,
            "samples_per_shape": args.samples,
            "seed": args.seed,
            "dtype": args.dtype,
            **({"batch_size": args.batch_size} if args.batch_size else {}),
        }
    )
    result = _finished_job(engine, record)["result"]
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = _export(engine, result["checkpoint"]["id"], os.path.join(out_dir, "checkpoint.ckpt"))
    latents_path = _export(engine, result["latents"]["id"], os.path.join(out_dir, "latents.json"))
    _emit(
        {
            "checkpoint": ckpt_path,
            "latents": latents_path,
            "shapes": result["shapes"],
            "steps": result["steps"],
            "final_loss": result["final_loss"],
        }
    )
    return 0


def cmd_reconstruct(args) -> int:
    if (args.shape is None) == (args.latent_file is None):
        raise UsageError("reconstruct needs exactly one of --shape or --latent-file")
    engine = _engine(args, dataset=args.dataset, checkpoint=args.checkpoint, latents=args.latents)
    body: dict = {"resolution": args.resolution}
    if args.shape:
        body["shape_id"] = args.shape
    else:
        with open(args.latent_file, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        ref = engine.store.put_json(data)
        body["latent_id"] = ref.id
    payload = engine.reconstruct(body)
    out = args.out or "reconstruction.stl"
    _export(engine, payload["artifact"]["id"], out)
    _emit({"out": out, "triangles": payload["triangles"], "resolution": payload["resolution"]})
    return 0


def cmd_interpolate(args) -> int:
    engine = _engine(args, latents=args.latents)
    payload = engine.interpolate({"shape_ids": args.ids, "weights": args.weights})
    blended = engine.store.get_json(payload["artifact"]["id"])
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(_canonical_bytes(blended))
    _emit(
        {
            "artifact": payload["artifact"]["id"],
            "ids": payload["ids"],
            "weights": payload["weights"],
            "values": blended["values"],
            "out": args.out,
        }
    )
    return 0


def cmd_sketch(args) -> int:
    engine = _engine(args, dataset=args.dataset)
    payload = engine.make_sketch(
        {"shape_id": args.shape, "view": args.view, "size": args.size}
    )
    artifact_id = payload["artifact"]["id"]
    out = args.out
    if out:
        _export(engine, artifact_id, out)
    _emit({"artifact": artifact_id, "size": payload["size"], "out": out})
    return 0


def cmd_retrieve(args) -> int:
    if (args.query is None) == (args.shape is None):
        raise UsageError("retrieve needs exactly one of --query or --shape")
    engine = _engine(args, dataset=args.dataset, latents=args.latents)
    if args.query:
        with open(args.query, "rb") as fh:
            encoded = base64.b64encode(fh.read()).decode("ascii")
        sketch = engine.make_sketch({"pgm_base64": encoded})
        payload = engine.retrieve_sketch(
            {"sketch_id": sketch["artifact"]["id"], "k": args.k}
        )
    else:
        body: dict = {"shape_id": args.shape, "k": args.k}
        if args.category:
            body["category"] = args.category
        payload = engine.retrieve_feature(body)
    _emit(payload)
    return 0


def cmd_mesh(args) -> int:
    engine = _engine(args, dataset=args.dataset)
    body: dict = {}
    if args.shape:
        body = {"shape_id": args.shape, "level": args.level, "castellate": args.castellate}
    result = _finished_job(engine, engine.submit_mesh(body))["result"]
    out = args.out or "mesh.vtk"
    _export(engine, result["artifact"]["id"], out)
    _emit({"out": out, "cells": result["cells"], "max_level": result["max_level"]})
    return 0


def cmd_checkmesh(args) -> int:
    engine = _engine(args)
    mesh_id = _store_file(engine, args.in_path, "vtk")
    payload = engine.mesh_quality(mesh_id)
    if args.out:
        report = engine.store.get_json(payload["artifact"]["id"])
        with open(args.out, "wb") as fh:
            fh.write(_canonical_bytes(report))
    _emit(
        {
            "overall_pass": payload["overall_pass"],
            "cells": payload["cells"],
            "passes": sum(1 for c in payload["checks"] if c["pass"]),
            "checks": payload["checks"],
            "out": args.out,
        }
    )
    return 0


def cmd_refine(args) -> int:
    engine = _engine(args)
    mesh_id = _store_file(engine, args.in_path, "vtk")
    body: dict = {}
    if args.level is not None:
        body["level"] = args.level
    if args.box is not None:
        if len(args.box) != 6:
            raise UsageError("--box needs exactly six numbers: x0,y0,z0,x1,y1,z1")
        body["box"] = args.box
    result = _finished_job(engine, engine.submit_refine(mesh_id, body))["result"]
    out = args.out or "refined.vtk"
    _export(engine, result["artifact"]["id"], out)
    _emit({"out": out, "cells": result["cells"], "added": result["added"]})
    return 0


def cmd_predict_drag(args) -> int:
    if (args.shape is None) == (args.latent_file is None):
        raise UsageError("predict-drag needs exactly one of --shape or --latent-file")
    engine = _engine(args, dataset=args.dataset, checkpoint=args.checkpoint, latents=args.latents)
    if args.shape:
        payload = engine.predict({"shape_id": args.shape})
    else:
        with open(args.latent_file, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        ref = engine.store.put_json(data)
        payload = engine.predict({"latent_id": ref.id})
    _emit(payload)
    return 0


def cmd_eval(args) -> int:
    engine = _engine(args, dataset=args.dataset, latents=args.latents)
    payload = engine.surrogate_eval()
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(_canonical_bytes(payload))
    if payload["fitted"]:
        _emit(
            {
                "fitted": True,
                "count": payload["count"],
                "spearman_rho": payload["trend"]["spearman_rho"],
                "oscillation_count": payload["trend"]["oscillation_count"],
                "overlap": payload["distribution"]["overlap"],
                "ks_stat": payload["distribution"]["ks_stat"],
                "deltas": payload["deltas"],
                "out": args.out,
            }
        )
    else:
        _emit({"fitted": False, "count": payload["count"], "out": args.out})
    return 0


def cmd_serve(args) -> int:
    cfg = load_config(
        cli={
            "host": args.host,
            "port": args.port,
            "workers": args.workers,
            "data_dir": args.data_dir,
            "dataset_path": args.dataset,
            "checkpoint_path": args.checkpoint,
            "latents_path": args.latents,
        },
        config_path=args.config,
    )
    service = serve(cfg)
    _emit({"url": service.url, "data_dir": cfg.data_dir})
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
    return 0


def cmd_session(args) -> int:
    engine = _engine(args, dataset=args.dataset, checkpoint=args.checkpoint, latents=args.latents)
    session_id = engine.create_session({})["session_id"]
    statuses = []
    for command in args.commands:
        reply = engine.post_message(session_id, {"command": command})
        responses = [m for m in reply["messages"] if m["kind"] == "response"]
        statuses.append(responses[-1]["payload"]["status"] if responses else "none")
    transcript_payload = engine.transcript(session_id)
    if args.out:
        messages = tuple(
            Message.from_jsonable(m) for m in transcript_payload["messages"]
        )
        save_transcript(
            Transcript(session_id, messages, tuple(transcript_payload["final_artifacts"])),
            args.out,
        )
    _emit(
        {
            "session_id": session_id,
            "commands": len(args.commands),
            "statuses": statuses,
            "messages": len(transcript_payload["messages"]),
            "out": args.out,
        }
    )
    return 0 if all(s == "ok" for s in statuses) else 1


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivedesk",
        description="Desk-scale car-design pipeline: shapes, codec, meshes, drag, agents.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="deterministic seed")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--data-dir", dest="data_dir", default=None, help="artifact store root")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-shapes", parents=[common], help="generate a dataset manifest")
    p.add_argument("--per-category", dest="per_category", type=int, required=True)

    p = sub.add_parser("train", parents=[common], help="train the shape codec on a manifest")
    p.add_argument("--dataset", required=True, help="manifest JSON from gen-shapes")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--samples", type=int, default=2000, help="SDF samples per shape")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")

    p = sub.add_parser("reconstruct", parents=[common], help="decode a latent to an STL mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--latents", default=None, help="latent table JSON (for --shape)")
    p.add_argument("--dataset", default=None)
    p.add_argument("--shape", default=None)
    p.add_argument("--latent-file", dest="latent_file", default=None, help="JSON {values: [...]}")
    p.add_argument("--resolution", type=int, default=48)

    p = sub.add_parser("interpolate", parents=[common], help="blend latent codes")
    p.add_argument("--latents", required=True)
    p.add_argument("--ids", type=_csv_strings, required=True, help="shape ids, comma-separated")
    p.add_argument("--weights", type=_csv_floats, required=True, help="weights, comma-separated")

    p = sub.add_parser("sketch", parents=[common], help="edge sketch of a dataset shape")
    p.add_argument("--dataset", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--view", default="side")
    p.add_argument("--size", type=int, default=128)

    p = sub.add_parser("retrieve", parents=[common], help="rank dataset shapes against a query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--query", default=None, help="query sketch PGM file")
    p.add_argument("--shape", default=None, help="query by dataset shape id")
    p.add_argument("--category", default=None)
    p.add_argument("--latents", default=None)
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("mesh", parents=[common], help="hex-mesh the flow domain")
    p.add_argument("--dataset", default=None)
    p.add_argument("--shape", default=None)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--castellate", type=_bool_flag, default=True)

    p = sub.add_parser("checkmesh", parents=[common], help="run the 10 mesh-quality checks")
    p.add_argument("--in", dest="in_path", required=True, help="VTK mesh file")

    p = sub.add_parser("refine", parents=[common], help="refine a stored VTK mesh")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--box", type=_csv_floats, default=None, help="x0,y0,z0,x1,y1,z1")

    p = sub.add_parser("predict-drag", parents=[common], help="drag estimate for a shape or latent")
    p.add_argument("--dataset", default=None)
    p.add_argument("--shape", default=None)
    p.add_argument("--latent-file", dest="latent_file", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--latents", default=None)

    p = sub.add_parser("eval", parents=[common], help="trend/distribution/delta evaluation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--latents", required=True)

    p = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--latents", default=None)

    p = sub.add_parser("session", parents=[common], help="run agent commands in one session")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--latents", default=None)
    p.add_argument(
        "--command",
        dest="commands",
        action="append",
        required=True,
        help="grammar command; repeat for several steps",
    )

    return parser


_DISPATCH = {
    "gen-shapes": cmd_gen_shapes,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "interpolate": cmd_interpolate,
    "sketch": cmd_sketch,
    "retrieve": cmd_retrieve,
    "mesh": cmd_mesh,
    "checkmesh": cmd_checkmesh,
    "refine": cmd_refine,
    "predict-drag": cmd_predict_drag,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "session": cmd_session,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DrivedeskError as exc:
        _, payload = map_error(exc)
        print(json.dumps(payload, sort_keys=True), file=sys.stderr, flush=True)
        return 1
    except OSError as exc:
        print(
            json.dumps({"error": {"code": "io_error", "message": str(exc)}}, sort_keys=True),
            file=sys.stderr,
            flush=True,
        )
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
