"""Content-addressed artifact store.

Artifacts are immutable byte blobs addressed by the SHA-256 of their
content.  Storing the same bytes twice yields the same id and reuses the
existing file, so identical artifacts deduplicate and equality of ids is
equality of content.  Each artifact carries a media kind (stl, pgm, vtk,
json, checkpoint) that downstream consumers use to pick a content type.

Layout on disk: ``root/<kind>/<id[:2]>/<id>.<ext>``.  Paths are an
implementation detail — consumers hold ids, never paths — which is what
lets a store be compacted (rewritten under a new root) without breaking
anything that references its contents.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidParams, NotFound

ARTIFACT_KINDS = ("stl", "pgm", "vtk", "json", "checkpoint")

_EXTENSIONS = {
    "stl": ".stl",
    "pgm": ".pgm",
    "vtk": ".vtk",
    "json": ".json",
    "checkpoint": ".ckpt",
}


@dataclass(frozen=True)
class ArtifactRef:
    """Handle for one stored artifact: content id, media kind, file path."""

    id: str
    kind: str
    path: str

    def __post_init__(self) -> None:
        if self.kind not in ARTIFACT_KINDS:
            raise InvalidParams(
                f"kind must be one of {ARTIFACT_KINDS}, got {self.kind!r}"
            )
        if len(self.id) != 64 or any(c not in "0123456789abcdef" for c in self.id):
            raise InvalidParams(f"id must be 64 lowercase hex chars, got {self.id!r}")

    def to_jsonable(self) -> dict:
        """Payload form: id and kind only — paths never travel in payloads."""
        return {"id": self.id, "kind": self.kind}


def content_id(content: bytes) -> str:
    """SHA-256 hex digest used as the artifact id."""
    return hashlib.sha256(content).hexdigest()


class ArtifactStore:
    """Filesystem-backed content-addressed blob store."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path_for(self, artifact_id: str, kind: str) -> Path:
        return self.root / kind / artifact_id[:2] / (artifact_id + _EXTENSIONS[kind])

    def put(self, content: bytes, kind: str) -> ArtifactRef:
        """Store bytes; a duplicate put returns the existing ref."""
        if not isinstance(content, bytes):
            raise InvalidParams(
                f"content must be bytes, got {type(content).__name__}"
            )
        if kind not in ARTIFACT_KINDS:
            raise InvalidParams(
                f"kind must be one of {ARTIFACT_KINDS}, got {kind!r}"
            )
        artifact_id = content_id(content)
        path = self._path_for(artifact_id, kind)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            # temp-file-then-rename keeps concurrent writers of the same id safe:
            # both write identical bytes and os.replace is atomic
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            try:
                with os.fdopen(fd, "wb") as handle:
                    handle.write(content)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return ArtifactRef(artifact_id, kind, str(path))

    def put_json(self, payload, kind: str = "json") -> ArtifactRef:
        """Store a JSON-serializable object canonically (sorted keys)."""
        blob = json.dumps(payload, sort_keys=True, indent=2).encode("ascii")
        return self.put(blob, kind)

    def ref(self, artifact_id: str) -> ArtifactRef:
        """Resolve an id to its ref, whatever its kind."""
        for kind in ARTIFACT_KINDS:
            path = self._path_for(artifact_id, kind)
            if path.exists():
                return ArtifactRef(artifact_id, kind, str(path))
        raise NotFound(f"no artifact with id {artifact_id!r}")

    def get(self, artifact_id: str) -> bytes:
        """Fetch stored bytes by id; byte-exact."""
        return Path(self.ref(artifact_id).path).read_bytes()

    def get_json(self, artifact_id: str):
        return json.loads(self.get(artifact_id).decode("utf-8"))

    def __contains__(self, artifact_id: str) -> bool:
        try:
            self.ref(artifact_id)
        except NotFound:
            return False
        return True

    def ids(self) -> list[str]:
        """All stored artifact ids, sorted."""
        found = set()
        for kind in ARTIFACT_KINDS:
            base = self.root / kind
            if not base.is_dir():
                continue
            for path in base.glob("*/*" + _EXTENSIONS[kind]):
                found.add(path.stem)
        return sorted(found)

    def compact(self, new_root) -> "ArtifactStore":
        """Rewrite every artifact under a new root (new paths, same ids)."""
        target = ArtifactStore(new_root)
        for kind in ARTIFACT_KINDS:
            base = self.root / kind
            if not base.is_dir():
                continue
            for path in sorted(base.glob("*/*" + _EXTENSIONS[kind])):
                target.put(path.read_bytes(), kind)
        return target
