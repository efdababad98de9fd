"""Serialization: JSONL datasets, interpretation scores, checkpoints, manifests.

Dataset files hold one JSON object per line with keys ``id``, ``y``, ``x``,
``r`` and optional ``interp``, ``velocity``, ``B``. Floats are written with
Python's shortest round-trip repr, so deserialization is exact.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .data import PointCloud, Sample
from .exceptions import RecordParseError, ValidationError

RESULTS_DIR_ENV = "LRI_RESULTS_DIR"


def serialize_sample(sample: Sample) -> str:
    """Encode a sample as a single JSONL record."""
    rec = {
        "id": sample.id,
        "y": int(sample.y),
        "x": sample.cloud.X.tolist(),
        "r": sample.cloud.r.tolist(),
    }
    if sample.cloud.scale_c != 1.0:
        rec["scale_c"] = float(sample.cloud.scale_c)
    if sample.interp is not None:
        rec["interp"] = [int(v) for v in sample.interp]
    if sample.velocity is not None:
        rec["velocity"] = sample.velocity.tolist()
    if sample.B is not None:
        rec["B"] = float(sample.B)
    return json.dumps(rec, separators=(",", ":"))


def deserialize_sample(line: str, line_number: int | None = None) -> Sample:
    """Decode a JSONL record; raises :class:`RecordParseError` on bad syntax/schema."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"invalid JSON: {exc.msg}", line=line_number) from exc
    if not isinstance(rec, dict):
        raise RecordParseError("record is not a JSON object", line=line_number)
    for key in ("id", "y", "x", "r"):
        if key not in rec:
            raise RecordParseError(f"missing required key {key!r}", line=line_number)
    try:
        cloud = PointCloud(
            X=np.asarray(rec["x"], dtype=np.float64),
            r=np.asarray(rec["r"], dtype=np.float64),
            scale_c=float(rec.get("scale_c", 1.0)),
        )
        return Sample(
            cloud=cloud,
            y=int(rec["y"]),
            id=str(rec["id"]),
            interp=None if rec.get("interp") is None else np.asarray(rec["interp"]),
            velocity=None if rec.get("velocity") is None else np.asarray(rec["velocity"]),
            B=rec.get("B"),
        )
    except ValidationError as exc:
        raise ValidationError(
            f"line {line_number}: {exc}" if line_number is not None else str(exc)
        ) from exc


def save_samples(samples, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in samples:
            fh.write(serialize_sample(s) + "\n")
    return path


def load_samples(path):
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                out.append(deserialize_sample(line, line_number=i))
    return out


def write_scores(path, entries):
    """Write interpretation outputs: one JSONL record per sample.

    Each entry needs ``id``, ``score`` (per-point array) and ``method``;
    an optional ``sigma`` holds per-point D x D covariances (row-major).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for e in entries:
            rec = {"id": e["id"], "score": np.asarray(e["score"]).tolist(),
                   "method": e["method"]}
            if e.get("sigma") is not None:
                rec["sigma"] = [np.asarray(m).reshape(-1).tolist() for m in e["sigma"]]
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


def read_scores(path):
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(f"invalid JSON: {exc.msg}", line=i) from exc
            for key in ("id", "score", "method"):
                if key not in rec:
                    raise RecordParseError(f"missing required key {key!r}", line=i)
            rec["score"] = np.asarray(rec["score"], dtype=np.float64)
            out.append(rec)
    return out


def write_manifest(path, manifest):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def results_dir(override=None):
    """Results root: explicit argument, else $LRI_RESULTS_DIR, else ./results."""
    root = override or os.environ.get(RESULTS_DIR_ENV) or "results"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def save_checkpoint(path, arrays, meta):
    """Persist named float64 arrays plus a JSON metadata blob (bit-exact)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {f"array::{k}": np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    payload["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        arrays = {k[len("array::"):]: data[k] for k in data.files if k.startswith("array::")}
    return arrays, meta
