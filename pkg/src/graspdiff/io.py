"""File formats: grasp JSON, point-cloud text and the versioned weights file."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import Grasp, GraspDiffError

WEIGHTS_MAGIC = b"GRASPDIFFW"
WEIGHTS_VERSION = 1


class WeightsFormatError(GraspDiffError):
    pass


def write_grasps(path, grasps) -> None:
    records = [
        {"p": g.p.tolist(), "r": g.r.tolist(), "q": g.q.tolist()} for g in grasps
    ]
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def read_grasps(path) -> list[Grasp]:
    records = json.loads(Path(path).read_text())
    return [Grasp(rec["p"], rec["r"], rec["q"]) for rec in records]


def write_cloud(path, points) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in points]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_cloud(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    pts = np.array(rows, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite coordinates")
    return pts


def write_vector(path, v) -> None:
    Path(path).write_text("\n".join(f"{x:.17g}" for x in np.asarray(v).ravel()) + "\n")


def save_weights(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float32 tensors plus JSON metadata.

    Layout: magic, uint32 version, uint64 header length, JSON header (tensor
    table with name/shape/offset and ``meta``), then raw little-endian float32.
    """
    table = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"tensors": table, "meta": meta}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<IQ", WEIGHTS_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_weights(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(WEIGHTS_MAGIC):
        raise WeightsFormatError(f"{path}: bad magic")
    pos = len(WEIGHTS_MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos : pos + hlen])
    data = raw[pos + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return tensors, header["meta"]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
