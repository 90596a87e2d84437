"""Binary container for stores and small dense blocks.

Layout (little-endian)::

    b"QISQ" | u32 version | u32 section count
    per section: u16 name length | name (utf-8) | u8 kind | u8 ndim | u64 dims...
                 | payload

Kinds: 1 matrix store and 2 vector tree (f64 squared values, then int8
signs), 3 dense f64 array.  A JSON sidecar (``<path>.json``) carries the
plan and free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .sqstore import MatrixStore, WeightTree

MAGIC = b"QISQ"
VERSION = 1
KIND_MATRIX, KIND_VECTOR, KIND_DENSE = 1, 2, 3


def _payload(obj) -> tuple[int, tuple[int, ...], bytes]:
    if isinstance(obj, MatrixStore):
        sq = obj.squares()
        return KIND_MATRIX, sq.shape, sq.astype("<f8").tobytes() + obj.sign_array().astype("i1").tobytes()
    if isinstance(obj, WeightTree):
        sq = obj.leaves
        return KIND_VECTOR, sq.shape, sq.astype("<f8").tobytes() + obj.signs.astype("i1").tobytes()
    arr = np.asarray(obj, dtype=np.float64)
    return KIND_DENSE, arr.shape, arr.astype("<f8").tobytes()


def write_container(path, sections: dict, sidecar: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(sections))]
    for name, obj in sections.items():
        kind, dims, data = _payload(obj)
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", kind, len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}Q", *dims))
        chunks.append(data)
    Path(path).write_bytes(b"".join(chunks))
    if sidecar is not None:
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    return str(o)


def read_container(path) -> tuple[dict, dict | None]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ParseError(f"{path}: not a QISQ container")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    off = 12
    out: dict = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode()
            off += nlen
            kind, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            size = int(np.prod(dims)) if dims else 1
            vals = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims)
            off += 8 * size
            if kind == KIND_DENSE:
                out[name] = vals.copy()
                continue
            signs = np.frombuffer(buf, dtype="i1", count=size, offset=off).reshape(dims)
            off += size
            if kind == KIND_MATRIX:
                out[name] = MatrixStore.from_squares(vals, signs)
            elif kind == KIND_VECTOR:
                out[name] = WeightTree.from_squares(vals, signs)
            else:
                raise ParseError(f"{path}: unknown section kind {kind}")
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated or corrupt container ({exc})") from None
    side = Path(str(path) + ".json")
    sidecar = json.loads(side.read_text()) if side.exists() else None
    return out, sidecar


def save_estimator(path, est) -> None:
    sections = {
        "v": est.v_store, "vt": est.vt_store, "gamma": est.gamma_tree, "omega": est.omega_tree,
        "pinv": est.pinv_matrix,
    }
    if est.wtw is not None:
        sections["wtw"] = est.wtw
    if est.z is not None:
        sections["z"] = est.z
    write_container(path, sections, {"plan": est.plan.to_dict(), "meta": est.meta})


def load_estimator(path):
    """Restore an estimator for queries and sampling (no access to X)."""
    from .pipeline import PCREstimator, PCRPlan

    sec, side = read_container(path)
    if side is None or "plan" not in side:
        raise ParseError(f"{path}: missing plan sidecar")
    return PCREstimator(
        plan=PCRPlan.from_dict(side["plan"]), v_store=sec["v"], vt_store=sec["vt"],
        gamma_tree=sec["gamma"], omega_tree=sec["omega"], pinv_matrix=sec["pinv"],
        wtw=sec.get("wtw"), z=sec.get("z"), meta=side.get("meta", {}),
    )
