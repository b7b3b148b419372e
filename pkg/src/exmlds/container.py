"""Binary model container.

Layout (all integers little-endian)::

    magic     8 bytes   b"EXMLDSMC"
    version   uint32    FORMAT_VERSION
    count     uint32    number of sections
    section * count:
        name_len  uint16, name (UTF-8)
        dtype     uint8   1 = float64, 2 = int64, 3 = UTF-8 text
        ndim      uint8
        dims      uint64 * ndim
        nbytes    uint64, payload (row-major)

Sections written by :func:`save_model`:

    hyperparams             text   JSON object, sorted keys
    meta                    int64  [num_features, num_labels, num_clusters, joint]
    clusters/centroids      f64    (C, d)
    clusters/assignments    int64  (n,)
    clusters/empty          int64  (C,)
    cluster/<t>/V           f64    (d', d)
    cluster/<t>/Z           f64    (m, d')
    cluster/<t>/members     int64  (m,)
    cluster/<t>/label_ptr   int64  (m+1,)   CSR row pointer of member labels
    cluster/<t>/label_idx   int64  (nnz,)   CSR label indices
    cluster/<t>/Z2          f64    (L, d')  joint models only

No timestamps are stored, so identical training runs give identical files.
"""
from __future__ import annotations

import json
import struct

import numpy as np
import scipy.sparse as sp

from .cluster import ClusterModel
from .errors import DataError
from .predict import ClusterData, TrainedModel

MAGIC = b"EXMLDSMC"
FORMAT_VERSION = 1
_F64, _I64, _TEXT = 1, 2, 3

__all__ = ["MAGIC", "FORMAT_VERSION", "write_sections", "read_sections", "save_model", "load_model"]


def write_sections(fh, sections) -> None:
    """Write ``(name, value)`` pairs; values are float/int arrays or ``str``."""
    fh.write(MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
    for name, value in sections:
        raw_name = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw_name)))
        fh.write(raw_name)
        if isinstance(value, str):
            payload = value.encode("utf-8")
            fh.write(struct.pack("<BBQ", _TEXT, 1, len(payload)))
        else:
            arr = np.asarray(value)
            if arr.dtype.kind == "f":
                code, arr = _F64, np.ascontiguousarray(arr, dtype="<f8")
            elif arr.dtype.kind in "iub":
                code, arr = _I64, np.ascontiguousarray(arr, dtype="<i8")
            else:
                raise DataError(f"section {name!r}: unsupported dtype {arr.dtype}")
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            payload = arr.tobytes()
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError("model file truncated")
    return buf


def read_sections(fh) -> dict:
    if _read_exact(fh, 8) != MAGIC:
        raise DataError("not a model file (bad magic)")
    version, count = struct.unpack("<II", _read_exact(fh, 8))
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
        dims = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim)) if ndim else ()
        (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8))
        payload = _read_exact(fh, nbytes)
        if code == _TEXT:
            out[name] = payload.decode("utf-8")
            continue
        if code not in (_F64, _I64):
            raise DataError(f"section {name!r}: unknown dtype code {code}")
        if nbytes != 8 * int(np.prod(dims, dtype=np.int64)):
            raise DataError(f"section {name!r}: payload size does not match dims {dims}")
        out[name] = np.frombuffer(payload, dtype="<f8" if code == _F64 else "<i8").reshape(dims).copy()
    return out


def model_sections(model: TrainedModel):
    C = model.clusters
    secs = [
        ("hyperparams", json.dumps(model.params, sort_keys=True)),
        ("meta", np.array([model.num_features, model.num_labels, C.num_clusters, int(model.joint)])),
        ("clusters/centroids", C.centroids),
        ("clusters/assignments", C.assignments),
        ("clusters/empty", C.empty.astype(np.int64)),
    ]
    for t, part in enumerate(model.parts):
        lab = sp.csr_matrix(part.labels)
        lab.sort_indices()
        secs += [
            (f"cluster/{t}/V", part.V),
            (f"cluster/{t}/Z", part.Z),
            (f"cluster/{t}/members", part.members),
            (f"cluster/{t}/label_ptr", lab.indptr),
            (f"cluster/{t}/label_idx", lab.indices),
        ]
        if part.Z2 is not None:
            secs.append((f"cluster/{t}/Z2", part.Z2))
    return secs


def save_model(model: TrainedModel, path) -> None:
    with open(path, "wb") as fh:
        write_sections(fh, model_sections(model))


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        s = read_sections(fh)
    try:
        d, L, num_c, joint = (int(v) for v in s["meta"])
        centroids = s["clusters/centroids"]
        if centroids.shape != (num_c, d):
            raise DataError("centroid section has wrong shape")
        clusters = ClusterModel(centroids=centroids, assignments=s["clusters/assignments"],
                                empty=s["clusters/empty"].astype(bool), objective_history=[])
        parts = []
        for t in range(num_c):
            members = s[f"cluster/{t}/members"]
            ptr, idx = s[f"cluster/{t}/label_ptr"], s[f"cluster/{t}/label_idx"]
            if ptr.shape != (len(members) + 1,) or (idx.size and (idx.min() < 0 or idx.max() >= L)):
                raise DataError(f"cluster {t}: malformed label arrays")
            labels = sp.csr_matrix((np.ones(idx.size), idx, ptr), shape=(len(members), L))
            V = s[f"cluster/{t}/V"]
            if V.ndim != 2 or V.shape[1] != d:
                raise DataError(f"cluster {t}: regressor has wrong shape {V.shape}")
            Z2 = s.get(f"cluster/{t}/Z2")
            if joint and Z2 is None:
                raise DataError(f"cluster {t}: joint model lacks label embeddings")
            parts.append(ClusterData(V=V, Z=s[f"cluster/{t}/Z"], members=members, labels=labels, Z2=Z2))
        params = json.loads(s["hyperparams"])
    except KeyError as exc:
        raise DataError(f"model file lacks section {exc.args[0]!r}") from None
    return TrainedModel(clusters=clusters, parts=parts, params=params, num_features=d, num_labels=L)
