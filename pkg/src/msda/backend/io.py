"""Binary embedding files ("MEMB") and backend model files ("MPLD").

Embedding file (little-endian)::

    b"MEMB" | u32 version | u32 count | u32 dim
    per record: u16 len + utf-8 utterance id | i64 speaker id | i64 domain id
                | dim x f32

Backend file::

    b"MPLD" | u32 version | u32 in_dim | u32 out_dim | u8 length-norm flag
    | f64 LDA ridge | LDA mean (in_dim f64) | projection (out_dim x in_dim f64)
    | mu (out_dim) | B (out_dim^2) | W (out_dim^2), all f64
"""
import io
import struct
from dataclasses import dataclass

import numpy as np

from ..exceptions import DataError
from .lda import LdaTransform
from .plda import PldaModel

EMB_MAGIC = b"MEMB"
BACKEND_MAGIC = b"MPLD"
VERSION = 1


@dataclass
class EmbeddingSet:
    ids: list
    speakers: np.ndarray
    domains: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.ids = list(self.ids)
        self.speakers = np.asarray(self.speakers, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        n = len(self.ids)
        if not (len(self.speakers) == len(self.domains) == len(self.vectors) == n):
            raise DataError("embedding set fields differ in length")
        if len(set(self.ids)) != n:
            raise DataError("duplicate utterance ids in embedding set")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def index(self):
        return {u: i for i, u in enumerate(self.ids)}

    def select(self, mask):
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return EmbeddingSet([self.ids[i] for i in idx], self.speakers[idx], self.domains[idx],
                            self.vectors[idx])


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise DataError("truncated file")
    return struct.unpack(fmt, data)


def dumps_embeddings(es):
    out = io.BytesIO()
    out.write(EMB_MAGIC)
    out.write(struct.pack("<III", VERSION, len(es), es.dim if len(es) else 0))
    vecs = np.ascontiguousarray(es.vectors, dtype="<f4")
    for i, uid in enumerate(es.ids):
        raw = uid.encode("utf-8")
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<qq", int(es.speakers[i]), int(es.domains[i])))
        out.write(vecs[i].tobytes())
    return out.getvalue()


def loads_embeddings(data):
    buf = io.BytesIO(data)
    if buf.read(4) != EMB_MAGIC:
        raise DataError("not an MEMB embedding file")
    version, count, dim = _read(buf, "<III")
    if version != VERSION:
        raise DataError(f"unsupported embedding file version {version}")
    ids, spk, dom = [], [], []
    vecs = np.empty((count, dim))
    for i in range(count):
        (n,) = _read(buf, "<H")
        ids.append(buf.read(n).decode("utf-8"))
        s, d = _read(buf, "<qq")
        spk.append(s)
        dom.append(d)
        raw = buf.read(4 * dim)
        if len(raw) != 4 * dim:
            raise DataError("truncated embedding vector")
        vecs[i] = np.frombuffer(raw, dtype="<f4")
    if buf.read(1):
        raise DataError("trailing bytes in embedding file")
    return EmbeddingSet(ids, spk, dom, vecs.reshape(count, dim))


def save_embeddings(es, path):
    with open(path, "wb") as fh:
        fh.write(dumps_embeddings(es))


def load_embeddings(path):
    with open(path, "rb") as fh:
        return loads_embeddings(fh.read())


def dumps_backend(lda, plda, length_norm=True):
    out = io.BytesIO()
    out.write(BACKEND_MAGIC)
    out.write(struct.pack("<IIIBd", VERSION, lda.in_dim, lda.out_dim, int(length_norm),
                          float(lda.metadata.get("ridge", 0.0))))
    for arr in (lda.mean, lda.projection, plda.mu, plda.B, plda.W):
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return out.getvalue()


def loads_backend(data):
    buf = io.BytesIO(data)
    if buf.read(4) != BACKEND_MAGIC:
        raise DataError("not an MPLD backend file")
    version, d_in, d_out, ln, ridge = _read(buf, "<IIIBd")
    if version != VERSION:
        raise DataError(f"unsupported backend file version {version}")

    def arr(*shape):
        n = int(np.prod(shape))
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise DataError("truncated backend file")
        return np.frombuffer(raw, dtype="<f8").astype(float).reshape(shape)

    lda = LdaTransform(arr(d_in), arr(d_out, d_in), {"regularized": ridge > 0, "ridge": ridge})
    plda = PldaModel(arr(d_out), arr(d_out, d_out), arr(d_out, d_out))
    if buf.read(1):
        raise DataError("trailing bytes in backend file")
    return lda, plda, bool(ln)


def save_backend(lda, plda, path, length_norm=True):
    with open(path, "wb") as fh:
        fh.write(dumps_backend(lda, plda, length_norm))


def load_backend(path):
    with open(path, "rb") as fh:
        return loads_backend(fh.read())
