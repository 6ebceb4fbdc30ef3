"""Frame feature files ("MFEA"), manifests and trial-list files.

Feature file (little-endian)::

    b"MFEA" | u32 version | u32 count | u32 dim
    per record: u16 len + utf-8 utterance id | i64 speaker id | i64 domain id
                | u32 n_frames | n_frames x dim f32 (row-major)
"""
import io
import struct

import numpy as np

from ..exceptions import DataError
from ..nn.network import FrameSequence

FEA_MAGIC = b"MFEA"
VERSION = 1


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise DataError("truncated feature file")
    return struct.unpack(fmt, data)


def dumps_features(utterances, dim):
    out = io.BytesIO()
    out.write(FEA_MAGIC)
    out.write(struct.pack("<III", VERSION, len(utterances), dim))
    for u in utterances:
        raw = u.utterance_id.encode("utf-8")
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(struct.pack("<qqI", u.speaker_id, u.domain_id, u.n_frames))
        out.write(np.ascontiguousarray(u.frames, dtype="<f4").tobytes())
    return out.getvalue()


def loads_features(data):
    buf = io.BytesIO(data)
    if buf.read(4) != FEA_MAGIC:
        raise DataError("not an MFEA feature file")
    version, count, dim = _read(buf, "<III")
    if version != VERSION:
        raise DataError(f"unsupported feature file version {version}")
    out = []
    for _ in range(count):
        (n,) = _read(buf, "<H")
        uid = buf.read(n).decode("utf-8")
        spk, dom, frames = _read(buf, "<qqI")
        raw = buf.read(4 * frames * dim)
        if len(raw) != 4 * frames * dim:
            raise DataError(f"truncated frames for {uid!r}")
        mat = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(frames, dim)
        out.append(FrameSequence(mat, uid, spk, dom))
    if buf.read(1):
        raise DataError("trailing bytes in feature file")
    return out, dim


def save_features(utterances, dim, path):
    with open(path, "wb") as fh:
        fh.write(dumps_features(utterances, dim))


def load_features(path):
    with open(path, "rb") as fh:
        return loads_features(fh.read())


def write_manifest(utterances, path):
    with open(path, "w") as fh:
        for u in utterances:
            fh.write(f"{u.utterance_id}\t{u.speaker_id}\t{u.domain_id}\t{u.n_frames}\n")


def read_manifest(path):
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{ln}: expected utt<TAB>speaker<TAB>domain<TAB>frames")
            rows.append((parts[0], int(parts[1]), int(parts[2]), int(parts[3])))
    return rows
