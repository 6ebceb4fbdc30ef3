"""Binary checkpoint format for networks.

Layout (little-endian)::

    b"MSDA" | u32 version | u8 network type | u32 in_dim | u16 n_layers
    | u16 len + utf-8 extra tag (embedding layer or head kind)
    per layer: u8 kind | u16 len + utf-8 name | u32 out_dim | u32 context
               | u32 dilation | u8 activation | u8 trainable
    payload: for every parameterised layer in order, W (row-major) then b,
             as float64
"""
import io
import struct

import numpy as np

from ..exceptions import DataError
from .layers import ACTIVATIONS, LAYER_KINDS, LayerSpec
from .network import ClassifierHead, EmbeddingNetwork, Network

MAGIC = b"MSDA"
VERSION = 1
_TYPES = {0: Network, 1: EmbeddingNetwork, 2: ClassifierHead}


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    data = buf.read(size)
    if len(data) != size:
        raise DataError("truncated checkpoint")
    return struct.unpack(fmt, data)


def _read_str(buf):
    (n,) = _read(buf, "<H")
    return buf.read(n).decode("utf-8")


def dumps(net):
    if isinstance(net, EmbeddingNetwork):
        type_code, tag = 1, net.embedding_layer
    elif isinstance(net, ClassifierHead):
        type_code, tag = 2, net.head_kind
    else:
        type_code, tag = 0, "frame" if net.frame_level_input else "segment"
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IBIH", VERSION, type_code, net.in_dim, len(net.specs)))
    out.write(_pack_str(tag))
    for s in net.specs:
        out.write(struct.pack("<B", LAYER_KINDS.index(s.kind)))
        out.write(_pack_str(s.name))
        out.write(struct.pack("<IIIBB", s.out_dim, s.context, s.dilation,
                              ACTIVATIONS.index(s.activation), int(s.trainable)))
    for s in net.specs:
        if s.has_params:
            p = net.params[s.name]
            out.write(np.ascontiguousarray(p["W"], dtype="<f8").tobytes())
            out.write(np.ascontiguousarray(p["b"], dtype="<f8").tobytes())
    return out.getvalue()


def loads(data):
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise DataError("not an MSDA checkpoint")
    version, type_code, in_dim, n_layers = _read(buf, "<IBIH")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    tag = _read_str(buf)
    specs = []
    for _ in range(n_layers):
        (kind,) = _read(buf, "<B")
        name = _read_str(buf)
        out_dim, context, dilation, act, trainable = _read(buf, "<IIIBB")
        specs.append(LayerSpec(name, LAYER_KINDS[kind], out_dim, context, dilation,
                               ACTIVATIONS[act], bool(trainable)))
    cls = _TYPES[type_code]
    if cls is EmbeddingNetwork:
        net = EmbeddingNetwork(specs, in_dim, embedding_layer=tag)
    elif cls is ClassifierHead:
        net = ClassifierHead(specs, in_dim, head_kind=tag)
    else:
        net = Network(specs, in_dim, frame_level_input=(tag == "frame"))
    for s, (d_in, d_out) in zip(net.specs, net.dims):
        if not s.has_params:
            continue
        rows = s.context * d_in if s.kind == "time_delay" else d_in
        w = np.frombuffer(buf.read(8 * rows * d_out), dtype="<f8")
        b = np.frombuffer(buf.read(8 * d_out), dtype="<f8")
        if w.size != rows * d_out or b.size != d_out:
            raise DataError("truncated parameter payload")
        net.params[s.name] = {"W": w.reshape(rows, d_out).astype(float), "b": b.astype(float)}
    if buf.read(1):
        raise DataError("trailing bytes after parameter payload")
    return net


def save(net, path):
    with open(path, "wb") as fh:
        fh.write(dumps(net))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


BUNDLE_MAGIC = b"MSDB"


def dumps_bundle(nets):
    """Serialise a name -> network mapping (extractor plus heads) in key order."""
    out = io.BytesIO()
    out.write(BUNDLE_MAGIC)
    out.write(struct.pack("<IH", VERSION, len(nets)))
    for name, net in nets.items():
        blob = dumps(net)
        out.write(_pack_str(name))
        out.write(struct.pack("<Q", len(blob)))
        out.write(blob)
    return out.getvalue()


def loads_bundle(data):
    buf = io.BytesIO(data)
    if buf.read(4) != BUNDLE_MAGIC:
        raise DataError("not an MSDA checkpoint bundle")
    version, count = _read(buf, "<IH")
    if version != VERSION:
        raise DataError(f"unsupported bundle version {version}")
    nets = {}
    for _ in range(count):
        name = _read_str(buf)
        (size,) = _read(buf, "<Q")
        blob = buf.read(size)
        if len(blob) != size:
            raise DataError("truncated bundle entry")
        nets[name] = loads(blob)
    if buf.read(1):
        raise DataError("trailing bytes after bundle")
    return nets


def save_bundle(nets, path):
    with open(path, "wb") as fh:
        fh.write(dumps_bundle(nets))


def load_bundle(path):
    with open(path, "rb") as fh:
        return loads_bundle(fh.read())
