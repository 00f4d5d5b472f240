"""Binary model files.

Layout (all integers little-endian)::

    b"FTMODEL\\0"            8 bytes
    format version          u32
    header length           u32
    header                  canonical UTF-8 JSON (sorted keys, no spaces)
    tensors                 float64 LE, C order, in header["tensors"] order
    sha256                  32 bytes over everything before it

The header records the architecture, tensor names and shapes, and a
provenance block (config hash, seeds). No timings are stored, so two
identical runs produce identical files.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .baseline import DeepNet
from .layers import ConvLayer, DenseLayer, DropoutSpec, Flatten, MaxPool2x2, OutputHead
from .stacking import FrozenStage, StackedModel

MAGIC = b"FTMODEL\x00"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class ModelFileError(ValueError):
    """Base class for unreadable model files."""


class BadModelMagicError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    def __init__(self, found: int, supported: int = FORMAT_VERSION):
        super().__init__(f"model file format version {found} is not supported "
                         f"(this reader handles version {supported})")
        self.found = found
        self.supported = supported


class ChecksumError(ModelFileError):
    pass


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


# -- encoding models as (architecture, tensors) -----------------------------

def _layer_entry(layer) -> Tuple[dict, List[Tuple[str, np.ndarray]]]:
    if isinstance(layer, DenseLayer):
        return {"type": "dense", "activation": layer.activation}, [
            ("weights", layer.weights), ("biases", layer.biases)]
    if isinstance(layer, ConvLayer):
        return {"type": "conv", "activation": layer.activation}, [
            ("filters", layer.filters), ("biases", layer.biases)]
    if isinstance(layer, MaxPool2x2):
        return {"type": "maxpool2x2"}, []
    if isinstance(layer, Flatten):
        return {"type": "flatten"}, []
    if isinstance(layer, DropoutSpec):
        return {"type": "dropout", "rate": layer.rate}, []
    raise TypeError(f"cannot serialise layer {layer!r}")


def _layer_from_entry(entry: dict, tensors: dict, prefix: str):
    t = entry["type"]
    if t == "dense":
        return DenseLayer(tensors[prefix + "weights"], tensors[prefix + "biases"],
                          entry["activation"])
    if t == "conv":
        return ConvLayer(tensors[prefix + "filters"], tensors[prefix + "biases"],
                         entry["activation"])
    if t == "maxpool2x2":
        return MaxPool2x2()
    if t == "flatten":
        return Flatten()
    if t == "dropout":
        return DropoutSpec(entry["rate"])
    raise ModelFileError(f"unknown layer type {t!r} in model header")


def _encode(model):
    named: List[Tuple[str, np.ndarray]] = []
    if isinstance(model, StackedModel):
        stages = []
        for i, st in enumerate(model.stages):
            entry, ts = _layer_entry(st.layer)
            entry["pool"] = st.pool
            stages.append(entry)
            named += [(f"stage{i}.{n}", a) for n, a in ts]
        arch = {"kind": "stacked", "stages": stages, "head_fc": None}
        if model.head_fc is not None:
            arch["head_fc"], ts = _layer_entry(model.head_fc)
            named += [(f"head_fc.{n}", a) for n, a in ts]
        metadata = model.metadata
    elif isinstance(model, DeepNet):
        layers = []
        for i, layer in enumerate(model.layers):
            entry, ts = _layer_entry(layer)
            layers.append(entry)
            named += [(f"layer{i}.{n}", a) for n, a in ts]
        arch = {"kind": "deep", "layers": layers, "frozen": sorted(model.frozen)}
        metadata = {}
    else:
        raise TypeError(f"cannot save object of type {type(model).__name__}")
    named += [("head.weights", model.head.weights), ("head.biases", model.head.biases)]
    return arch, named, metadata


def _decode(arch: dict, tensors: dict, metadata: dict):
    head = OutputHead(tensors["head.weights"], tensors["head.biases"])
    if arch["kind"] == "stacked":
        stages = []
        for i, entry in enumerate(arch["stages"]):
            layer = _layer_from_entry(entry, tensors, f"stage{i}.")
            stages.append(FrozenStage(layer, pool=entry["pool"], index=i))
        head_fc = None
        if arch["head_fc"] is not None:
            head_fc = _layer_from_entry(arch["head_fc"], tensors, "head_fc.")
        return StackedModel(stages, head, head_fc, metadata=metadata)
    if arch["kind"] == "deep":
        layers = [_layer_from_entry(e, tensors, f"layer{i}.") for i, e in enumerate(arch["layers"])]
        return DeepNet(layers, head, frozen=set(arch["frozen"]))
    raise ModelFileError(f"unknown model kind {arch['kind']!r}")


# -- public API --------------------------------------------------------------

def model_to_bytes(model, provenance: Optional[dict] = None) -> bytes:
    arch, named, metadata = _encode(model)
    header = {
        "architecture": arch,
        "metadata": metadata,
        "provenance": provenance or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named],
    }
    hb = _canonical(header)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hb)), hb]
    parts += [np.ascontiguousarray(a, dtype=_LE_F64).tobytes() for _, a in named]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def model_from_bytes(blob: bytes, source: str = "<bytes>"):
    """Decode a model; returns ``(model, provenance)``."""
    if blob[:8] != MAGIC:
        raise BadModelMagicError(f"{source}: not a model file (bad magic)")
    if len(blob) < 16:
        raise ChecksumError(f"{source}: file truncated inside the preamble")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version)
    if len(blob) < 16 + 32:
        raise ChecksumError(f"{source}: file truncated before the checksum")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{source}: checksum mismatch (file truncated or corrupted)")
    try:
        header = json.loads(body[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFileError(f"{source}: unreadable header: {e}") from None
    tensors = {}
    off = 16 + hlen
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(body, dtype=_LE_F64, count=count, offset=off)
        tensors[t["name"]] = arr.astype(np.float64).reshape(shape)
        off += 8 * count
    if off != len(body):
        raise ModelFileError(f"{source}: tensor payload does not match the header")
    return _decode(header["architecture"], tensors, header["metadata"]), header["provenance"]


def save_model(model, path, provenance: Optional[dict] = None) -> None:
    Path(path).write_bytes(model_to_bytes(model, provenance))


def load_model(path):
    """Read a model file; returns ``(model, provenance)``."""
    p = Path(path)
    return model_from_bytes(p.read_bytes(), str(p))
