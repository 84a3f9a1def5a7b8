"""Binary checkpoints: little-endian, 4-byte magic, u16 version, then
length-prefixed named sections. Masks are stored as packed bitsets.

Byte layout (all integers little-endian):

    magic   b"QPCK"
    version u16
    repeated sections: name_len u16, name utf-8, payload_len u64, payload

Sections, in order: "meta" (JSON: step, layer count), "rng" (JSON numpy
bit-generator state), then "layer<i>" per layer. A layer payload holds the
raw weight/bias arrays followed by the four operator-state blocks
(weight prune, weight quantize, feature prune, feature quantize).
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile

import numpy as np

from ..prune import PruneState
from ..quantize import QuantizeState

MAGIC = b"QPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------- writing

def _w_u8(buf, v): buf.write(struct.pack("<B", v))
def _w_u16(buf, v): buf.write(struct.pack("<H", v))
def _w_u32(buf, v): buf.write(struct.pack("<I", v))
def _w_u64(buf, v): buf.write(struct.pack("<Q", v))
def _w_i64(buf, v): buf.write(struct.pack("<q", v))
def _w_f64(buf, v): buf.write(struct.pack("<d", v))


def _w_array(buf, arr):
    if arr is None:
        _w_u8(buf, 0)
        return
    _w_u8(buf, 1)
    _w_u8(buf, arr.ndim)
    for dim in arr.shape:
        _w_u32(buf, dim)
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _w_bitset(buf, mask):
    if mask is None:
        _w_u8(buf, 0)
        return
    _w_u8(buf, 1)
    _w_u8(buf, mask.ndim)
    for dim in mask.shape:
        _w_u32(buf, dim)
    buf.write(np.packbits(mask.ravel() > 0.0).tobytes())


def _w_prune(buf, state):
    if state is None:
        _w_u8(buf, 0)
        return
    _w_u8(buf, 1)
    _w_u64(buf, state.t)
    _w_f64(buf, state.s_t)
    _w_bitset(buf, state.mask)
    _w_u32(buf, len(state.ring))
    for entry in state.ring:
        _w_array(buf, entry)
    _w_array(buf, state.running_sum)


def _w_quantize(buf, state):
    if state is None:
        _w_u8(buf, 0)
        return
    _w_u8(buf, 1)
    _w_u64(buf, state.step)
    _w_u8(buf, 1 if state.active else 0)
    if state.d is None:
        _w_u8(buf, 0)
    else:
        _w_u8(buf, 1)
        _w_i64(buf, state.d)


def _w_section(out, name: str, payload: bytes):
    encoded = name.encode("utf-8")
    out.write(struct.pack("<H", len(encoded)))
    out.write(encoded)
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path: str, trainer):
    """Serialize trainer step, RNG, parameters and operator states."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", VERSION))
    meta = {"step": trainer.step, "n_layers": len(trainer.net.layers)}
    _w_section(out, "meta", _json_bytes(meta))
    _w_section(out, "rng", _json_bytes(trainer.rng.bit_generator.state))
    for i, layer in enumerate(trainer.net.layers):
        buf = io.BytesIO()
        _w_array(buf, layer.params.weight)
        _w_array(buf, layer.params.bias)
        _w_prune(buf, layer.wp)
        _w_quantize(buf, layer.wq)
        _w_prune(buf, layer.fp)
        _w_quantize(buf, layer.fq)
        _w_section(out, f"layer{i}", buf.getvalue())
    data = out.getvalue()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------- reading

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self): return struct.unpack("<B", self.take(1))[0]
    def u16(self): return struct.unpack("<H", self.take(2))[0]
    def u32(self): return struct.unpack("<I", self.take(4))[0]
    def u64(self): return struct.unpack("<Q", self.take(8))[0]
    def i64(self): return struct.unpack("<q", self.take(8))[0]
    def f64(self): return struct.unpack("<d", self.take(8))[0]

    def array(self):
        if self.u8() == 0:
            return None
        shape = tuple(self.u32() for _ in range(self.u8()))
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(count * 8), dtype="<f8").reshape(shape).copy()

    def bitset(self):
        if self.u8() == 0:
            return None
        shape = tuple(self.u32() for _ in range(self.u8()))
        count = int(np.prod(shape)) if shape else 1
        packed = np.frombuffer(self.take((count + 7) // 8), dtype=np.uint8)
        return np.unpackbits(packed, count=count).astype(np.float64).reshape(shape)


def _r_prune(r: _Reader, state):
    if r.u8() == 0:
        if state is not None:
            raise CheckpointError("checkpoint missing prune state for layer")
        return
    if state is None:
        raise CheckpointError("checkpoint has prune state for unwrapped layer")
    state.t = r.u64()
    state.s_t = r.f64()
    state.mask = r.bitset()
    state.ring.clear()
    for _ in range(r.u32()):
        state.ring.append(r.array())
    state.running_sum = r.array()


def _r_quantize(r: _Reader, state):
    if r.u8() == 0:
        if state is not None:
            raise CheckpointError("checkpoint missing quantize state for layer")
        return
    if state is None:
        raise CheckpointError("checkpoint has quantize state for unwrapped layer")
    state.step = r.u64()
    state.active = r.u8() == 1
    state.d = r.i64() if r.u8() == 1 else None


def load_checkpoint(path: str, trainer):
    """Restore trainer state in place; the trainer must have been built from
    the same plan (layer/wrap structure)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    version = struct.unpack("<H", data[4:6])[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    r = _Reader(data)
    r.pos = 6
    sections = {}
    while r.pos < len(data):
        name = r.take(r.u16()).decode("utf-8")
        sections[name] = r.take(r.u64())

    meta = json.loads(sections["meta"])
    if meta["n_layers"] != len(trainer.net.layers):
        raise CheckpointError(
            f"layer count mismatch: checkpoint {meta['n_layers']}, "
            f"plan {len(trainer.net.layers)}")
    trainer.step = meta["step"]
    trainer.rng.bit_generator.state = json.loads(sections["rng"])
    for i, layer in enumerate(trainer.net.layers):
        lr_ = _Reader(sections[f"layer{i}"])
        weight = lr_.array()
        bias = lr_.array()
        if (weight is None) != (layer.params.weight is None):
            raise CheckpointError(f"layer {i} parameter presence mismatch")
        if weight is not None:
            if weight.shape != layer.params.weight.shape:
                raise CheckpointError(f"layer {i} weight shape mismatch")
            layer.params.weight = weight
        if bias is not None:
            layer.params.bias = bias
        layer.params.zero_grad()
        _r_prune(lr_, layer.wp)
        _r_quantize(lr_, layer.wq)
        _r_prune(lr_, layer.fp)
        _r_quantize(lr_, layer.fq)
