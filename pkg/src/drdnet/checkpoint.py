"""Binary checkpoint format.

Little-endian layout:

    magic "DRDC" | u32 version
    config block: u32 length, UTF-8 "key = value" lines (network/train/loss echo
                  plus state.epoch / state.iteration counters)
    tensor section: u32 count, then per tensor
                  u16 name length | name | u8 dtype tag (0 = float32)
                  | u8 rank | rank x u32 dims | raw float32 data
    optimizer block: u8 present; if present u64 step count, u32 entries, each
                  u16 name length | name | u32 numel | m raw | v raw (float32)
    rng block: u8 tag (0 = none, 1 = PCG64); PCG64 stores 16-byte state and inc,
                  u8 has_uint32, u32 uinteger
    trailer "DRDE"

Tensors and optimizer entries are written sorted by name, so save -> load -> save
is byte-identical. Any short read raises CheckpointError (corruption); magic,
version, or shape mismatches raise CompatibilityError naming the offender.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CheckpointError, CompatibilityError

MAGIC = b"DRDC"
TRAILER = b"DRDE"
VERSION = 1
_DTYPE_F32 = 0


@dataclass
class AdamState:
    t: int = 0
    moments: dict = field(default_factory=dict)   # name -> (m, v) float32 arrays


@dataclass
class Checkpoint:
    config: dict                                   # flat str -> str echo
    tensors: dict                                  # name -> float32 ndarray
    adam: Optional[AdamState] = None
    rng: Optional[dict] = None                     # PCG64 bit-generator state
    version: int = VERSION

    @property
    def epoch(self) -> int:
        return int(self.config.get("state.epoch", "0"))

    @property
    def iteration(self) -> int:
        return int(self.config.get("state.iteration", "0"))

    def apply_to(self, module):
        """Copy stored tensors into a module's parameters/buffers.

        Validates shapes against the constructed network; the first mismatch (in
        file order) is reported by name.
        """
        state = dict(module.named_parameters())
        buffers = dict(module.named_buffers())
        for name, arr in self.tensors.items():
            if name in state:
                target = state.pop(name)
                if target.data.shape != arr.shape:
                    raise CompatibilityError(
                        f"parameter {name}: checkpoint shape {arr.shape} does not "
                        f"match network shape {target.data.shape}")
                target.data = arr.astype(target.data.dtype).copy()
            elif name in buffers:
                target = buffers.pop(name)
                if target.shape != arr.shape:
                    raise CompatibilityError(
                        f"buffer {name}: checkpoint shape {arr.shape} does not "
                        f"match network shape {target.shape}")
                target[...] = arr
            else:
                raise CompatibilityError(f"checkpoint tensor {name} has no home in the network")
        leftover = sorted(state) + sorted(buffers)
        if leftover:
            raise CompatibilityError(f"checkpoint is missing tensors: {leftover[:3]}")


def state_tensors(module) -> dict:
    """Parameters plus persistent buffers, as float32 arrays keyed by dotted name."""
    out = {}
    for name, p in module.named_parameters():
        out[name] = np.asarray(p.data, dtype=np.float32).copy()
    for name, buf in module.named_buffers():
        out[name] = np.asarray(buf, dtype=np.float32).copy()
    return out


# ---------------------------------------------------------------------------

def _encode_name(buf, name: str):
    raw = name.encode()
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"tensor name too long: {name[:40]}...")
    buf.append(struct.pack("<H", len(raw)))
    buf.append(raw)


def save_checkpoint(ckpt: Checkpoint, path):
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    cfg_text = "\n".join(f"{k} = {v}" for k, v in sorted(ckpt.config.items())).encode()
    parts.append(struct.pack("<I", len(cfg_text)))
    parts.append(cfg_text)

    parts.append(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype=np.float32)
        _encode_name(parts, name)
        parts.append(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4", copy=False).tobytes())

    if ckpt.adam is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<Q", ckpt.adam.t))
        parts.append(struct.pack("<I", len(ckpt.adam.moments)))
        for name in sorted(ckpt.adam.moments):
            m, v = ckpt.adam.moments[name]
            _encode_name(parts, name)
            parts.append(struct.pack("<I", m.size))
            parts.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())

    if ckpt.rng is None:
        parts.append(struct.pack("<B", 0))
    else:
        state = ckpt.rng["state"]
        parts.append(struct.pack("<B", 1))
        parts.append(int(state["state"]).to_bytes(16, "little"))
        parts.append(int(state["inc"]).to_bytes(16, "little"))
        parts.append(struct.pack("<B", 1 if ckpt.rng.get("has_uint32") else 0))
        parts.append(struct.pack("<I", ckpt.rng.get("uinteger", 0)))

    parts.append(TRAILER)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated checkpoint (needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data, path)
    magic = rd.take(4)
    if magic != MAGIC:
        raise CompatibilityError(f"{path}: bad magic {magic!r}, not a checkpoint")
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise CompatibilityError(f"{path}: unsupported checkpoint version {version}")

    (cfg_len,) = rd.unpack("<I")
    config = {}
    cfg_text = rd.take(cfg_len).decode()
    for line in cfg_text.splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            config[key] = value

    (n_tensors,) = rd.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode()
        dtype_tag, rank = rd.unpack("<BB")
        if dtype_tag != _DTYPE_F32:
            raise CompatibilityError(f"{path}: tensor {name} has unknown dtype tag {dtype_tag}")
        dims = rd.unpack(f"<{rank}I") if rank else ()
        numel = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = rd.take(4 * numel)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)

    (adam_present,) = rd.unpack("<B")
    adam = None
    if adam_present:
        (t,) = rd.unpack("<Q")
        (n_entries,) = rd.unpack("<I")
        moments = {}
        for _ in range(n_entries):
            (name_len,) = rd.unpack("<H")
            name = rd.take(name_len).decode()
            (numel,) = rd.unpack("<I")
            m = np.frombuffer(rd.take(4 * numel), dtype="<f4").astype(np.float32)
            v = np.frombuffer(rd.take(4 * numel), dtype="<f4").astype(np.float32)
            moments[name] = (m, v)
        adam = AdamState(t=int(t), moments=moments)

    (rng_tag,) = rd.unpack("<B")
    rng = None
    if rng_tag == 1:
        state = int.from_bytes(rd.take(16), "little")
        inc = int.from_bytes(rd.take(16), "little")
        (has_uint32,) = rd.unpack("<B")
        (uinteger,) = rd.unpack("<I")
        rng = {"bit_generator": "PCG64",
               "state": {"state": state, "inc": inc},
               "has_uint32": int(has_uint32), "uinteger": int(uinteger)}
    elif rng_tag != 0:
        raise CompatibilityError(f"{path}: unknown rng block tag {rng_tag}")

    trailer = rd.take(4)
    if trailer != TRAILER:
        raise CheckpointError(f"{path}: missing end marker, file is corrupt")
    return Checkpoint(config=config, tensors=tensors, adam=adam, rng=rng, version=version)
