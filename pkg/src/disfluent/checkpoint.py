"""Binary checkpoint format.

Layout (all little-endian):
  magic "DSCK" | version u32 | flags u32 | record_count u32
  then per record:
  name_len u16 | name utf-8 | rank u8 | dims u32 * rank | float32 payload

Records cover trainable parameters and batch-norm running statistics.
When flag bit 0 is set the file also carries optimizer accumulators under
"opt.v."-prefixed names.
"""

import struct

import numpy as np

from .errors import MalformedHeader

MAGIC = b"DSCK"
VERSION = 1
FLAG_OPTIMIZER_STATE = 1

_OPT_PREFIX = "opt.v."


def save_checkpoint(path, arrays: dict[str, np.ndarray],
                    optimizer_state: dict[str, np.ndarray] | None = None) -> None:
    records = dict(arrays)
    flags = 0
    if optimizer_state:
        flags |= FLAG_OPTIMIZER_STATE
        records.update(optimizer_state)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, flags, len(records)))
        for name, arr in records.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path):
    """Returns (arrays, optimizer_state); the latter is None when absent."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != MAGIC:
            raise MalformedHeader(f"{path}: not a checkpoint file")
        version, flags, count = struct.unpack("<III", head[4:])
        if version != VERSION:
            raise MalformedHeader(f"{path}: unsupported checkpoint version {version}")
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise MalformedHeader(f"{path}: truncated record {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    if flags & FLAG_OPTIMIZER_STATE:
        opt = {k: v for k, v in arrays.items() if k.startswith(_OPT_PREFIX)}
        rest = {k: v for k, v in arrays.items() if not k.startswith(_OPT_PREFIX)}
        return rest, opt
    return arrays, None
