#!/usr/bin/env python3
"""Convert one 2-D tensor from a .safetensors file into the ANYT container.

ANYT layout (little-endian): magic b"ANYT", u32 version (1), u32 rows,
u32 cols, then rows*cols float32 values in row-major order.

A safetensors file is a u64 header length, a JSON header mapping tensor
names to {dtype, shape, data_offsets}, then the raw byte buffer.

    python3 scripts/safetensors_to_anyt.py model.safetensors \
        model.layers.0.mlp.down_proj.weight down_proj.anyt
"""

import argparse
import json
import struct
import sys

import numpy as np

DTYPES = {
    "F32": np.dtype("<f4"),
    "F16": np.dtype("<f2"),
    "F64": np.dtype("<f8"),
}


def bf16_to_f32(raw: bytes) -> np.ndarray:
    bits = np.frombuffer(raw, dtype="<u2").astype(np.uint32) << 16
    return bits.view(np.float32)


def read_tensor(path: str, name: str) -> np.ndarray:
    with open(path, "rb") as f:
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len))
        if name not in header:
            names = ", ".join(k for k in header if k != "__metadata__")
            sys.exit(f"no tensor named {name!r}; available: {names}")
        meta = header[name]
        start, end = meta["data_offsets"]
        f.seek(8 + header_len + start)
        raw = f.read(end - start)
    shape = meta["shape"]
    if len(shape) != 2:
        sys.exit(f"{name} has shape {shape}; only 2-D weights are supported")
    dtype = meta["dtype"]
    if dtype == "BF16":
        values = bf16_to_f32(raw)
    elif dtype in DTYPES:
        values = np.frombuffer(raw, dtype=DTYPES[dtype]).astype(np.float32)
    else:
        sys.exit(f"unsupported dtype {dtype}")
    return values.reshape(shape)


def write_anyt(path: str, m: np.ndarray) -> None:
    if not np.isfinite(m).all():
        sys.exit("tensor contains non-finite values")
    rows, cols = m.shape
    with open(path, "wb") as f:
        f.write(b"ANYT" + struct.pack("<III", 1, rows, cols))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("safetensors")
    p.add_argument("tensor")
    p.add_argument("out")
    a = p.parse_args()
    write_anyt(a.out, read_tensor(a.safetensors, a.tensor))


if __name__ == "__main__":
    main()
