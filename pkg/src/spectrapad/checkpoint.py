"""Named-tensor checkpoint container.

Layout: a UTF-8 text header (format line, payload size, tensor table with
name / dtype / shape / byte offset), the contiguous little-endian float32
payload, then a text trailer carrying the config and dataset hashes. Tensors
are written in sorted-name order so identical contents produce identical
bytes; offsets are validated as non-overlapping and in-bounds on load, and
load(save(x)) is bit-exact for float32 inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ProtocolError

MAGIC = "SPECTRAPAD-CKPT 1"
_DTYPE = np.dtype("<f4")


def save_checkpoint(
    path: Path | str,
    tensors: dict[str, np.ndarray],
    config_hash: str,
    dataset_hash: str,
) -> None:
    names = sorted(tensors)
    table = []
    chunks = []
    offset = 0
    for name in names:
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name may not contain whitespace: {name!r}")
        arr = np.asarray(tensors[name], dtype=_DTYPE)
        # ascontiguousarray promotes 0-d to 1-d, so record the shape first
        shape = "-" if arr.ndim == 0 else ",".join(str(s) for s in arr.shape)
        arr = np.ascontiguousarray(arr)
        table.append(f"{name} f32 {shape} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = "\n".join(
        [MAGIC, f"payload_bytes {offset}", f"tensor_count {len(names)}", *table, "header_end", ""]
    )
    trailer = f"config_hash {config_hash}\ndataset_hash {dataset_hash}\n"
    Path(path).write_bytes(header.encode("utf-8") + b"".join(chunks) + trailer.encode("utf-8"))


def load_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], str, str]:
    blob = Path(path).read_bytes()
    try:
        header_end = blob.index(b"header_end\n")
    except ValueError:
        raise ProtocolError(f"{path}: not a spectrapad checkpoint (no header terminator)")
    header_lines = blob[:header_end].decode("utf-8").splitlines()
    if not header_lines or header_lines[0] != MAGIC:
        raise ProtocolError(f"{path}: bad checkpoint magic")
    payload_bytes = int(header_lines[1].split()[1])
    count = int(header_lines[2].split()[1])
    entries = header_lines[3 : 3 + count]
    if len(entries) != count:
        raise ProtocolError(f"{path}: truncated tensor table")

    payload_start = header_end + len(b"header_end\n")
    payload = blob[payload_start : payload_start + payload_bytes]
    if len(payload) != payload_bytes:
        raise ProtocolError(f"{path}: truncated payload")
    trailer = blob[payload_start + payload_bytes :].decode("utf-8").split()
    if len(trailer) != 4 or trailer[0] != "config_hash" or trailer[2] != "dataset_hash":
        raise ProtocolError(f"{path}: malformed trailer")
    config_hash, dataset_hash = trailer[1], trailer[3]

    tensors: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for line in entries:
        name, dtype, shape_s, offset_s = line.split()
        if dtype != "f32":
            raise ProtocolError(f"{path}: unsupported dtype {dtype} for {name}")
        shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split(","))
        offset = int(offset_s)
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset < 0 or offset + nbytes > payload_bytes:
            raise ProtocolError(f"{path}: tensor {name} out of payload bounds")
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(payload, dtype=_DTYPE, count=max(nbytes // 4, 1), offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ProtocolError(f"{path}: overlapping tensors {n0} and {n1}")
    return tensors, config_hash, dataset_hash
