"""
Binary containers.

Volumes (".ctp4"): magic b"CTP4VOL\\0", then little-endian

    u32 version, u32 dtype code, 5 x u32 dims (X, Y, Z, T, C), f64 pixel spacing, f64 slice thickness,
    u32 schedule length, f64 instants, f64 rescale slope, f64 rescale intercept

followed by the raw payload, last axis fastest. Masks use the same layout with the u8 dtype code.

Checkpoints: magic b"CTP4MDL\\0", u32 version, u32 length + network config JSON, u32 parameter count, then per
parameter u32 name length + name + tensor block (u32 dtype code, u32 rank, rank x u32 dims, payload).
"""

__all__ = [
    "VOLUME_MAGIC",
    "MODEL_MAGIC",
    "write_volume",
    "read_volume",
    "write_study",
    "read_study",
    "write_mask",
    "read_mask",
    "write_checkpoint",
    "read_checkpoint",
]

import json
import math
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from src.config_schema import Group, NetworkConfig
from src.exceptions import FormatError, ShapeError
from src.modules.pipeline.study import STUDY_ROLES, CtpStudy
from src.modules.tensor.tensor import Tensor
from src.modules.tensor.volume import MaskVolume, VolumeMeta

VOLUME_MAGIC = b"CTP4VOL\0"
MODEL_MAGIC = b"CTP4MDL\0"
FORMAT_VERSION = 1

DTYPE_CODES: dict[int, np.dtype] = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
CODE_BY_DTYPE: dict[np.dtype, int] = {dtype.newbyteorder("="): code for code, dtype in DTYPE_CODES.items()}

MAX_PAYLOAD_BYTES = 2**40


class _Reader:
    """Cursor over a byte buffer that reports the offset of every failure."""

    def __init__(self, buffer: bytes):
        self.buffer = buffer
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.buffer):
            left = len(self.buffer) - self.offset
            raise FormatError(f"Truncated {what}: need {size} bytes, {left} left", self.offset)
        chunk = self.buffer[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def u32(self, what: str) -> int:
        return self.unpack("<I", what)[0]

    def f64(self, what: str) -> float:
        return self.unpack("<d", what)[0]

    def magic(self, expected: bytes) -> None:
        found = self.take(len(expected), "magic")
        if found != expected:
            raise FormatError(f"Bad magic {found!r}, expected {expected!r}", 0)

    def version(self) -> None:
        at = self.offset
        version = self.u32("version")
        if version != FORMAT_VERSION:
            raise FormatError(f"Unsupported format version {version}", at)

    def dtype(self) -> np.dtype:
        at = self.offset
        code = self.u32("dtype code")
        if code not in DTYPE_CODES:
            raise FormatError(f"Unknown dtype code {code}", at)
        return DTYPE_CODES[code]

    def payload(self, dims: tuple[int, ...], dtype: np.dtype, exact: bool) -> np.ndarray:
        at = self.offset
        size = math.prod(dims) * dtype.itemsize
        if size > MAX_PAYLOAD_BYTES:
            raise FormatError(f"Dimensions {dims} overflow the payload limit", at)
        remaining = len(self.buffer) - self.offset
        if size > remaining or (exact and size != remaining):
            raise FormatError(f"Payload of {remaining} bytes does not match dimensions {dims} ({size} bytes)", at)
        data = np.frombuffer(self.take(size, "payload"), dtype=dtype).reshape(dims)
        return data.astype(dtype.newbyteorder("="))


def _dtype_code(array: np.ndarray) -> int:
    code = CODE_BY_DTYPE.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ShapeError(f"Cannot store dtype {array.dtype}; use float32, float64 or uint8")
    return code


def _payload(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype=DTYPE_CODES[_dtype_code(array)]).tobytes(order="C")


def write_volume(path: Path, data: np.ndarray, meta: VolumeMeta) -> None:
    """
    Write an array of rank <= 5; missing trailing axes are stored with extent 1.
    """
    data = np.asarray(data)
    if data.ndim > 5:
        raise ShapeError(f"Volumes have at most 5 axes, got {data.ndim}")
    dims = (*data.shape, *(1,) * (5 - data.ndim))
    header = [VOLUME_MAGIC, struct.pack("<II", FORMAT_VERSION, _dtype_code(data)), struct.pack("<5I", *dims)]
    header.append(struct.pack("<dd", meta.pixel_spacing_mm, meta.slice_thickness_mm))
    header.append(struct.pack(f"<I{len(meta.time_schedule)}d", len(meta.time_schedule), *meta.time_schedule))
    header.append(struct.pack("<dd", meta.rescale_slope, meta.rescale_intercept))
    with open(path, "wb") as f:
        f.write(b"".join(header))
        f.write(_payload(data))


def read_volume(path: Path) -> tuple[np.ndarray, VolumeMeta]:
    """
    Returns the (X, Y, Z, T, C) array and its metadata.
    """
    with open(path, "rb") as f:
        reader = _Reader(f.read())
    reader.magic(VOLUME_MAGIC)
    reader.version()
    dtype = reader.dtype()
    dims = reader.unpack("<5I", "dimensions")
    pixel_spacing, slice_thickness = reader.unpack("<dd", "spacing")
    at = reader.offset
    n_instants = reader.u32("schedule length")
    if n_instants * 8 > len(reader.buffer) - reader.offset:
        raise FormatError(f"Schedule of {n_instants} instants overflows the file", at)
    schedule = list(reader.unpack(f"<{n_instants}d", "schedule"))
    slope, intercept = reader.unpack("<dd", "rescale")
    data = reader.payload(dims, dtype, exact=True)
    try:
        meta = VolumeMeta(
            pixel_spacing_mm=pixel_spacing,
            slice_thickness_mm=slice_thickness,
            time_schedule=schedule,
            rescale_slope=slope,
            rescale_intercept=intercept,
        )
    except ValueError as e:
        raise FormatError(f"Invalid metadata: {e}", at) from e
    return data, meta


def write_study(path: Path, study: CtpStudy) -> None:
    write_volume(path, study.raw.data, study.meta)


def read_study(path: Path, patient_id: str = "", group: Group = Group.LVO) -> CtpStudy:
    data, meta = read_volume(path)
    if data.shape[4] != 1:
        raise FormatError(f"Study files hold one channel, found {data.shape[4]}", 0)
    return CtpStudy(Tensor(data[..., 0], STUDY_ROLES), meta, patient_id or Path(path).stem, group)


def write_mask(path: Path, mask: MaskVolume, meta: VolumeMeta) -> None:
    write_volume(path, mask.labels, meta.model_copy(update={"time_schedule": []}))


def read_mask(path: Path) -> MaskVolume:
    data, _ = read_volume(path)
    if data.dtype != np.uint8 or data.shape[3:] != (1, 1):
        raise FormatError(f"Not a mask volume: dtype {data.dtype}, dims {data.shape}", 0)
    try:
        return MaskVolume(data[:, :, :, 0, 0])
    except ShapeError as e:
        raise FormatError(str(e), 0) from e


def write_checkpoint(path: Path, config: NetworkConfig, state: Mapping[str, np.ndarray]) -> None:
    document = config.model_dump_json().encode("utf-8")
    chunks = [MODEL_MAGIC, struct.pack("<II", FORMAT_VERSION, len(document)), document, struct.pack("<I", len(state))]
    for name, value in state.items():
        value = np.asarray(value)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<II{value.ndim}I", _dtype_code(value), value.ndim, *value.shape))
        chunks.append(_payload(value))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def read_checkpoint(path: Path) -> tuple[NetworkConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        reader = _Reader(f.read())
    reader.magic(MODEL_MAGIC)
    reader.version()
    at = reader.offset
    document = reader.take(reader.u32("config length"), "config")
    try:
        config = NetworkConfig.model_validate(json.loads(document))
    except ValueError as e:
        raise FormatError(f"Invalid network config: {e}", at) from e

    state: dict[str, np.ndarray] = {}
    for _ in range(reader.u32("parameter count")):
        name = reader.take(reader.u32("name length"), "parameter name").decode("utf-8")
        dtype = reader.dtype()
        rank = reader.u32("rank")
        if rank > 8:
            raise FormatError(f"Parameter {name!r} has implausible rank {rank}", reader.offset - 4)
        dims = reader.unpack(f"<{rank}I", "parameter dimensions")
        state[name] = reader.payload(dims, dtype, exact=False)
    if reader.offset != len(reader.buffer):
        raise FormatError("Trailing bytes after the last parameter", reader.offset)
    return config, state
