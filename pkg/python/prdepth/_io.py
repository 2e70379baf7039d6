"""Readers and writers for the on-disk formats.

- PFM (``Pf`` grey / ``PF`` colour) float images, written little-endian
  with scale -1.0 and bottom-up rows.
- Binary PGM (``P5``) and PPM (``P6``), maxval up to 65535 (16-bit
  samples are big-endian).
- Plane-residual maps: 16-bit PGM labels plus a PFM residual.
- Logit volumes: D concatenated PFM images with a one-line sidecar.
- Plane sets: one text line ``strategy D d_1 ... d_D``.
- Parameter checkpoints: ``PRDC`` binary container of named f64 tensors.
"""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING, cast, get_args

import numpy as np
import numpy.typing as npt

from prdepth._errors import FormatError, InvalidArgumentError
from prdepth._planes import DepthPlaneSet, PlaneStrategy, PRMap

if TYPE_CHECKING:
    from collections.abc import Mapping

logger = logging.getLogger(__name__)

Pathish = str | os.PathLike[str]

CHECKPOINT_MAGIC = b"PRDC"
CHECKPOINT_VERSION = 1
VOLUME_SIDECAR_SUFFIX = ".hdr"


def _atomic_write(path: Pathish, data: bytes) -> None:
    # Write next to the target, then rename, so readers never see a partial file.
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        Path(tmp_name).replace(target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


class _Cursor:
    """Token reader over a netpbm-style ASCII header."""

    def __init__(self, buf: bytes, offset: int = 0, *, comments: bool = True) -> None:
        self.buf = buf
        self.pos = offset
        self.comments = comments

    def _skip_space(self) -> None:
        while self.pos < len(self.buf):
            ch = self.buf[self.pos : self.pos + 1]
            if ch.isspace():
                self.pos += 1
            elif self.comments and ch == b"#":
                end = self.buf.find(b"\n", self.pos)
                self.pos = len(self.buf) if end < 0 else end + 1
            else:
                return

    def token(self) -> bytes:
        self._skip_space()
        start = self.pos
        while self.pos < len(self.buf) and not self.buf[self.pos : self.pos + 1].isspace():
            self.pos += 1
        if start == self.pos:
            msg = "unexpected end of header"
            raise FormatError(msg)
        return self.buf[start : self.pos]

    def integer(self, what: str) -> int:
        raw = self.token()
        try:
            value = int(raw)
        except ValueError:
            msg = f"malformed {what}: {raw!r}"
            raise FormatError(msg) from None
        if value <= 0:
            msg = f"{what} must be positive, got {value}"
            raise FormatError(msg)
        return value

    def end_header(self) -> None:
        # Exactly one whitespace byte separates the header from the payload.
        if self.pos >= len(self.buf) or not self.buf[self.pos : self.pos + 1].isspace():
            msg = "header is not terminated by whitespace"
            raise FormatError(msg)
        self.pos += 1


def _take(buf: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(buf):
        msg = f"truncated {what}: need {size} bytes, have {len(buf) - offset}"
        raise FormatError(msg)
    return buf[offset : offset + size]


def _encode_pfm(image: npt.ArrayLike) -> bytes:
    values = np.asarray(image)
    if values.ndim == 2:
        tag, rows = b"Pf", values
    elif values.ndim == 3 and values.shape[0] == 3:
        tag, rows = b"PF", np.moveaxis(values, 0, -1)
    else:
        msg = f"PFM stores H x W or 3 x H x W images, got {values.shape}"
        raise InvalidArgumentError(msg)
    height, width = rows.shape[:2]
    payload = np.ascontiguousarray(rows[::-1], dtype="<f4").tobytes()
    return b"%s\n%d %d\n-1.0\n" % (tag, width, height) + payload


def _decode_pfm(buf: bytes, offset: int = 0) -> tuple[npt.NDArray[np.float32], int]:
    cursor = _Cursor(buf, offset, comments=False)
    tag = cursor.token()
    if tag not in {b"Pf", b"PF"}:
        msg = f"not a PFM image: magic {tag!r}"
        raise FormatError(msg)
    width = cursor.integer("PFM width")
    height = cursor.integer("PFM height")
    raw_scale = cursor.token()
    cursor.end_header()
    try:
        scale = float(raw_scale)
    except ValueError:
        msg = f"malformed PFM scale: {raw_scale!r}"
        raise FormatError(msg) from None
    if scale == 0 or not np.isfinite(scale):
        msg = f"PFM scale must be non-zero, got {scale}"
        raise FormatError(msg)
    channels = 3 if tag == b"PF" else 1
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    size = width * height * channels * 4
    payload = _take(buf, cursor.pos, size, "PFM payload")
    values = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if channels == 1:
        image = values.reshape(height, width)[::-1]
    else:
        image = np.moveaxis(values.reshape(height, width, 3)[::-1], -1, 0)
    return np.ascontiguousarray(image), cursor.pos + size


def write_pfm(path: Pathish, image: npt.ArrayLike) -> None:
    _atomic_write(path, _encode_pfm(image))


def read_pfm(path: Pathish) -> npt.NDArray[np.float32]:
    buf = Path(path).read_bytes()
    image, end = _decode_pfm(buf)
    if end != len(buf):
        msg = f"{path}: {len(buf) - end} trailing bytes after PFM payload"
        raise FormatError(msg)
    return image


def _encode_pnm(tag: bytes, rows: npt.NDArray[np.generic], maxval: int) -> bytes:
    if not 1 <= maxval <= 65535:
        msg = f"unsupported maxval {maxval}"
        raise InvalidArgumentError(msg)
    values = np.asarray(rows)
    if np.any(values < 0) or np.any(values > maxval):
        msg = f"sample values must lie in [0, {maxval}]"
        raise InvalidArgumentError(msg)
    dtype = ">u2" if maxval > 255 else "u1"
    height, width = values.shape[:2]
    payload = np.ascontiguousarray(values, dtype=dtype).tobytes()
    return b"%s\n%d %d\n%d\n" % (tag, width, height, maxval) + payload


def _decode_pnm(buf: bytes, tag: bytes, channels: int) -> npt.NDArray[np.uint16]:
    cursor = _Cursor(buf)
    magic = cursor.token()
    if magic != tag:
        msg = f"expected {tag.decode()} image, found magic {magic!r}"
        raise FormatError(msg)
    width = cursor.integer("width")
    height = cursor.integer("height")
    maxval = cursor.integer("maxval")
    cursor.end_header()
    if maxval > 65535:
        msg = f"unsupported maxval {maxval}"
        raise FormatError(msg)
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    size = width * height * channels * dtype.itemsize
    payload = _take(buf, cursor.pos, size, f"{tag.decode()} payload")
    values = np.frombuffer(payload, dtype=dtype).astype(np.uint16)
    if np.any(values > maxval):
        msg = f"sample exceeds maxval {maxval}"
        raise FormatError(msg)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return values.reshape(shape)


def write_pgm(path: Pathish, image: npt.ArrayLike, *, maxval: int = 255) -> None:
    values = np.asarray(image)
    if values.ndim != 2:
        msg = f"PGM stores H x W images, got {values.shape}"
        raise InvalidArgumentError(msg)
    _atomic_write(path, _encode_pnm(b"P5", values, maxval))


def read_pgm(path: Pathish) -> npt.NDArray[np.uint16]:
    return _decode_pnm(Path(path).read_bytes(), b"P5", 1)


def write_ppm(path: Pathish, image: npt.ArrayLike, *, maxval: int = 255) -> None:
    """Write a 3 x H x W integer image."""
    values = np.asarray(image)
    if values.ndim != 3 or values.shape[0] != 3:
        msg = f"PPM stores 3 x H x W images, got {values.shape}"
        raise InvalidArgumentError(msg)
    _atomic_write(path, _encode_pnm(b"P6", np.moveaxis(values, 0, -1), maxval))


def read_ppm(path: Pathish) -> npt.NDArray[np.uint16]:
    """Read a binary PPM as a 3 x H x W array."""
    return np.ascontiguousarray(
        np.moveaxis(_decode_pnm(Path(path).read_bytes(), b"P6", 3), -1, 0)
    )


def write_pr_map(plane_path: Pathish, residual_path: Pathish, pr: PRMap) -> None:
    write_pgm(plane_path, pr.plane, maxval=65535)
    write_pfm(residual_path, pr.residual)


def read_pr_map(plane_path: Pathish, residual_path: Pathish) -> PRMap:
    plane = read_pgm(plane_path).astype(np.int64)
    residual = read_pfm(residual_path).astype(np.float64)
    if plane.shape != residual.shape:
        msg = f"plane image {plane.shape} and residual image {residual.shape} disagree"
        raise FormatError(msg)
    return PRMap(plane, np.where(plane > 0, residual, 0.0))


def format_plane_set(planes: DepthPlaneSet) -> str:
    depths = " ".join(repr(float(d)) for d in planes.depths)
    return f"{planes.strategy} {planes.count} {depths}"


def parse_plane_set(text: str) -> DepthPlaneSet:
    parts = text.split()
    if len(parts) < 2 or parts[0] not in get_args(PlaneStrategy):
        msg = f"malformed plane set: {text.strip()!r}"
        raise FormatError(msg)
    try:
        count = int(parts[1])
        depths = np.array([float(v) for v in parts[2:]])
    except ValueError:
        msg = f"malformed plane set: {text.strip()!r}"
        raise FormatError(msg) from None
    if depths.size != count:
        msg = f"plane set declares {count} planes but lists {depths.size}"
        raise FormatError(msg)
    strategy = cast("PlaneStrategy", parts[0])
    try:
        return DepthPlaneSet(depths, strategy, float(depths[0]), float(depths[-1]))
    except (InvalidArgumentError, IndexError) as exc:
        msg = f"invalid plane set: {exc}"
        raise FormatError(msg) from exc


def write_plane_set(path: Pathish, planes: DepthPlaneSet) -> None:
    _atomic_write(path, (format_plane_set(planes) + "\n").encode())


def read_plane_set(path: Pathish) -> DepthPlaneSet:
    return parse_plane_set(Path(path).read_text(encoding="utf-8"))


def _sidecar(path: Pathish) -> Path:
    p = Path(path)
    return p.with_name(p.name + VOLUME_SIDECAR_SUFFIX)


def write_volume(path: Pathish, volume: npt.ArrayLike, depths: npt.ArrayLike) -> None:
    """Write a D x H x W volume as D concatenated PFM images plus a sidecar.

    The sidecar holds one line: ``D H W d_1 ... d_D``.
    """
    values = np.asarray(volume)
    plane_depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if values.ndim != 3 or values.shape[0] != plane_depths.size:
        msg = f"volume {values.shape} does not match {plane_depths.size} plane depths"
        raise InvalidArgumentError(msg)
    count, height, width = values.shape
    header = " ".join([
        str(count),
        str(height),
        str(width),
        *(repr(float(d)) for d in plane_depths),
    ])
    _atomic_write(path, b"".join(_encode_pfm(channel) for channel in values))
    _atomic_write(_sidecar(path), (header + "\n").encode())


def read_volume(path: Pathish) -> tuple[npt.NDArray[np.float32], npt.NDArray[np.float64]]:
    """Return ``(volume, plane_depths)``."""
    fields = _sidecar(path).read_text(encoding="utf-8").split()
    try:
        count, height, width = (int(v) for v in fields[:3])
        depths = np.array([float(v) for v in fields[3:]])
    except ValueError:
        msg = f"malformed volume sidecar for {path}"
        raise FormatError(msg) from None
    if depths.size != count:
        msg = f"volume sidecar lists {depths.size} depths for {count} channels"
        raise FormatError(msg)

    buf = Path(path).read_bytes()
    channels: list[npt.NDArray[np.float32]] = []
    offset = 0
    for _ in range(count):
        channel, offset = _decode_pfm(buf, offset)
        if channel.shape != (height, width):
            msg = f"volume channel {channel.shape} != sidecar size {(height, width)}"
            raise FormatError(msg)
        channels.append(channel)
    if offset != len(buf):
        msg = f"{path}: trailing bytes after {count} volume channels"
        raise FormatError(msg)
    return np.stack(channels), depths


def save_checkpoint(path: Pathish, params: Mapping[str, npt.ArrayLike]) -> None:
    """Serialize named tensors, little-endian, in mapping order."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        array = np.asarray(value, dtype="<f8")
        encoded = name.encode()
        chunks.extend((
            struct.pack("<I", len(encoded)),
            encoded,
            struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape),
            np.ascontiguousarray(array).tobytes(),
        ))
    _atomic_write(path, b"".join(chunks))
    logger.info("wrote checkpoint %s (%d tensors)", path, len(params))


def load_checkpoint(path: Pathish) -> dict[str, npt.NDArray[np.float64]]:
    buf = Path(path).read_bytes()
    if _take(buf, 0, 4, "checkpoint magic") != CHECKPOINT_MAGIC:
        msg = f"{path} is not a checkpoint"
        raise FormatError(msg)
    version, count = struct.unpack("<II", _take(buf, 4, 8, "checkpoint header"))
    if version != CHECKPOINT_VERSION:
        msg = f"unsupported checkpoint version {version}"
        raise FormatError(msg)

    offset = 12
    params: dict[str, npt.NDArray[np.float64]] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _take(buf, offset, 4, "tensor name length"))
        offset += 4
        try:
            name = _take(buf, offset, name_len, "tensor name").decode()
        except UnicodeDecodeError:
            msg = "tensor name is not valid UTF-8"
            raise FormatError(msg) from None
        offset += name_len
        (rank,) = struct.unpack("<I", _take(buf, offset, 4, "tensor rank"))
        offset += 4
        shape = struct.unpack(f"<{rank}I", _take(buf, offset, 4 * rank, "tensor shape"))
        offset += 4 * rank
        size = int(np.prod(shape, dtype=np.int64)) * 8
        payload = _take(buf, offset, size, f"tensor {name!r}")
        offset += size
        if name in params:
            msg = f"duplicate tensor {name!r}"
            raise FormatError(msg)
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    if offset != len(buf):
        msg = f"{path}: {len(buf) - offset} trailing bytes"
        raise FormatError(msg)
    return params
