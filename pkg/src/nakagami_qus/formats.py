"""
Raster artifact formats.

NKRF (little-endian):

    4s   magic b"NKRF"
    u32  format version
    u32  height
    u32  width
    u32  flags, bit 0 set when a mask follows the payload
    f8[] height * width values, row-major
    u8[] optional mask, packed bits row-major, zero padding bits

PGM follows Netpbm: P2 (ASCII) or P5 (binary, 16-bit samples big-endian when
maxval > 255). Comments are accepted in the header.
"""

import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import ArtifactIOError, FormatError
from .models import EnvelopeImage, GroundTruthMap, ParamMap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

NKRF_MAGIC = b"NKRF"
NKRF_VERSION = 1
NKRF_HEADER = struct.Struct("<4sIIII")
FLAG_MASK = 0x1
PGM_MAX_MAXVAL = 65535
# Header integers beyond this many digits cannot describe a real image
PGM_MAX_DIGITS = 10

_WHITESPACE = b" \t\n\r\x0b\x0c"


def atomic_write(path: PathLike, payload: bytes) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise ArtifactIOError(f"Cannot write {path}: {e}", {"path": str(path)})


def read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Cannot read {path}: {e}", {"path": str(path)})


# ---------------------------------------------------------------- NKRF


@dataclass
class Raster:
    """A float64 grid with an optional boolean mask of the same shape."""
    data: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or 0 in self.data.shape:
            raise FormatError(f"Raster must be a non-empty 2-D grid, got shape {self.data.shape}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape:
                raise FormatError("Raster mask shape does not match data shape")


def encode_raster(raster: Raster) -> bytes:
    h, w = raster.data.shape
    flags = FLAG_MASK if raster.mask is not None else 0
    parts = [NKRF_HEADER.pack(NKRF_MAGIC, NKRF_VERSION, h, w, flags), raster.data.astype("<f8").tobytes()]
    if raster.mask is not None:
        parts.append(np.packbits(raster.mask.ravel()).tobytes())
    return b"".join(parts)


def decode_raster(payload: bytes) -> Raster:
    if len(payload) < NKRF_HEADER.size:
        raise FormatError("NKRF file is truncated (header)", {"size": len(payload)})
    magic, version, h, w, flags = NKRF_HEADER.unpack_from(payload, 0)
    if magic != NKRF_MAGIC:
        raise FormatError(f"Not an NKRF raster (magic {magic!r})")
    if version != NKRF_VERSION:
        raise FormatError(
            f"Unsupported NKRF version {version} (expected {NKRF_VERSION})",
            {"found": version, "expected": NKRF_VERSION},
        )
    if h == 0 or w == 0:
        raise FormatError(f"NKRF raster has a zero dimension ({h}x{w})")
    if flags & ~FLAG_MASK:
        raise FormatError(f"NKRF flags 0x{flags:x} contain unknown bits")

    count = h * w
    mask_bytes = (count + 7) // 8 if flags & FLAG_MASK else 0
    expected = NKRF_HEADER.size + 8 * count + mask_bytes
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "followed by trailing bytes"
        raise FormatError(f"NKRF file is {kind}", {"size": len(payload), "expected": expected})

    data = np.frombuffer(payload, dtype="<f8", count=count, offset=NKRF_HEADER.size)
    data = data.astype(np.float64).reshape(h, w)
    mask = None
    if mask_bytes:
        packed = np.frombuffer(payload, dtype=np.uint8, count=mask_bytes, offset=NKRF_HEADER.size + 8 * count)
        bits = np.unpackbits(packed)
        if np.any(bits[count:]):
            raise FormatError("NKRF mask has nonzero padding bits")
        mask = bits[:count].astype(bool).reshape(h, w)
    return Raster(data=data, mask=mask)


def write_raster(path: PathLike, raster: Raster) -> None:
    atomic_write(path, encode_raster(raster))
    logger.debug(f"Wrote {raster.data.shape[0]}x{raster.data.shape[1]} raster to {path}")


def read_raster(path: PathLike) -> Raster:
    return decode_raster(read_bytes(path))


def raster_from_param_map(param_map: ParamMap) -> Raster:
    return Raster(data=param_map.values, mask=param_map.valid)


def param_map_from_raster(raster: Raster) -> ParamMap:
    valid = raster.mask if raster.mask is not None else np.isfinite(raster.data)
    return ParamMap(values=raster.data, valid=valid)


def raster_from_envelope(image: EnvelopeImage) -> Raster:
    return Raster(data=image.data, mask=image.roi)


def envelope_from_raster(raster: Raster) -> EnvelopeImage:
    return EnvelopeImage(data=raster.data, roi=raster.mask)


def raster_from_truth(truth: GroundTruthMap) -> Raster:
    return Raster(data=truth.values, mask=truth.roi)


def truth_from_raster(raster: Raster) -> GroundTruthMap:
    return GroundTruthMap.from_values(raster.data, roi=raster.mask)


# ---------------------------------------------------------------- PGM


@dataclass
class PgmImage:
    pixels: np.ndarray
    maxval: int = 255

    @property
    def intensities(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / self.maxval

    @classmethod
    def from_intensities(cls, intensities: np.ndarray, maxval: int = 255) -> "PgmImage":
        """Quantize intensities in [0, 1] to integer samples."""
        values = np.clip(np.asarray(intensities, dtype=np.float64), 0.0, 1.0)
        return cls(pixels=np.rint(values * maxval).astype(np.uint16), maxval=maxval)


def _skip_space_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        byte = data[pos : pos + 1]
        if byte == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif byte in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    pos = _skip_space_and_comments(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def _read_int(data: bytes, pos: int, name: str) -> Tuple[int, int]:
    token, pos = _read_token(data, pos)
    if not token:
        raise FormatError(f"PGM header is truncated before {name}")
    if not token.isdigit():
        raise FormatError(f"PGM {name} is not a decimal integer: {token[:16]!r}")
    digits = len(token.lstrip(b"0"))
    if digits > PGM_MAX_DIGITS:
        raise FormatError(f"PGM {name} has {digits} digits, more than {PGM_MAX_DIGITS}")
    return int(token), pos


def decode_pgm(payload: bytes) -> PgmImage:
    magic = payload[:2]
    if magic == b"P6" or magic == b"P3":
        raise FormatError(f"Color PPM ({magic.decode()}) is not supported; convert to grayscale PGM")
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"Not a PGM file (magic {magic!r})")

    pos = 2
    if pos < len(payload) and payload[pos : pos + 1] not in _WHITESPACE and payload[pos : pos + 1] != b"#":
        raise FormatError("PGM magic must be followed by whitespace")
    width, pos = _read_int(payload, pos, "width")
    height, pos = _read_int(payload, pos, "height")
    maxval, pos = _read_int(payload, pos, "maxval")
    if width == 0 or height == 0:
        raise FormatError(f"PGM has a zero dimension ({width}x{height})")
    if not 1 <= maxval <= PGM_MAX_MAXVAL:
        raise FormatError(f"PGM maxval {maxval} outside [1, {PGM_MAX_MAXVAL}]")
    count = width * height

    if magic == b"P5":
        if pos >= len(payload) or payload[pos : pos + 1] not in _WHITESPACE:
            raise FormatError("PGM header must end with a single whitespace byte")
        pos += 1
        sample = 1 if maxval < 256 else 2
        expected = pos + sample * count
        if len(payload) != expected:
            kind = "truncated" if len(payload) < expected else "followed by trailing bytes"
            raise FormatError(f"PGM raster is {kind}", {"size": len(payload), "expected": expected})
        dtype = np.uint8 if sample == 1 else ">u2"
        pixels = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).astype(np.uint16)
    else:
        values: List[int] = []
        while True:
            token, pos = _read_token(payload, pos)
            if not token:
                break
            if not token.isdigit():
                raise FormatError(f"PGM sample is not a decimal integer: {token[:16]!r}")
            if len(values) == count:
                raise FormatError("PGM raster is followed by trailing data")
            if len(token.lstrip(b"0")) > 5:
                raise FormatError("PGM sample exceeds 16 bits")
            values.append(int(token))
        if len(values) != count:
            raise FormatError(f"PGM raster is truncated ({len(values)} of {count} samples)")
        if max(values) > PGM_MAX_MAXVAL:
            raise FormatError("PGM sample exceeds 16 bits")
        pixels = np.array(values, dtype=np.uint16)

    if int(pixels.max()) > maxval:
        raise FormatError(f"PGM sample {int(pixels.max())} exceeds maxval {maxval}")
    return PgmImage(pixels=pixels.reshape(height, width), maxval=maxval)


def encode_pgm(image: PgmImage, binary: bool = True) -> bytes:
    pixels = np.asarray(image.pixels)
    if pixels.ndim != 2 or 0 in pixels.shape:
        raise FormatError(f"PGM image must be a non-empty 2-D grid, got shape {pixels.shape}")
    if not 1 <= image.maxval <= PGM_MAX_MAXVAL:
        raise FormatError(f"PGM maxval {image.maxval} outside [1, {PGM_MAX_MAXVAL}]")
    if pixels.min() < 0 or pixels.max() > image.maxval:
        raise FormatError(f"PGM samples must lie in [0, {image.maxval}]")

    h, w = pixels.shape
    if binary:
        header = f"P5\n{w} {h}\n{image.maxval}\n".encode("ascii")
        dtype = np.uint8 if image.maxval < 256 else ">u2"
        return header + pixels.astype(dtype).tobytes()
    lines = [f"P2\n{w} {h}\n{image.maxval}"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in pixels)
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(path: PathLike, image: PgmImage, binary: bool = True) -> None:
    atomic_write(path, encode_pgm(image, binary))


def read_pgm(path: PathLike) -> PgmImage:
    return decode_pgm(read_bytes(path))
