"""Grayscale rasters, log-domain transforms and binary PGM I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_FLOOR = 1.0 / 255.0


class PgmError(ValueError):
    """Base class for PGM parse failures."""


class UnsupportedMagicError(PgmError):
    pass


class MalformedHeaderError(PgmError):
    pass


class TruncatedPayloadError(PgmError):
    pass


def _frozen(arr, name: str) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Intensities in [0, 1], stored as a (height, width) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _frozen(self.pixels, "pixels")
        if px.size == 0:
            raise ValueError("empty image")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_data(cls, width: int, height: int, data) -> GrayImage:
        data = np.asarray(data, dtype=np.float64)
        if data.size != width * height:
            raise ValueError(f"data length {data.size} != {width}x{height}")
        return cls(data.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view."""
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class LogImage:
    """Natural-log intensities; values may leave [ln floor, 0] once a bias is added."""

    values: np.ndarray
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, "values"))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def data(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True, eq=False)
class CoordGrid:
    x: np.ndarray
    y: np.ndarray

    @property
    def width(self) -> int:
        return self.x.shape[1]

    @property
    def height(self) -> int:
        return self.x.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape


def _check_floor(floor: float) -> None:
    if not 0.0 < floor < 1.0:
        raise ValueError(f"floor must lie in (0, 1), got {floor}")


def to_log(img: GrayImage, floor: float = DEFAULT_FLOOR) -> LogImage:
    _check_floor(floor)
    return LogImage(np.log(np.clip(img.pixels, floor, 1.0)), floor)


def from_log(logimg: LogImage | np.ndarray) -> GrayImage:
    v = logimg.values if isinstance(logimg, LogImage) else np.asarray(logimg, dtype=np.float64)
    return GrayImage(np.clip(np.exp(v), 0.0, 1.0))


def coord_grid(width: int, height: int) -> CoordGrid:
    """Pixel centres mapped onto [-1, 1]^2; column index drives x, row index drives y."""
    if width < 2 or height < 2:
        raise ValueError(f"coord_grid needs width, height >= 2, got {width}x{height}")
    xs = 2.0 * np.arange(width) / (width - 1) - 1.0
    ys = 2.0 * np.arange(height) / (height - 1) - 1.0
    x, y = np.meshgrid(xs, ys)
    x.setflags(write=False)
    y.setflags(write=False)
    return CoordGrid(x, y)


def quantize(img: GrayImage) -> np.ndarray:
    """8-bit levels with round-half-up."""
    return np.floor(img.pixels * 255.0 + 0.5).astype(np.uint8)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of header")
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> GrayImage:
    if len(buf) < 2:
        raise MalformedHeaderError("file too short for a PGM header")
    magic = buf[:2]
    if magic != b"P5":
        raise UnsupportedMagicError(f"unsupported magic {magic!r}; only binary P5 is read")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise MalformedHeaderError(f"non-integer header field {tok!r}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise MalformedHeaderError(f"unsupported maxval {maxval}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    depth = 1 if maxval == 255 else 2
    need = width * height * depth
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise TruncatedPayloadError(f"expected {need} payload bytes, got {len(payload)}")
    dtype = np.uint8 if depth == 1 else np.dtype(">u2")
    levels = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    return GrayImage((levels / maxval).reshape(height, width))


def load_pgm(path) -> GrayImage:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(img: GrayImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + quantize(img).tobytes()


def save_pgm(img: GrayImage, path) -> None:
    Path(path).write_bytes(encode_pgm(img))
