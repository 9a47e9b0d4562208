"""Image arrays, seeded random streams and PPM file IO.

Images are plain ``numpy`` arrays of shape ``(height, width, channels)`` with
float values in ``[0, 1]`` and 1 or 3 channels.

Random numbers come from :class:`SeededRng`, a counter-based SplitMix64
generator. The 64-bit integer stream is fully specified here (no dependency on
the numpy bit generators), so a given ``(seed, tags)`` pair yields the same
integers on every platform.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

__all__ = [
    "PpmError",
    "SeededRng",
    "as_image",
    "clamp01",
    "read_ppm",
    "write_ppm",
]

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 2.0 * np.pi


def _splitmix(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64, which is what SplitMix64 needs
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _tag_to_u64(tag) -> int:
    if isinstance(tag, (int, np.integer)) and not isinstance(tag, bool):
        payload = b"i" + int(tag).to_bytes(16, "little", signed=True)
    else:
        payload = b"s" + str(tag).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


class SeededRng:
    """Counter-based SplitMix64 stream.

    Output ``i`` (0-based) of a stream with key ``k`` is
    ``splitmix64_mix(k + (i + 1) * 0x9E3779B97F4A7C15)``, i.e. exactly the
    classic SplitMix64 sequence started from state ``k``. Floats in ``[0, 1)``
    use the top 53 bits. Normals use the Box-Muller cosine branch
    ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, consuming two integers per value.

    ``derive(*tags)`` returns an independent child stream keyed by
    ``mix(key xor H(tag))`` where ``H`` is the first 8 bytes (little endian) of
    SHA-256 over the tag encoding. Children do not depend on how much of the
    parent stream has been consumed.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.key = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"SeededRng(key={self.key:#018x}, counter={self.counter})"

    def derive(self, *tags) -> "SeededRng":
        key = self.key
        for tag in tags:
            z = np.array([key ^ _tag_to_u64(tag)], dtype=np.uint64)
            key = int(_splitmix(z + _GAMMA)[0])
        return SeededRng(key)

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return _splitmix(np.uint64(self.key) + idx * _GAMMA)

    def random(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, lo: float = 0.0, hi: float = 1.0, size=None):
        if lo > hi:
            raise ValueError(f"uniform: lo={lo} > hi={hi}")
        u = self.random(size)
        return lo + (hi - lo) * u

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        if std < 0:
            raise ValueError(f"normal: std={std} < 0")
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n)
        z = np.sqrt(-2.0 * np.log1p(-u[:n])) * np.cos(_TWO_PI * u[n:])
        out = mean + std * z
        if std == 0:
            out = np.full(n, float(mean))
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, lo: int, hi: int, size=None):
        """Integers uniform on the closed range ``[lo, hi]``."""
        if lo > hi:
            raise ValueError(f"integers: lo={lo} > hi={hi}")
        span = hi - lo + 1
        u = self.random(size)
        k = np.minimum(np.floor(u * span), span - 1).astype(np.int64) + lo
        return int(k) if size is None else k

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")


def as_image(image) -> np.ndarray:
    """Validate shape and channel count; 2-D input gains a channel axis."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"empty image of shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def clamp01(image) -> np.ndarray:
    return np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)


class PpmError(ValueError):
    """Malformed or truncated PPM data; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def write_ppm(image, path) -> None:
    """Write a binary P6 file with maxval 255. Grayscale is replicated to RGB."""
    img = as_image(image)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    h, w, _ = img.shape
    payload = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload.tobytes())


def _header_tokens(data: bytes, count: int) -> tuple[list[int | bytes], int]:
    tokens: list = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise PpmError("truncated header", pos)
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tok = data[start:pos]
        if not tokens:
            tokens.append(tok)
        else:
            if not tok.isdigit():
                raise PpmError(f"expected integer in header, got {tok!r}", start)
            tokens.append(int(tok))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise PpmError("missing whitespace after header", pos)
    return tokens, pos + 1


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 (or P5 grayscale) file into a float image in ``[0, 1]``."""
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    magic, w, h, maxval = tokens
    if magic not in (b"P6", b"P5"):
        raise PpmError(f"unsupported magic {magic!r}", 0)
    if w < 1 or h < 1:
        raise PpmError(f"invalid dimensions {w}x{h}", 0)
    if not 0 < maxval < 65536:
        raise PpmError(f"invalid maxval {maxval}", 0)
    channels = 3 if magic == b"P6" else 1
    itemsize = 1 if maxval < 256 else 2
    need = w * h * channels * itemsize
    if len(data) - offset < need:
        raise PpmError(
            f"truncated payload: need {need} bytes, have {len(data) - offset}",
            len(data),
        )
    dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
    raw = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=offset)
    return raw.reshape(h, w, channels).astype(np.float64) / maxval
