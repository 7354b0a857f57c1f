"""Image ingestion and export.

CIFAR-10 binary records are 1 label byte followed by 3072 pixel bytes,
plane-major (1024 R, 1024 G, 1024 B), row-major within a plane. Pixels
are mapped to ``byte / 255`` and stored interleaved as (32, 32, 3).
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .codec import ImageSample
from .errors import FormatError, InvalidInputError
from .numerics import as_generator

CIFAR_SHAPE = (32, 32, 3)
RECORD_BYTES = 1 + 32 * 32 * 3


@dataclass(frozen=True)
class Cifar10Record:
    label: int
    pixels: bytes

    def to_image(self) -> ImageSample:
        planes = np.frombuffer(self.pixels, dtype=np.uint8).reshape(3, 32, 32)
        return ImageSample(planes.transpose(1, 2, 0) / 255.0)


def read_cifar_records(path) -> list[Cifar10Record]:
    blob = Path(path).read_bytes()
    if len(blob) % RECORD_BYTES:
        whole = len(blob) - len(blob) % RECORD_BYTES
        raise FormatError(f"truncated CIFAR-10 batch: {len(blob)} bytes is not a multiple of {RECORD_BYTES}",
                          offset=whole)
    records = []
    for off in range(0, len(blob), RECORD_BYTES):
        label = blob[off]
        if label > 9:
            raise FormatError(f"label byte {label} outside 0..9", offset=off)
        records.append(Cifar10Record(label, blob[off + 1: off + RECORD_BYTES]))
    return records


def read_cifar_batch(path) -> list[ImageSample]:
    return [r.to_image() for r in read_cifar_records(path)]


def to_bytes(s: ImageSample) -> np.ndarray:
    """Pixels quantised to 0..255, rounding half up."""
    return np.floor(np.clip(s.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_cifar_batch(images, path, labels=None) -> None:
    out = bytearray()
    for i, s in enumerate(images):
        if s.pixels.shape != CIFAR_SHAPE:
            raise InvalidInputError(f"CIFAR records hold 32x32x3 images, got {s.pixels.shape}")
        out.append(0 if labels is None else int(labels[i]))
        out += to_bytes(s).transpose(2, 0, 1).tobytes()
    Path(path).write_bytes(bytes(out))


@dataclass(frozen=True)
class SyntheticSpec:
    """Low-pass filtered noise images.

    ``complexity`` is the retained fraction of DCT frequencies along each
    axis. If ``complexity_high`` is set, each image draws its own cutoff
    uniformly from [complexity, complexity_high].
    """

    size: tuple = CIFAR_SHAPE
    complexity: float = 0.5
    complexity_high: float | None = None

    def __post_init__(self):
        hi = self.complexity if self.complexity_high is None else self.complexity_high
        if not (0 < self.complexity <= 1 and 0 < hi <= 1 and self.complexity <= hi):
            raise InvalidInputError("cutoff fractions must satisfy 0 < complexity <= complexity_high <= 1")


def lowpass_noise(g: np.random.Generator, size, cutoff: float) -> np.ndarray:
    h, w, c = size
    noise = g.standard_normal((h, w, c))
    coeffs = dctn(noise, type=2, axes=(0, 1), norm="ortho")
    keep_u = max(1, int(np.ceil(cutoff * h)))
    keep_v = max(1, int(np.ceil(cutoff * w)))
    coeffs[keep_u:, :, :] = 0.0
    coeffs[:, keep_v:, :] = 0.0
    px = idctn(coeffs, type=2, axes=(0, 1), norm="ortho")
    lo, hi = px.min(), px.max()
    if hi - lo < 1e-12:
        return np.full(size, 0.5)
    return (px - lo) / (hi - lo)


def synth_images(spec: SyntheticSpec, n: int, rng) -> list[ImageSample]:
    g = as_generator(rng)
    images = []
    for _ in range(int(n)):
        cutoff = spec.complexity if spec.complexity_high is None else g.uniform(spec.complexity, spec.complexity_high)
        images.append(ImageSample(lowpass_noise(g, tuple(spec.size), cutoff)))
    return images


def write_ppm(s: ImageSample, path) -> None:
    data = to_bytes(s)
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    elif data.shape[2] != 3:
        raise InvalidInputError("PPM output needs 1 or 3 channels")
    header = f"P6\n{s.width} {s.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_ppm(path) -> ImageSample:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("incomplete PPM header", offset=pos)
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise FormatError("not a binary PPM (P6)", offset=0)
    w, h, maxval = (int(f) for f in fields[1:])
    raw = np.frombuffer(blob, dtype=np.uint8, offset=pos + 1)
    if raw.size != w * h * 3:
        raise FormatError(f"PPM payload has {raw.size} bytes, expected {w * h * 3}", offset=pos + 1)
    return ImageSample(raw.reshape(h, w, 3) / float(maxval))
