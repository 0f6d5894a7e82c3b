"""Gramian angular summation field encoding of normalized snapshots.

Each normalized snapshot becomes a polar-angle sequence, an m by m matrix
of cos(theta_i + theta_j), and finally an 8-bit grayscale image replicated
into three channels for the feature network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .series import NormalizedSnapshot

_GRAM_MAGIC = b"DTSAGRM1"
_IMAGE_MAGIC = b"DTSAIMG1"


@dataclass(frozen=True)
class PolarSequence:
    """Angles arccos(value) in [0, pi] and radii j/m in (0, 1]."""

    angles: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.angles.setflags(write=False)
        self.radii.setflags(write=False)

    def __len__(self) -> int:
        return len(self.angles)


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric m by m matrix of pairwise angle-sum cosines in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ScenarioImage:
    """H x W x 3 uint8 image; channels identical for GASF-produced images."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be H x W x 3")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")
        self.pixels.setflags(write=False)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 3


def to_polar(ns: NormalizedSnapshot) -> PolarSequence:
    """Map normalized values to polar angles; radii are (j+1)/m, 1-based."""
    vals = ns.array()
    angles = np.arccos(np.clip(vals, -1.0, 1.0))
    m = len(vals)
    radii = np.arange(1, m + 1, dtype=np.float64) / m
    return PolarSequence(angles, radii)


def gasf_closed_form(a: float, b: float):
    """Angle-sum cosine without trig round trip: a*b - sqrt(1-a^2)*sqrt(1-b^2).

    Accepts scalars or arrays with values in [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = a * b - np.sqrt(1.0 - a * a) * np.sqrt(1.0 - b * b)
    return out if out.ndim else float(out)


def gasf_matrix(ps: PolarSequence) -> GramMatrix:
    """Pairwise cos(theta_i + theta_j) for the whole sequence.

    The angle-sum table is symmetric by construction (a + b is commutative
    in IEEE arithmetic), so GM[i][j] == GM[j][i] holds exactly.
    """
    sums = np.add.outer(ps.angles, ps.angles)
    gm = np.cos(sums)
    np.clip(gm, -1.0, 1.0, out=gm)
    return GramMatrix(gm)


def encode_image(gm: GramMatrix) -> ScenarioImage:
    """Quantize matrix entries to 8-bit pixels, replicated into 3 channels.

    pixel = round-half-up((v + 1) / 2 * 255), so -1 -> 0, 0 -> 128, 1 -> 255
    and the mapping is monotone.
    """
    scaled = (gm.values + 1.0) * 0.5 * 255.0
    pix = np.floor(scaled + 0.5)
    pix = np.clip(pix, 0, 255).astype(np.uint8)
    return ScenarioImage(np.repeat(pix[:, :, None], 3, axis=2))


def resize_bilinear(img: ScenarioImage, target_h: int, target_w: int) -> ScenarioImage:
    """Corner-aligned bilinear resize; identity when sizes already match."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target dimensions must be >= 1")
    h, w = img.height, img.width
    if (h, w) == (target_h, target_w):
        return img
    src = img.pixels.astype(np.float64)

    ys = np.linspace(0.0, h - 1.0, target_h) if target_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, target_w) if target_w > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    # lerp form keeps constant regions exact
    top = src[y0][:, x0] + (src[y0][:, x1] - src[y0][:, x0]) * fx
    bot = src[y1][:, x0] + (src[y1][:, x1] - src[y1][:, x0]) * fx
    out = top + (bot - top) * fy
    pix = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return ScenarioImage(pix)


def encode_series_images(normalized, image_size: int | None = None) -> list:
    """Encode a list of NormalizedSnapshot into ScenarioImage objects.

    When image_size is given the raw m x m image is resized to
    image_size x image_size.
    """
    images = []
    for ns in normalized:
        img = encode_image(gasf_matrix(to_polar(ns)))
        if image_size is not None:
            img = resize_bilinear(img, image_size, image_size)
        images.append(img)
    return images


def export_png(img: ScenarioImage, path) -> None:
    """Write the image as an 8-bit RGB PNG (inspection aid)."""
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(img.pixels), mode="RGB").save(path, format="PNG")


def save_gram_cache(grams, path) -> None:
    """Binary cache: magic, count, m, then row-major float64 matrices."""
    mats = [g.values if isinstance(g, GramMatrix) else np.asarray(g) for g in grams]
    if not mats:
        raise ValueError("nothing to cache")
    m = mats[0].shape[0]
    with open(path, "wb") as fh:
        fh.write(_GRAM_MAGIC)
        fh.write(struct.pack("<II", len(mats), m))
        for mat in mats:
            if mat.shape != (m, m):
                raise ValueError("all matrices must share the same size")
            fh.write(np.ascontiguousarray(mat, dtype=np.float64).tobytes())


def load_gram_cache(path) -> list:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _GRAM_MAGIC:
            raise ParseError(f"{path}: not a gram cache file")
        count, m = struct.unpack("<II", fh.read(8))
        out = []
        for _ in range(count):
            buf = fh.read(8 * m * m)
            if len(buf) != 8 * m * m:
                raise ParseError(f"{path}: truncated gram cache")
            out.append(GramMatrix(np.frombuffer(buf, dtype=np.float64).reshape(m, m).copy()))
    return out


def save_image_cache(images, path) -> None:
    """Binary cache: magic, count, H, W, then uint8 H x W x 3 frames."""
    if not images:
        raise ValueError("nothing to cache")
    h, w = images[0].height, images[0].width
    with open(path, "wb") as fh:
        fh.write(_IMAGE_MAGIC)
        fh.write(struct.pack("<III", len(images), h, w))
        for img in images:
            if (img.height, img.width) != (h, w):
                raise ValueError("all images must share the same size")
            fh.write(np.ascontiguousarray(img.pixels).tobytes())


def load_image_cache(path) -> list:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _IMAGE_MAGIC:
            raise ParseError(f"{path}: not an image cache file")
        count, h, w = struct.unpack("<III", fh.read(12))
        frame = h * w * 3
        out = []
        for _ in range(count):
            buf = fh.read(frame)
            if len(buf) != frame:
                raise ParseError(f"{path}: truncated image cache")
            out.append(ScenarioImage(np.frombuffer(buf, dtype=np.uint8).reshape(h, w, 3).copy()))
    return out
