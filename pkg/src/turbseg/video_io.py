"""Frame, flow-file, and mask I/O.

Flow files use the common dense-flow binary layout: a float32 magic
number 202021.25, width and height as int32, then row-major interleaved
(u, v) float32 pairs. Everything is little-endian and round-trips
bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    DimensionMismatchError,
    FlowFormatError,
    InputError,
    TurbsegError,
)

FLOW_MAGIC = 202021.25
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".ppm"}

# ITU-R BT.601 luma weights, fixed for deterministic grayscale conversion
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class FrameSequence:
    """A loaded video clip: (T, H, W, C) float32 intensities in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 4 or f.shape[3] not in (1, 3):
            raise InputError(f"expected (T, H, W, C) with C in {{1, 3}}, got shape {f.shape}")
        if f.shape[0] < 3:
            raise InputError(f"need at least 3 frames, got {f.shape[0]}")
        if not np.isfinite(f).all():
            raise InputError("frame intensities must be finite")
        if f.min() < 0.0 or f.max() > 1.0:
            raise InputError("frame intensities must lie in [0, 1]")
        self.frames = f

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]

    def gray(self, t: int) -> np.ndarray:
        """Frame t as a single-channel float32 grid."""
        return to_grayscale(self.frames[t])


@dataclass
class FlowField:
    """Dense displacement field from source_frame toward target_frame."""

    u: np.ndarray
    v: np.ndarray
    source_frame: int = 0
    target_frame: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise DimensionMismatchError(
                f"u and v must be equal-shape 2-D grids, got {self.u.shape} vs {self.v.shape}"
            )
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise InputError("flow values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def scaled(self, c: float) -> "FlowField":
        return FlowField(self.u * c, self.v * c, self.source_frame, self.target_frame)


@dataclass
class MaskImage:
    """Per-frame, per-object mask; binary {0,1} or soft [0,1]."""

    values: np.ndarray
    mode: str = "binary"
    object_id: int = 1
    frame_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise InputError(f"mask must be 2-D, got shape {v.shape}")
        if self.mode not in ("binary", "soft"):
            raise InputError(f"unknown mask mode {self.mode!r}")
        if self.object_id < 1:
            raise InputError("object_id must be >= 1")
        if self.mode == "binary":
            uniq = np.unique(v)
            if not np.isin(uniq, (0, 1)).all():
                raise InputError("binary mask may contain only {0, 1}")
            v = v.astype(np.uint8)
        else:
            v = v.astype(np.float32)
            if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
                raise InputError("soft mask values must be finite and in [0, 1]")
        self.values = v

    @property
    def area(self) -> int:
        if self.mode == "binary":
            return int(self.values.sum())
        return int((self.values >= 0.5).sum())

    def binarized(self, threshold: float = 0.5) -> "MaskImage":
        if self.mode == "binary":
            return self
        return MaskImage(
            (self.values >= threshold).astype(np.uint8),
            "binary",
            self.object_id,
            self.frame_index,
        )

    def centroid(self) -> tuple[float, float] | None:
        """Mean (x, y) of foreground pixels, or None for an empty mask."""
        fg = self.values >= 0.5 if self.mode == "soft" else self.values > 0
        ys, xs = np.nonzero(fg)
        if xs.size == 0:
            return None
        return float(xs.mean()), float(ys.mean())


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """Collapse an (H, W, C) frame to (H, W) with fixed luma weights."""
    if frame.ndim == 2:
        return frame.astype(np.float32)
    if frame.shape[2] == 1:
        return frame[:, :, 0].astype(np.float32)
    r, g, b = LUMA_WEIGHTS
    out = r * frame[:, :, 0] + g * frame[:, :, 1] + b * frame[:, :, 2]
    return out.astype(np.float32)


def _read_image(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InputError(f"cannot read image {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float32) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float32) / 65535.0
    else:
        img = np.clip(raw.astype(np.float32), 0.0, 1.0)
    if img.ndim == 2:
        img = img[:, :, None]
    elif img.shape[2] == 4:
        img = img[:, :, :3]
    if img.shape[2] == 3:
        img = img[:, :, ::-1]  # BGR -> RGB
    return np.ascontiguousarray(img)


def load_frames(directory_path, resize_to: tuple[int, int] | None = None) -> FrameSequence:
    """Load every image in a directory, sorted by filename.

    resize_to is (width, height); bilinear resampling is used and
    intensities stay in [0, 1].
    """
    directory = Path(directory_path)
    if not directory.is_dir():
        raise InputError(f"frame directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if len(files) < 3:
        raise InputError(f"need at least 3 frames in {directory}, found {len(files)}")

    frames = []
    shape = None
    for p in files:
        img = _read_image(p)
        if resize_to is not None:
            w, h = resize_to
            if (img.shape[1], img.shape[0]) != (w, h):
                img = cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR)
                if img.ndim == 2:
                    img = img[:, :, None]
            img = np.clip(img, 0.0, 1.0)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DimensionMismatchError(
                f"{p.name} has shape {img.shape[:2]}, expected {shape[:2]}; "
                "pass a working resolution to resize"
            )
        frames.append(img)
    return FrameSequence(np.stack(frames))


def read_flow_file(path) -> FlowField:
    """Decode a dense-flow binary file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read flow file {path}: {exc}") from exc
    if len(data) < 12:
        raise FlowFormatError(f"{path}: truncated header ({len(data)} bytes)")
    (magic,) = struct.unpack("<f", data[:4])
    if magic != np.float32(FLOW_MAGIC):
        raise FlowFormatError(f"{path}: bad magic {magic!r}")
    w, h = struct.unpack("<ii", data[4:12])
    if w <= 0 or h <= 0:
        raise FlowFormatError(f"{path}: invalid dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise FlowFormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    uv = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowField(uv[:, :, 0].copy(), uv[:, :, 1].copy())


def write_flow_file(flow: FlowField, path) -> None:
    """Encode a FlowField; read_flow_file(path) round-trips bit-exactly."""
    h, w = flow.shape
    uv = np.empty((h, w, 2), dtype="<f4")
    uv[:, :, 0] = flow.u
    uv[:, :, 1] = flow.v
    payload = struct.pack("<fii", FLOW_MAGIC, w, h) + uv.tobytes()
    path = Path(path)
    try:
        path.write_bytes(payload)
    except OSError as exc:
        raise TurbsegError(f"cannot write flow file {path}: {exc}") from exc


def write_mask_image(mask: MaskImage, path) -> None:
    """Save a mask as an 8-bit single-channel image.

    Binary masks map foreground to 255; soft masks are scaled by 255 and
    rounded half-up.
    """
    if mask.mode == "binary":
        img = (mask.values * np.uint8(255)).astype(np.uint8)
    else:
        img = np.floor(mask.values.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    if not cv2.imwrite(str(path), img):
        raise TurbsegError(f"cannot write mask image {path}")


def read_mask_image(path, mode: str = "binary", object_id: int = 1, frame_index: int = 0) -> MaskImage:
    """Load an 8-bit mask written by write_mask_image."""
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise InputError(f"cannot read mask image {path}")
    if mode == "binary":
        values = (raw >= 128).astype(np.uint8)
    else:
        values = raw.astype(np.float32) / 255.0
    return MaskImage(values, mode, object_id, frame_index)


def write_gray_image(values: np.ndarray, path, normalize: bool = True) -> None:
    """Diagnostic export of a nonnegative grid as an 8-bit grayscale image."""
    v = np.asarray(values, dtype=np.float64)
    if normalize:
        top = v.max()
        if top > 0:
            v = v / top
    img = np.floor(np.clip(v, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if not cv2.imwrite(str(Path(path)), img):
        raise TurbsegError(f"cannot write image {path}")
