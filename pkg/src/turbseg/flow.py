"""Bidirectional flow sets and interval-averaged flow stabilization.

For a frame t the flow set holds displacement fields toward every
neighbor t+i with 0 < |i| <= max_offset. Stabilization averages the
per-step-normalized fields over a temporal interval: the field toward
offset i is divided by i (signed), so a constant-velocity scene yields
the same per-frame velocity from every offset, and turbulence-induced
jitter averages out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError, InputError
from .video_io import FlowField, FrameSequence, read_flow_file

FLOW_FILE_PATTERN = "flow_{t:04d}_{i:+d}.flo"


@dataclass
class FlowSet:
    """All flows leaving one frame; offsets use 1-based frame indexing."""

    center_frame: int
    flows: dict[int, FlowField]
    max_offset: int
    missing: list[int] = field(default_factory=list)

    def __post_init__(self):
        shapes = {f.shape for f in self.flows.values()}
        if len(shapes) > 1:
            raise InputError(f"flow fields of frame {self.center_frame} disagree in shape: {shapes}")
        for i in self.flows:
            if i == 0 or abs(i) > self.max_offset:
                raise InputError(f"offset {i} outside [-{self.max_offset}, {self.max_offset}] \\ {{0}}")

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.flows.values())).shape

    def available(self) -> list[int]:
        return sorted(self.flows)


@dataclass
class StabilizedFlow:
    """Interval-averaged flow in pixels/frame for one center frame."""

    field: FlowField
    interval: tuple[int, ...]
    center_frame: int
    requested_interval: tuple[int, ...] | None = None

    @property
    def shrunk(self) -> bool:
        return self.requested_interval is not None and tuple(self.requested_interval) != tuple(self.interval)


def symmetric_intervals(max_offset: int) -> list[tuple[int, ...]]:
    """Nested symmetric intervals {-j..-1, 1..j} for j = 1..max_offset.

    In a symmetric interval the per-step weights 1/i sum to zero, so the
    center frame's own jitter drops out of the average entirely; one-sided
    intervals keep it with weight mean(1/i) and leak it into every
    stabilized flow. This makes symmetric the default scheme.
    """
    return [
        tuple(range(-j, 0)) + tuple(range(1, j + 1))
        for j in range(1, max_offset + 1)
    ]


def cumulative_intervals(max_offset: int) -> list[tuple[int, ...]]:
    """One-sided cumulative {1..j} and {-1..-j} for j = 1..max_offset."""
    fwd = [tuple(range(1, j + 1)) for j in range(1, max_offset + 1)]
    bwd = [tuple(range(-1, -j - 1, -1)) for j in range(1, max_offset + 1)]
    return fwd + bwd


def make_intervals(scheme: str, max_offset: int) -> list[tuple[int, ...]]:
    if scheme == "symmetric":
        return symmetric_intervals(max_offset)
    if scheme == "cumulative":
        return cumulative_intervals(max_offset)
    raise ConfigurationError(f"unknown interval scheme {scheme!r}")


def default_intervals(max_offset: int) -> list[tuple[int, ...]]:
    return symmetric_intervals(max_offset)


def build_flow_set(
    frames: FrameSequence,
    t: int,
    max_offset: int,
    flow_source: str = "builtin",
    flow_dir=None,
    levels: int = 3,
    patch: int = 8,
) -> FlowSet:
    """Collect flows F_{t -> t+i} for every in-range offset i.

    t is 1-based. flow_source is "dir" (read flow files named
    flow_{t:04d}_{i:+d}.flo from flow_dir) or "builtin" (pyramidal
    block-matching estimator). Offsets leaving the sequence are recorded
    as missing, never fabricated.
    """
    if not 1 <= t <= frames.count:
        raise InputError(f"frame index {t} outside [1, {frames.count}]")
    if max_offset < 1:
        raise ConfigurationError("max_offset must be >= 1")

    flows: dict[int, FlowField] = {}
    missing: list[int] = []
    gray_cache: dict[int, np.ndarray] = {}

    def gray(idx):
        if idx not in gray_cache:
            gray_cache[idx] = frames.gray(idx - 1)
        return gray_cache[idx]

    for i in range(-max_offset, max_offset + 1):
        if i == 0:
            continue
        target = t + i
        if not 1 <= target <= frames.count:
            missing.append(i)
            continue
        if flow_source == "dir":
            path = Path(flow_dir) / FLOW_FILE_PATTERN.format(t=t, i=i)
            if not path.is_file():
                raise InputError(f"missing flow file for frame {t}, offset {i:+d}: {path}")
            fl = read_flow_file(path)
            if fl.shape != (frames.height, frames.width):
                raise InputError(
                    f"{path}: flow shape {fl.shape} does not match frames "
                    f"({frames.height}, {frames.width})"
                )
            fl.source_frame, fl.target_frame = t, target
            flows[i] = fl
        elif flow_source == "builtin":
            fl = estimate_flow_pyramidal(gray(t), gray(target), levels=levels, patch=patch)
            fl.source_frame, fl.target_frame = t, target
            flows[i] = fl
        else:
            raise ConfigurationError(f"unknown flow source {flow_source!r}")
    return FlowSet(t, flows, max_offset, missing)


def stabilize_flows(flow_set: FlowSet, intervals: list[tuple[int, ...]]) -> list[StabilizedFlow]:
    """Average per-step-normalized flows over each temporal interval.

    Intervals are shrunk to the offsets actually present in the set
    (dropped entirely if nothing remains); the requested interval is kept
    on the output for inspection.
    """
    available = set(flow_set.flows)
    out: list[StabilizedFlow] = []
    for requested in intervals:
        requested = tuple(requested)
        if 0 in requested:
            raise ConfigurationError("interval offsets must exclude 0")
        used = tuple(i for i in requested if i in available)
        if not used:
            continue
        h, w = flow_set.shape
        acc_u = np.zeros((h, w), dtype=np.float64)
        acc_v = np.zeros((h, w), dtype=np.float64)
        for i in used:
            fl = flow_set.flows[i]
            acc_u += fl.u.astype(np.float64) / i
            acc_v += fl.v.astype(np.float64) / i
        acc_u /= len(used)
        acc_v /= len(used)
        out.append(
            StabilizedFlow(
                field=FlowField(acc_u.astype(np.float32), acc_v.astype(np.float32),
                                flow_set.center_frame, flow_set.center_frame),
                interval=used,
                center_frame=flow_set.center_frame,
                requested_interval=requested,
            )
        )
    if not out:
        raise DegenerateGeometryError(
            f"frame {flow_set.center_frame}: no interval has any available flow offset"
        )
    return out


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    img = img[:h2, :w2]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _block_cost(src: np.ndarray, dst_pad: np.ndarray, by: int, bx: int, patch: int,
                dy: int, dx: int, pad: int) -> float:
    block = src[by:by + patch, bx:bx + patch]
    ref = dst_pad[by + dy + pad:by + dy + pad + patch, bx + dx + pad:bx + dx + pad + patch]
    diff = block - ref
    return float(np.dot(diff.ravel(), diff.ravel()))


def estimate_flow_pyramidal(
    src: np.ndarray,
    dst: np.ndarray,
    levels: int = 3,
    patch: int = 8,
    search: int = 4,
) -> FlowField:
    """Coarse-to-fine block-matching flow with parabolic subpixel refinement.

    Deterministic: ties between equal-cost displacements are broken toward
    the smaller displacement, so constant image pairs give zero flow.
    """
    src = np.asarray(src, dtype=np.float32)
    dst = np.asarray(dst, dtype=np.float32)
    if src.shape != dst.shape:
        raise InputError(f"frame shapes differ: {src.shape} vs {dst.shape}")
    if levels < 1:
        raise ConfigurationError("levels must be >= 1")
    h, w = src.shape
    if min(h, w) // (2 ** (levels - 1)) < patch:
        raise ConfigurationError(
            f"frames of size {h}x{w} are smaller than the {patch}px patch at the coarsest of {levels} levels"
        )

    pyr_src = [src]
    pyr_dst = [dst]
    for _ in range(levels - 1):
        pyr_src.append(_downsample2(pyr_src[-1]))
        pyr_dst.append(_downsample2(pyr_dst[-1]))

    flow_u = flow_v = None
    for level in range(levels - 1, -1, -1):
        s, d = pyr_src[level], pyr_dst[level]
        lh, lw = s.shape
        nby, nbx = lh // patch, lw // patch
        if flow_u is None:
            init_u = np.zeros((nby, nbx), dtype=np.float32)
            init_v = np.zeros((nby, nbx), dtype=np.float32)
        else:
            init_u = 2.0 * _resize_grid(flow_u, (nby, nbx))
            init_v = 2.0 * _resize_grid(flow_v, (nby, nbx))

        pad = search + int(np.ceil(max(np.abs(init_u).max(), np.abs(init_v).max(), 0))) + 1
        d_pad = np.pad(d, pad, mode="edge")

        flow_u = np.zeros((nby, nbx), dtype=np.float32)
        flow_v = np.zeros((nby, nbx), dtype=np.float32)
        offsets = [(dy, dx) for dy in range(-search, search + 1) for dx in range(-search, search + 1)]
        # smaller displacements first so strict "<" keeps the zero tie-break
        offsets.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
        for by in range(nby):
            for bx in range(nbx):
                base_dy = int(round(float(init_v[by, bx])))
                base_dx = int(round(float(init_u[by, bx])))
                costs = {}
                best, best_cost = (base_dy, base_dx), None
                for dy, dx in offsets:
                    c = _block_cost(s, d_pad, by * patch, bx * patch, patch,
                                    base_dy + dy, base_dx + dx, pad)
                    costs[(dy, dx)] = c
                    if best_cost is None or c < best_cost:
                        best, best_cost = (dy, dx), c
                sub_y = _parabolic_offset(costs, best, axis=0, search=search)
                sub_x = _parabolic_offset(costs, best, axis=1, search=search)
                if best_cost is not None and best_cost < 1e-12:
                    sub_y = sub_x = 0.0
                flow_v[by, bx] = base_dy + best[0] + sub_y
                flow_u[by, bx] = base_dx + best[1] + sub_x

    u = _resize_grid(flow_u, (h, w))
    v = _resize_grid(flow_v, (h, w))
    return FlowField(u, v)


def _parabolic_offset(costs: dict, best: tuple[int, int], axis: int, search: int) -> float:
    lo = list(best)
    hi = list(best)
    lo[axis] -= 1
    hi[axis] += 1
    if abs(lo[axis]) > search or abs(hi[axis]) > search:
        return 0.0
    c0 = costs[best]
    cm = costs[tuple(lo)]
    cp = costs[tuple(hi)]
    denom = cm - 2.0 * c0 + cp
    if denom <= 1e-12:
        return 0.0
    off = 0.5 * (cm - cp) / denom
    return float(np.clip(off, -0.5, 0.5))


def _resize_grid(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a coarse grid treating entries as cell centers."""
    import cv2

    out = cv2.resize(grid.astype(np.float32), (shape[1], shape[0]), interpolation=cv2.INTER_LINEAR)
    return out
