"""Synthetic turbulence-degraded sequences with exact ground truth.

Scenes are built from layers: a smooth random background plus rigid movers,
shifted per frame by a global camera-shake translation and warped by a
smooth per-frame jitter field (Gaussian-filtered white noise rescaled to a
target RMS displacement). Because frames are rendered by inverting the
warp analytically, the emitted ground-truth flows and masks are exact, not
estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InputError
from .flow import FLOW_FILE_PATTERN, FlowSet
from .video_io import FlowField, FrameSequence, MaskImage, write_flow_file, write_mask_image


@dataclass
class Mover:
    shape: str  # "rect" or "disk"
    size: tuple[float, float]  # rect: (w, h); disk: (diameter, diameter)
    start: tuple[float, float]  # top-left (rect) / center (disk) at t=0
    velocity: tuple[float, float]  # pixels per frame
    intensity: float = 0.9


@dataclass
class SceneSpec:
    size: tuple[int, int]  # (W, H)
    frame_count: int
    movers: list[Mover] = field(default_factory=list)
    jitter_sigma: float = 0.0  # RMS displacement magnitude, pixels
    jitter_corr_len: float = 8.0
    camera_shake: list[tuple[float, float]] | None = None  # per-frame (dx, dy)
    blur_sigma: float = 0.0
    texture_scale: float = 5.0
    max_offset: int = 4
    rigid_flows: bool = False  # emit jitter-free ground-truth flow
    rng_seed: int = 0

    def __post_init__(self):
        if self.frame_count < 3:
            raise InputError("scenes need at least 3 frames")
        if self.jitter_sigma < 0:
            raise InputError("jitter_sigma must be >= 0")
        if self.camera_shake is None:
            self.camera_shake = [(0.0, 0.0)] * self.frame_count
        if len(self.camera_shake) != self.frame_count:
            raise InputError("camera_shake must list one (dx, dy) per frame")
        self._check_movers_in_frame()

    def _check_movers_in_frame(self):
        w, h = self.size
        for m in self.movers:
            for t in range(self.frame_count):
                sx, sy = self.camera_shake[t]
                x = m.start[0] + m.velocity[0] * t
                y = m.start[1] + m.velocity[1] * t
                if m.shape == "rect":
                    x0, y0 = x + sx, y + sy
                    x1, y1 = x0 + m.size[0], y0 + m.size[1]
                elif m.shape == "disk":
                    r = m.size[0] / 2.0
                    x0, y0 = x + sx - r, y + sy - r
                    x1, y1 = x + sx + r, y + sy + r
                else:
                    raise InputError(f"unknown mover shape {m.shape!r}")
                if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                    raise InputError(
                        f"mover exits the frame at t={t}: bbox ({x0:.1f},{y0:.1f})-({x1:.1f},{y1:.1f})"
                    )


def drift_shake(frame_count: int, dx: float, dy: float) -> list[tuple[float, float]]:
    """Linear camera drift: shake at frame t is t * (dx, dy)."""
    return [(dx * t, dy * t) for t in range(frame_count)]


def _bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample grid at float coords with edge clamping."""
    h, w = grid.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    return (
        grid[y0, x0] * (1 - fx) * (1 - fy)
        + grid[y0, x1] * fx * (1 - fy)
        + grid[y1, x0] * (1 - fx) * fy
        + grid[y1, x1] * fx * fy
    )


class _SceneModel:
    """Shared geometry for frame rendering and exact ground-truth export."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        w, h = spec.size
        shake_mag = max((abs(sx) + abs(sy) for sx, sy in spec.camera_shake), default=0.0)
        self.pad = int(np.ceil(8 + shake_mag + 4.0 * spec.jitter_sigma))

        ss = np.random.SeedSequence(spec.rng_seed)
        children = ss.spawn(spec.frame_count + 1)
        bg_rng = np.random.default_rng(children[0])
        ph, pw = h + 2 * self.pad, w + 2 * self.pad
        noise = bg_rng.standard_normal((ph, pw))
        tex = gaussian_filter(noise, spec.texture_scale, mode="reflect")
        std = tex.std()
        if std > 0:
            tex = tex / std
        self.background = np.clip(0.5 + 0.16 * tex, 0.05, 0.95)

        self.jitter = []  # per frame (jx, jy) on padded canvas, or None
        for t in range(spec.frame_count):
            if spec.jitter_sigma <= 0:
                self.jitter.append(None)
                continue
            rng = np.random.default_rng(children[t + 1])
            jx = gaussian_filter(rng.standard_normal((ph, pw)), spec.jitter_corr_len, mode="reflect")
            jy = gaussian_filter(rng.standard_normal((ph, pw)), spec.jitter_corr_len, mode="reflect")
            c = self.pad
            rms = np.sqrt(np.mean(jx[c:c + h, c:c + w] ** 2 + jy[c:c + h, c:c + w] ** 2))
            if rms > 0:
                jx *= spec.jitter_sigma / rms
                jy *= spec.jitter_sigma / rms
            self.jitter.append((jx, jy))

    def jitter_at(self, t: int, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Jitter displacement at scene coords (x, y) in frame t."""
        if self.jitter[t] is None:
            return np.zeros_like(x), np.zeros_like(y)
        jx, jy = self.jitter[t]
        cx = x + self.pad
        cy = y + self.pad
        return _bilinear(jx, cx, cy), _bilinear(jy, cx, cy)

    def invert_warp(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Scene coords visible at each pixel of frame t.

        Solves z + shake_t + jitter_t(z) = pixel by fixed-point iteration;
        jitter is small and smooth so a handful of sweeps converge.
        """
        w, h = self.spec.size
        gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        sx, sy = self.spec.camera_shake[t]
        zx = gx - sx
        zy = gy - sy
        if self.jitter[t] is None:
            return zx, zy
        for _ in range(25):
            jx, jy = self.jitter_at(t, zx, zy)
            nx = gx - sx - jx
            ny = gy - sy - jy
            delta = max(np.abs(nx - zx).max(), np.abs(ny - zy).max())
            zx, zy = nx, ny
            if delta < 1e-10:
                break
        return zx, zy

    def forward_warp(self, t: int, zx: np.ndarray, zy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel position in frame t of scene coords (zx, zy)."""
        sx, sy = self.spec.camera_shake[t]
        jx, jy = self.jitter_at(t, zx, zy)
        return zx + sx + jx, zy + sy + jy

    def mover_footprint(self, m: Mover, t: int, zx: np.ndarray, zy: np.ndarray) -> np.ndarray:
        x = m.start[0] + m.velocity[0] * t
        y = m.start[1] + m.velocity[1] * t
        if m.shape == "rect":
            return (zx >= x) & (zx < x + m.size[0]) & (zy >= y) & (zy < y + m.size[1])
        r = m.size[0] / 2.0
        return (zx - x) ** 2 + (zy - y) ** 2 <= r * r


def generate_sequence(spec: SceneSpec):
    """Render a scene and return (frames, gt_masks, gt_flows).

    gt_masks is a per-frame list of binary MaskImage, one per mover in
    spec order (object ids 1..len(movers)); gt_flows is a per-frame list
    of FlowSet with exact displacement toward every in-range offset.
    """
    model = _SceneModel(spec)
    w, h = spec.size
    T = spec.frame_count

    inv = [model.invert_warp(t) for t in range(T)]

    frames = np.empty((T, h, w, 1), dtype=np.float32)
    gt_masks: list[list[MaskImage]] = []
    for t in range(T):
        zx, zy = inv[t]
        img = _bilinear(model.background, zx + model.pad, zy + model.pad)
        masks_t = []
        for obj_id, m in enumerate(spec.movers, start=1):
            inside = model.mover_footprint(m, t, zx, zy)
            img = np.where(inside, m.intensity, img)
            masks_t.append(MaskImage(inside.astype(np.uint8), "binary", obj_id, t))
        if spec.blur_sigma > 0:
            img = gaussian_filter(img, spec.blur_sigma, mode="nearest")
        frames[t, :, :, 0] = np.clip(img, 0.0, 1.0)
        gt_masks.append(masks_t)

    gt_flows: list[FlowSet] = []
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    for t in range(T):
        if spec.rigid_flows:
            # flow of the undistorted geometry, for ablating the stabilizer
            sx, sy = spec.camera_shake[t]
            zx, zy = gx - sx, gy - sy
        else:
            zx, zy = inv[t]
        # per-pixel layer velocity: topmost mover wins, background is static
        vx = np.zeros((h, w))
        vy = np.zeros((h, w))
        for m in spec.movers:
            inside = model.mover_footprint(m, t, zx, zy)
            vx = np.where(inside, m.velocity[0], vx)
            vy = np.where(inside, m.velocity[1], vy)
        flows: dict[int, FlowField] = {}
        missing: list[int] = []
        for i in range(-spec.max_offset, spec.max_offset + 1):
            if i == 0:
                continue
            if not 0 <= t + i < T:
                missing.append(i)
                continue
            z2x = zx + vx * i
            z2y = zy + vy * i
            if spec.rigid_flows:
                sx2, sy2 = spec.camera_shake[t + i]
                tx, ty = z2x + sx2, z2y + sy2
            else:
                tx, ty = model.forward_warp(t + i, z2x, z2y)
            flows[i] = FlowField(
                (tx - gx).astype(np.float32), (ty - gy).astype(np.float32),
                source_frame=t + 1, target_frame=t + 1 + i,
            )
        gt_flows.append(FlowSet(t + 1, flows, spec.max_offset, missing))

    return FrameSequence(frames), gt_masks, gt_flows


def write_scene(spec: SceneSpec, out_dir) -> None:
    """Render a scene and write frames, masks, and flow files to disk."""
    out = Path(out_dir)
    frames_dir = out / "frames"
    masks_dir = out / "gt_masks"
    flows_dir = out / "gt_flows"
    for d in (frames_dir, masks_dir, flows_dir):
        d.mkdir(parents=True, exist_ok=True)

    seq, gt_masks, gt_flows = generate_sequence(spec)
    import cv2

    for t in range(seq.count):
        img = np.floor(seq.frames[t, :, :, 0].astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
        cv2.imwrite(str(frames_dir / f"frame_{t + 1:04d}.png"), img)
        for mask in gt_masks[t]:
            write_mask_image(mask, masks_dir / f"mask_{t + 1:04d}_{mask.object_id:02d}.png")
        for i, fl in gt_flows[t].flows.items():
            write_flow_file(fl, flows_dir / FLOW_FILE_PATTERN.format(t=t + 1, i=i))


def parse_scene_file(path) -> SceneSpec:
    """Read a SceneSpec from a flat key=value text file.

    Movers use comma lists: ``mover1 = rect,40,30,50,60,1.0,0.5,0.9``
    meaning shape, width, height, x, y, vx, vy, intensity (disk: width is
    the diameter). ``shake_drift = dx,dy`` adds linear camera drift.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"scene file not found: {path}")
    kv: dict[str, str] = {}
    movers: list[Mover] = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"scene file line is not key = value: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key.startswith("mover"):
            parts = [p.strip() for p in val.split(",")]
            if len(parts) != 8:
                raise InputError(f"{key}: expected 8 comma-separated fields, got {len(parts)}")
            shape = parts[0]
            sw, sh, x, y, vx, vy, inten = (float(p) for p in parts[1:])
            movers.append(Mover(shape, (sw, sh), (x, y), (vx, vy), inten))
        else:
            kv[key] = val

    def get_float(key, default):
        return float(kv[key]) if key in kv else default

    def get_int(key, default):
        return int(kv[key]) if key in kv else default

    width = get_int("width", 432)
    height = get_int("height", 240)
    frame_count = get_int("frames", 20)
    shake = None
    if "shake_drift" in kv:
        dx, dy = (float(p) for p in kv["shake_drift"].split(","))
        shake = drift_shake(frame_count, dx, dy)
    return SceneSpec(
        size=(width, height),
        frame_count=frame_count,
        movers=movers,
        jitter_sigma=get_float("jitter_sigma", 0.0),
        jitter_corr_len=get_float("jitter_corr_len", 8.0),
        camera_shake=shake,
        blur_sigma=get_float("blur_sigma", 0.0),
        texture_scale=get_float("texture_scale", 5.0),
        max_offset=get_int("max_offset", 4),
        rigid_flows=kv.get("rigid_flows", "false").lower() in ("1", "true", "yes"),
        rng_seed=get_int("rng_seed", 0),
    )
