"""Deterministic synthetic street scenes with noisy semantic labels.

Classes: 0 ground, 1 pole, 2 wall, 3 vehicle. The ego drives along +x; every
frame samples surface points within sensor range and returns them in the
sensor frame together with true and corrupted labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GROUND, POLE, WALL, VEHICLE = range(4)
CLASS_NAMES = ("ground", "pole", "wall", "vehicle")


@dataclass
class SynthConfig:
    num_frames: int = 20
    points_per_frame: int = 4000
    flip_prob: float = 0.3
    speed: float = 1.0  # meters per frame along x
    sensor_range: float = 10.0
    road_half_width: float = 7.1
    ground_z: float = 0.05
    wall_height: float = 3.0
    pole_height: float = 3.0
    pole_radius: float = 0.1
    pole_spacing: float = 3.0
    vehicle_spacing: float = 7.0
    position_noise: float = 0.01
    label_mode: str = "hard"
    soft_confidence: float = 0.7
    margin: float = 12.0
    min_ground_range: float = 1.0
    # relative return density per class (thin or dark surfaces return fewer points)
    class_density: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0 <= self.flip_prob < 1:
            raise ValueError(f"flip probability must lie in [0, 1), got {self.flip_prob}")
        if self.label_mode not in ("hard", "soft"):
            raise ValueError("label_mode must be hard or soft")


@dataclass
class SynthFrame:
    positions: np.ndarray  # sensor frame (N, 3)
    gt: np.ndarray  # (N,) true classes
    noisy: np.ndarray  # (N,) class ids, or (N, 4) distributions in soft mode
    pose: np.ndarray  # (4, 4) sensor -> world


class Scene:
    """Static primitives: one ground plane, two walls, poles and box vehicles."""

    def __init__(self, rng, cfg: SynthConfig):
        self.cfg = cfg
        self.x0 = -cfg.margin
        self.x1 = cfg.speed * max(cfg.num_frames - 1, 0) + cfg.margin
        w = cfg.road_half_width
        self.poles = []
        for side in (-1, 1):
            x = self.x0 + rng.uniform(0, cfg.pole_spacing)
            while x < self.x1:
                # some poles hug the wall, others stand at the kerb
                y = side * (w - 0.45 if rng.random() < 0.5 else w - 2.5)
                self.poles.append((x, y))
                x += cfg.pole_spacing * rng.uniform(0.7, 1.3)
        self.vehicles = []
        for side in (-1, 1):
            x = self.x0 + rng.uniform(0, cfg.vehicle_spacing)
            while x < self.x1 - 4:
                self.vehicles.append((x, side * 3.8))
                x += cfg.vehicle_spacing * rng.uniform(0.8, 1.4)

    def _sample_ground(self, rng, n, cx):
        # ring-like returns: uniform in range, so density falls off as 1 / range
        w = self.cfg.road_half_width
        out = np.empty((0, 2))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            rad = rng.uniform(self.cfg.min_ground_range, self.cfg.sensor_range, m)
            th = rng.uniform(0, 2 * np.pi, m)
            xy = np.stack([cx + rad * np.cos(th), rad * np.sin(th)], 1)
            out = np.concatenate([out, xy[np.abs(xy[:, 1]) <= w]])
        out = out[:n]
        return np.column_stack([out, np.full(n, self.cfg.ground_z)])

    def _sample_walls(self, rng, n, cx):
        r = self.cfg.sensor_range
        x = rng.uniform(cx - r, cx + r, n)
        y = np.where(rng.random(n) < 0.5, -1.0, 1.0) * self.cfg.road_half_width
        z = rng.uniform(self.cfg.ground_z, self.cfg.wall_height, n)
        return np.stack([x, y, z], 1)

    def _sample_poles(self, rng, n, cx):
        near = [p for p in self.poles if abs(p[0] - cx) < self.cfg.sensor_range]
        if not near or n == 0:
            return np.empty((0, 3))
        which = rng.integers(0, len(near), n)
        centers = np.asarray(near)[which]
        theta = rng.uniform(0, 2 * np.pi, n)
        rad = self.cfg.pole_radius
        z = rng.uniform(self.cfg.ground_z, self.cfg.pole_height, n)
        return np.stack([centers[:, 0] + rad * np.cos(theta), centers[:, 1] + rad * np.sin(theta), z], 1)

    def _sample_vehicles(self, rng, n, cx):
        near = [v for v in self.vehicles if abs(v[0] + 2 - cx) < self.cfg.sensor_range]
        if not near or n == 0:
            return np.empty((0, 3))
        L, W, H, clear = 4.0, 1.8, 1.5, 0.3
        which = rng.integers(0, len(near), n)
        base = np.asarray(near)[which]
        # faces: top, +y, -y, +x, -x weighted by area
        areas = np.array([L * W, L * H, L * H, W * H, W * H])
        face = rng.choice(5, n, p=areas / areas.sum())
        u, v = rng.random(n), rng.random(n)
        x = base[:, 0] + u * L
        y = base[:, 1] - W / 2 + v * W
        z = clear + v * H
        pts = np.empty((n, 3))
        top = face == 0
        pts[top] = np.stack([x[top], y[top], np.full(top.sum(), clear + H)], 1)
        for f, yy in ((1, W / 2), (2, -W / 2)):
            m = face == f
            pts[m] = np.stack([x[m], base[m, 1] + yy, z[m]], 1)
        for f, xx in ((3, L), (4, 0.0)):
            m = face == f
            pts[m] = np.stack([base[m, 0] + xx, base[m, 1] - W / 2 + u[m] * W, z[m]], 1)
        return pts

    def sample(self, rng, n, cx):
        """``n`` labeled world points around ego x-position ``cx``, area weighted."""
        cfg = self.cfg
        r = cfg.sensor_range
        span = 2 * r
        n_pole = sum(abs(p[0] - cx) < r for p in self.poles)
        n_veh = sum(abs(v[0] + 2 - cx) < r for v in self.vehicles)
        areas = np.array([
            span * 2 * cfg.road_half_width,
            n_pole * 2 * np.pi * cfg.pole_radius * (cfg.pole_height - cfg.ground_z),
            2 * span * (cfg.wall_height - cfg.ground_z),
            n_veh * (4.0 * 1.8 + 2 * 4.0 * 1.5 + 2 * 1.8 * 1.5),
        ])
        areas = areas * np.asarray(cfg.class_density)
        counts = rng.multinomial(n, areas / areas.sum())
        parts = [
            self._sample_ground(rng, counts[GROUND], cx),
            self._sample_poles(rng, counts[POLE], cx),
            self._sample_walls(rng, counts[WALL], cx),
            self._sample_vehicles(rng, counts[VEHICLE], cx),
        ]
        labels = np.concatenate([np.full(len(p), c) for c, p in enumerate(parts)]).astype(np.int64)
        pts = np.concatenate(parts)
        pts = pts + rng.normal(0, cfg.position_noise, pts.shape)
        keep = np.linalg.norm(pts[:, :2] - [cx, 0.0], axis=1) <= r
        return pts[keep], labels[keep]


def flip_labels(rng, labels, num_classes, p):
    """Replace each label, with probability ``p``, by a uniformly chosen wrong class."""
    flip = rng.random(len(labels)) < p
    shift = rng.integers(1, num_classes, len(labels))
    return np.where(flip, (labels + shift) % num_classes, labels)


def soften(labels, num_classes, confidence):
    out = np.full((len(labels), num_classes), (1 - confidence) / (num_classes - 1))
    out[np.arange(len(labels)), labels] = confidence
    return out


def synth_scene(seed, cfg: SynthConfig | None = None):
    """Frames of one synthetic drive; a pure function of ``(seed, cfg)``."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    scene = Scene(rng, cfg)
    frames = []
    for t in range(cfg.num_frames):
        cx = cfg.speed * t
        pose = np.eye(4)
        pose[0, 3] = cx
        world, gt = scene.sample(rng, cfg.points_per_frame, cx)
        noisy = flip_labels(rng, gt, len(CLASS_NAMES), cfg.flip_prob)
        if cfg.label_mode == "soft":
            noisy = soften(noisy, len(CLASS_NAMES), cfg.soft_confidence)
        frames.append(SynthFrame(world - pose[:3, 3], gt, noisy, pose))
    return frames
