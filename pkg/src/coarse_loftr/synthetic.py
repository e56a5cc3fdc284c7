"""Procedural stand-in for a multi-view stereo dataset.

Each scene is one textured plane (fronto-parallel or slanted) observed by
three pinhole cameras with small relative motion.  Images are ray-cast, so
depth maps are exact up to float32 storage, and every view pair overlaps.
"""
from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import save_camera, save_depth, save_image
from .errors import ConfigError, DatasetError
from .geometry import Camera, CameraExtrinsics, CameraIntrinsics, DepthMap

__all__ = ["PlaneScene", "generate_synthetic_dataset", "make_scene", "plane_depth", "render_view", "rotation"]

VIEWS_PER_SCENE = 3


def rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix Rz @ Ry @ Rx from angles in radians."""
    cx, sx, cy, sy, cz, sz = np.cos(rx), np.sin(rx), np.cos(ry), np.sin(ry), np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


@dataclass
class PlaneScene:
    """World plane ``normal . X = offset`` carrying a blob-and-wave texture."""

    normal: np.ndarray
    offset: float
    basis: np.ndarray  # 2 x 3, orthonormal in-plane axes
    blobs: np.ndarray  # k x 4: a, b, sigma, amplitude
    waves: np.ndarray  # m x 4: ka, kb, phase, amplitude
    cameras: list[Camera]

    def texture(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        val = np.zeros_like(a)
        for ca, cb, sig, amp in self.blobs:
            val += amp * np.exp(-((a - ca) ** 2 + (b - cb) ** 2) / (2 * sig * sig))
        for ka, kb, ph, amp in self.waves:
            val += amp * np.sin(ka * a + kb * b + ph)
        return 1.0 / (1.0 + np.exp(-2.0 * val))


def _rays(intr: CameraIntrinsics, h: int, w: int) -> np.ndarray:
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)


def plane_depth(scene: PlaneScene, cam: Camera, h: int, w: int) -> np.ndarray:
    """Camera-frame z of the plane along every pixel ray (analytic)."""
    n_cam = cam.extr.R @ scene.normal
    d_cam = scene.offset + n_cam @ cam.extr.t
    return d_cam / (_rays(cam.intr, h, w) @ n_cam)


def render_view(scene: PlaneScene, cam: Camera, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    depth = plane_depth(scene, cam, h, w)
    pts_cam = _rays(cam.intr, h, w) * depth[..., None]
    pts_world = (pts_cam - cam.extr.t) @ cam.extr.R
    a = pts_world @ scene.basis[0]
    b = pts_world @ scene.basis[1]
    return scene.texture(a, b), depth


def make_scene(rng: np.random.Generator, h: int, w: int, slanted: bool) -> PlaneScene:
    f = float(w)
    intr = CameraIntrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0)
    dist = rng.uniform(4.0, 6.0)
    if slanted:
        tilt = rotation(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0)
    else:
        tilt = np.eye(3)
    normal = tilt @ np.array([0.0, 0.0, 1.0])
    offset = dist * normal[2]
    basis = tilt[:, :2].T.copy()

    extent = dist * max(h, w) / f
    k = int(rng.integers(40, 70))
    blobs = np.column_stack(
        [
            rng.uniform(-extent, extent, k),
            rng.uniform(-extent, extent, k),
            rng.uniform(0.05, 0.25, k) * extent,
            rng.choice([-1.0, 1.0], k) * rng.uniform(0.6, 1.6, k),
        ]
    )
    m = 3
    freq = rng.uniform(2.0, 6.0, m) / extent
    ang = rng.uniform(0, np.pi, m)
    waves = np.column_stack([freq * np.cos(ang), freq * np.sin(ang), rng.uniform(0, 2 * np.pi, m), rng.uniform(0.1, 0.3, m)])

    cameras = [Camera(intr, CameraExtrinsics.identity())]
    for _ in range(VIEWS_PER_SCENE - 1):
        centre = np.array([rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), rng.uniform(-0.08, 0.08)]) * dist
        R = rotation(*rng.uniform(-0.06, 0.06, 3))
        cameras.append(Camera(intr, CameraExtrinsics(R, -R @ centre)))
    return PlaneScene(normal, offset, basis, blobs, waves, cameras)


def generate_synthetic_dataset(root, n_scenes: int, image_size: tuple[int, int], seed: int, force: bool = False) -> list[PlaneScene]:
    """Write ``n_scenes`` scenes of ``image_size = (h, w)`` under ``root``.

    Even-numbered scenes use fronto-parallel planes, odd ones slanted planes.
    Output is a pure function of the arguments.
    """
    h, w = image_size
    if h % 16 or w % 16 or h < 16 or w < 16:
        raise ConfigError(f"image size {h}x{w} must be positive multiples of 16")
    if n_scenes < 0:
        raise ConfigError(f"scene count must be non-negative, got {n_scenes}")
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise DatasetError(f"output directory {root} is not empty (use force to overwrite)")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)

    scenes = []
    for s, child in enumerate(np.random.SeedSequence(seed).spawn(n_scenes)):
        scene = make_scene(np.random.default_rng(child), h, w, slanted=bool(s % 2))
        base = root / f"scene{s:03d}"
        for sub in ("images", "depths", "cams"):
            (base / sub).mkdir(parents=True)
        ids = [f"{v:08d}" for v in range(VIEWS_PER_SCENE)]
        for view, cam in zip(ids, scene.cameras):
            image, depth = render_view(scene, cam, h, w)
            save_image(base / "images" / f"{view}.pgm", image)
            save_depth(base / "depths" / f"{view}.pfm", DepthMap(w, h, depth))
            save_camera(base / "cams" / f"{view}.txt", cam)
        pairs = [(ids[i], ids[j]) for i in range(len(ids)) for j in range(i + 1, len(ids))]
        (base / "pairs.txt").write_text("".join(f"{a} {b}\n" for a, b in pairs))
        scenes.append(scene)
    return scenes
