"""Pinhole two-view geometry and depth-consistency ground-truth matches.

Pixel coordinates are (u, v) = (column, row) with pixel centres on integers.
Extrinsics map world to camera: ``x_cam = R @ x_world + t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, ContractError, InvalidDepthError, ValidationError

__all__ = [
    "CameraIntrinsics",
    "CameraExtrinsics",
    "Camera",
    "DepthMap",
    "GroundTruthMatches",
    "unproject",
    "project",
    "generate_ground_truth",
    "grid_shape",
]

DEFAULT_DEPTH_TOL = 0.02
MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraExtrinsics:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def check(self, tol: float = 1e-6) -> None:
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        det = np.linalg.det(self.R)
        if err > tol or abs(det - 1.0) > tol:
            raise ValidationError(f"R is not a rotation (|R^T R - I|max={err:.3g}, det={det:.6f})")

    @classmethod
    def identity(cls) -> "CameraExtrinsics":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Camera:
    intr: CameraIntrinsics
    extr: CameraExtrinsics


@dataclass
class DepthMap:
    """Row-major depth values ``[height, width]``; entries <= 0 are invalid."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.width * self.height:
            raise ContractError(f"depth map {self.width}x{self.height} given {values.size} values")
        self.values = values.reshape(self.height, self.width)


@dataclass
class GroundTruthMatches:
    """Coarse-cell correspondences between image A and image B.

    ``pixelsA`` holds the sampled pixel in A and ``pixelsB`` the exact
    projected (sub-pixel) location in B for each pair, in the same order.
    """

    pairs: np.ndarray
    gridA: tuple[int, int]
    gridB: tuple[int, int]
    pixelsA: np.ndarray = field(repr=False)
    pixelsB: np.ndarray = field(repr=False)

    @property
    def dense(self) -> np.ndarray:
        na, nb = self.gridA[0] * self.gridA[1], self.gridB[0] * self.gridB[1]
        g = np.zeros((na, nb))
        if len(self.pairs):
            g[self.pairs[:, 0], self.pairs[:, 1]] = 1.0
        return g

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pairs}

    def __len__(self) -> int:
        return len(self.pairs)


def grid_shape(height: int, width: int, step: int) -> tuple[int, int]:
    return -(-height // step), -(-width // step)


def unproject(pixel, depth: float, intr: CameraIntrinsics, extr: CameraExtrinsics) -> np.ndarray:
    """World point seen at ``pixel`` with camera-frame depth ``depth``."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = pixel
    cam = np.array([(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth])
    return extr.R.T @ (cam - extr.t)


def project(point, intr: CameraIntrinsics, extr: CameraExtrinsics) -> tuple[tuple[float, float], float]:
    """Pixel and camera-frame depth of a world point."""
    q = extr.R @ np.asarray(point, dtype=np.float64) + extr.t
    if q[2] <= MIN_DEPTH:
        raise BehindCameraError(f"point {tuple(point)} lies behind the camera (z={q[2]:.3g})")
    return (intr.fx * q[0] / q[2] + intr.cx, intr.fy * q[1] / q[2] + intr.cy), float(q[2])


def generate_ground_truth(
    depthA: DepthMap,
    depthB: DepthMap,
    camA: Camera,
    camB: Camera,
    grid_step: int = 16,
    depth_tol: float = DEFAULT_DEPTH_TOL,
) -> GroundTruthMatches:
    """Depth-consistent coarse matches from image A into image B.

    Every cell of A is sampled at its centre pixel ``(step*j + step//2,
    step*i + step//2)``, unprojected with A's depth and projected into B.  The
    pair is kept when the projection lands inside B, B's depth at the nearest
    pixel is valid, and the relative depth disagreement is within
    ``depth_tol``.  The target cell is the one containing the projection.
    """
    if grid_step < 1:
        raise ContractError(f"grid_step must be >= 1, got {grid_step}")
    if depth_tol < 0:
        raise ContractError(f"depth_tol must be non-negative, got {depth_tol}")
    ha, wa = depthA.height, depthA.width
    hb, wb = depthB.height, depthB.width
    gA, gB = grid_shape(ha, wa, grid_step), grid_shape(hb, wb, grid_step)

    ii, jj = np.meshgrid(np.arange(gA[0]), np.arange(gA[1]), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    v = np.minimum(ii * grid_step + grid_step // 2, ha - 1)
    u = np.minimum(jj * grid_step + grid_step // 2, wa - 1)
    cellA = ii * gA[1] + jj
    d = depthA.values[v, u]
    ok = d > 0
    cellA, u, v, d = cellA[ok], u[ok].astype(np.float64), v[ok].astype(np.float64), d[ok]

    ia, ea = camA.intr, camA.extr
    x = (u - ia.cx) * d / ia.fx - ea.t[0]
    y = (v - ia.cy) * d / ia.fy - ea.t[1]
    z = d - ea.t[2]
    R = ea.R
    wx = R[0, 0] * x + R[1, 0] * y + R[2, 0] * z
    wy = R[0, 1] * x + R[1, 1] * y + R[2, 1] * z
    wz = R[0, 2] * x + R[1, 2] * y + R[2, 2] * z

    ib, eb = camB.intr, camB.extr
    R, t = eb.R, eb.t
    qx = R[0, 0] * wx + R[0, 1] * wy + R[0, 2] * wz + t[0]
    qy = R[1, 0] * wx + R[1, 1] * wy + R[1, 2] * wz + t[1]
    qz = R[2, 0] * wx + R[2, 1] * wy + R[2, 2] * wz + t[2]
    front = qz > MIN_DEPTH
    safe_z = np.where(front, qz, 1.0)
    ub = ib.fx * qx / safe_z + ib.cx
    vb = ib.fy * qy / safe_z + ib.cy
    inside = front & (ub >= 0) & (ub < wb) & (vb >= 0) & (vb < hb)

    pu = np.minimum(np.floor(np.where(inside, ub, 0) + 0.5), wb - 1).astype(np.intp)
    pv = np.minimum(np.floor(np.where(inside, vb, 0) + 0.5), hb - 1).astype(np.intp)
    db = depthB.values[pv, pu]
    valid = inside & (db > 0)
    consistent = np.zeros_like(valid)
    consistent[valid] = np.abs(qz[valid] - db[valid]) / db[valid] <= depth_tol

    cellB = np.floor(vb / grid_step).astype(np.intp) * gB[1] + np.floor(ub / grid_step).astype(np.intp)
    keep = np.nonzero(consistent)[0]
    pairs = np.stack([cellA[keep], cellB[keep]], axis=1).astype(np.intp).reshape(-1, 2)
    return GroundTruthMatches(
        pairs=pairs,
        gridA=gA,
        gridB=gB,
        pixelsA=np.stack([u[keep], v[keep]], axis=1).reshape(-1, 2),
        pixelsB=np.stack([ub[keep], vb[keep]], axis=1).reshape(-1, 2),
    )
