"""Core value types: pinhole cameras, rigid poses, RGBD frames, trajectories.

Conventions (fixed for the whole package):
  * camera axes: x right, y down, z forward (the camera looks along +z);
  * pixel centers sit at integer coordinates (u, v) with u in [0, W-1],
    v in [0, H-1];
  * pixel (u, v) at depth z backprojects to
    ((u - cx) / fx * z, (v - cy) / fy * z, z) in the camera frame;
  * poses store world_from_camera, i.e. columns of the rotation block are
    the camera axes expressed in world coordinates.

All types are immutable values after construction and safe to share across
threads. Depth is stored linearly in meters; disparity (1/meters) is a
derived view used by the diffusion-facing code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepthError

_ROT_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("raster dimensions must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the raster")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def scaled(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same field of view at another raster size."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class Pose:
    """Rigid world_from_camera transform (4x4, rotation orthonormal, det +1)."""

    world_from_camera: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.world_from_camera, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("pose must be a 4x4 matrix")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) >= _ROT_ORTHO_TOL:
            raise ValueError("rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation block must have det +1")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-12:
            raise ValueError("last row must be (0, 0, 0, 1)")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "world_from_camera", m)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(4))

    @property
    def rotation(self) -> np.ndarray:
        return self.world_from_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_from_camera[:3, 3]

    def inverse(self) -> "Pose":
        r = self.rotation
        t = self.translation
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return Pose(inv)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.world_from_camera @ other.world_from_camera)

    def camera_from_world(self) -> np.ndarray:
        return self.inverse().world_from_camera


def look_at_vector(pose: Pose) -> np.ndarray:
    """World-frame direction of the camera +z axis (unit length).

    Invariant under pure translation of the pose.
    """
    v = pose.rotation[:, 2].copy()
    return v / np.linalg.norm(v)


def pose_look_at(eye, target, up=(0.0, -1.0, 0.0)) -> Pose:
    """Pose whose camera sits at ``eye`` looking toward ``target``.

    ``up`` is the world direction the image's upward direction should
    roughly align with (camera y points down, so camera -y aligns with it).
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = target - eye
    n = np.linalg.norm(z)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z = z / n
    y_hint = -np.asarray(up, dtype=np.float64)
    x = np.cross(y_hint, z)
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise ValueError("up direction is parallel to the viewing direction")
    x = x / n
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, 0] = x
    m[:3, 1] = y
    m[:3, 2] = z
    m[:3, 3] = eye
    return Pose(m)


@dataclass(frozen=True)
class ValidityMask:
    """Boolean raster marking pixels covered by some operation."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2:
            raise ValueError("mask must be 2-D")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class RgbdFrame:
    """Registered color + depth raster with camera pose and intrinsics.

    rgb is H x W x 3 in linear [0, 1]; depth is H x W in meters, finite and
    positive everywhere (invalid regions are not representable here; carry a
    separate ValidityMask where needed).
    """

    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    index: int = 0

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        h, w = self.intrinsics.height, self.intrinsics.width
        if rgb.shape != (h, w, 3):
            raise ValueError(f"rgb shape {rgb.shape} != intrinsics raster ({h}, {w}, 3)")
        if depth.shape != (h, w):
            raise ValueError(f"depth shape {depth.shape} != intrinsics raster ({h}, {w})")
        if not np.isfinite(depth).all() or (depth <= 0).any():
            raise NonPositiveDepthError("depth must be finite and > 0 everywhere")
        if rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ValueError("rgb values must lie in [0, 1]")
        if self.index < 0:
            raise ValueError("frame index must be >= 0")
        rgb = rgb.copy()
        depth = depth.copy()
        rgb.setflags(write=False)
        depth.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera path; frame indices are contiguous from 0."""

    views: tuple
    names: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise ValueError("trajectory must be non-empty")
        for intr, pose in views:
            if not isinstance(intr, Intrinsics) or not isinstance(pose, Pose):
                raise TypeError("views must be (Intrinsics, Pose) pairs")
        names = tuple(self.names) if self.names else tuple(f"frame_{i:04d}" for i in range(len(views)))
        if len(names) != len(views):
            raise ValueError("names must match views")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.views)

    def __getitem__(self, i: int):
        return self.views[i]


@dataclass(frozen=True)
class DisparityRaster:
    """Per-pixel 1/depth in 1/meters."""

    disparity: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.disparity, dtype=np.float64)
        if not np.isfinite(d).all() or (d <= 0).any():
            raise NonPositiveDepthError("disparity must be finite and > 0")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "disparity", d)


def depth_to_disparity(depth: np.ndarray) -> DisparityRaster:
    """Elementwise reciprocal; raises NonPositiveDepthError on depth <= 0."""
    depth = np.asarray(depth, dtype=np.float64)
    if (depth <= 0).any() or not np.isfinite(depth).all():
        raise NonPositiveDepthError("all depths must be finite and > 0")
    return DisparityRaster(1.0 / depth)


def disparity_to_depth(disp: DisparityRaster | np.ndarray) -> np.ndarray:
    d = disp.disparity if isinstance(disp, DisparityRaster) else np.asarray(disp, dtype=np.float64)
    if (d <= 0).any() or not np.isfinite(d).all():
        raise NonPositiveDepthError("all disparities must be finite and > 0")
    return 1.0 / d
