"""Backprojection, depth-to-mesh construction with edge clipping, normals.

The mesh is the vehicle for forward warping: every pixel of an RGBD frame
becomes a vertex, every 2x2 pixel quad becomes two triangles, and triangles
that look like rubber-sheeting (grazing to the source camera, or straddling
a depth discontinuity) are dropped before rasterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Intrinsics, Pose, RgbdFrame, look_at_vector

DEFAULT_CLIP_COS_THRESHOLD = 0.1
DEFAULT_DEPTH_JUMP_RATIO = 4.0


@dataclass(frozen=True)
class DepthMesh:
    """Triangle mesh lifted from an RGBD frame.

    vertices are world-frame points, one per source pixel (row-major), with
    per-vertex color channels and the source pixel coordinate they came
    from. Triangles index into the vertex array; normals are unit length,
    one per kept triangle.
    """

    vertices: np.ndarray       # (N, 3) float64, world frame
    colors: np.ndarray         # (N, C) float64
    pixel_coords: np.ndarray   # (N, 2) float64, source (u, v)
    triangles: np.ndarray      # (M, 3) int32
    normals: np.ndarray        # (M, 3) float64, unit
    source_look_at: np.ndarray # (3,) world-frame camera +z of the source view

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])


def camera_rays(intrinsics: Intrinsics) -> np.ndarray:
    """Unit-depth ray directions ((u-cx)/fx, (v-cy)/fy, 1) per pixel, H x W x 3."""
    u = np.arange(intrinsics.width, dtype=np.float64)
    v = np.arange(intrinsics.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    rays = np.empty((intrinsics.height, intrinsics.width, 3))
    rays[..., 0] = (uu - intrinsics.cx) / intrinsics.fx
    rays[..., 1] = (vv - intrinsics.cy) / intrinsics.fy
    rays[..., 2] = 1.0
    return rays


def backproject_camera(depth: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    """Per-pixel 3D points in the camera frame, H x W x 3."""
    return camera_rays(intrinsics) * np.asarray(depth, dtype=np.float64)[..., None]


def backproject(frame: RgbdFrame) -> tuple[np.ndarray, np.ndarray]:
    """World-frame point per pixel with its color.

    Returns (points, colors): points is H x W x 3 in world coordinates,
    colors is the frame's rgb. point = world_from_camera @ (ray(u,v) * depth).
    """
    pts_cam = backproject_camera(frame.depth, frame.intrinsics)
    r = frame.pose.rotation
    t = frame.pose.translation
    pts_world = pts_cam @ r.T + t
    return pts_world, np.asarray(frame.rgb, dtype=np.float64)


def project(points_world: np.ndarray, intrinsics: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Project world points into a camera; returns ((..., 2) pixel uv, (...,) depth).

    Depth is the camera-frame z; points behind the camera get depth <= 0 and
    undefined uv (caller must mask on depth).
    """
    pts = np.asarray(points_world, dtype=np.float64)
    cw = pose.camera_from_world()
    cam = pts @ cw[:3, :3].T + cw[:3, 3]
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * cam[..., 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1), z


def build_mesh(
    frame: RgbdFrame,
    clip_cos_threshold: float = DEFAULT_CLIP_COS_THRESHOLD,
    depth_jump_ratio: float | None = DEFAULT_DEPTH_JUMP_RATIO,
) -> DepthMesh:
    """Two triangles per pixel quad, clipped at grazing angles and depth jumps.

    A quad (u,v)..(u+1,v+1) splits into (u,v)-(u+1,v)-(u,v+1) and
    (u+1,v)-(u+1,v+1)-(u,v+1). A triangle is dropped when
    |cos(normal, source look-at)| < clip_cos_threshold, or when its
    max/min vertex depth exceeds depth_jump_ratio (pass None to disable
    the depth-jump test), or when its area is degenerate (< 1e-12 m^2).
    """
    if not (0.0 <= clip_cos_threshold < 1.0):
        raise ValueError("clip_cos_threshold must be in [0, 1)")
    if depth_jump_ratio is not None and depth_jump_ratio <= 1.0:
        raise ValueError("depth_jump_ratio must be > 1")

    h, w = frame.shape
    pts_world, colors = backproject(frame)
    vertices = pts_world.reshape(-1, 3)
    colors = colors.reshape(-1, colors.shape[-1])
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    pixel_coords = np.stack([uu, vv], axis=-1).reshape(-1, 2)

    if h < 2 or w < 2:
        empty = np.zeros((0, 3))
        return DepthMesh(
            vertices=vertices,
            colors=colors,
            pixel_coords=pixel_coords,
            triangles=np.zeros((0, 3), dtype=np.int32),
            normals=empty,
            source_look_at=look_at_vector(frame.pose),
        )

    idx = np.arange(h * w, dtype=np.int32).reshape(h, w)
    tl = idx[:-1, :-1].ravel()
    tr = idx[:-1, 1:].ravel()
    bl = idx[1:, :-1].ravel()
    br = idx[1:, 1:].ravel()
    # Interleave so quad k contributes triangles 2k and 2k+1; keeps the
    # z-buffer tie-break (lower triangle index) spatially coherent.
    tris = np.empty((2 * tl.size, 3), dtype=np.int32)
    tris[0::2] = np.stack([tl, tr, bl], axis=1)
    tris[1::2] = np.stack([tr, br, bl], axis=1)

    v0 = vertices[tris[:, 0]]
    v1 = vertices[tris[:, 1]]
    v2 = vertices[tris[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    area2 = np.linalg.norm(n, axis=1)
    keep = area2 > 2e-12  # |n| = 2 * area
    look = look_at_vector(frame.pose)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.abs((n @ look) / area2)
    keep &= cos >= clip_cos_threshold

    if depth_jump_ratio is not None:
        depth_flat = np.asarray(frame.depth, dtype=np.float64).ravel()
        d = depth_flat[tris]
        keep &= d.max(axis=1) <= depth_jump_ratio * d.min(axis=1)

    tris = tris[keep]
    normals = n[keep] / area2[keep][:, None]
    return DepthMesh(
        vertices=vertices,
        colors=colors,
        pixel_coords=pixel_coords,
        triangles=tris,
        normals=normals,
        source_look_at=look,
    )


def normals_from_depth(frame: RgbdFrame) -> np.ndarray:
    """Unit normals per pixel in the camera frame, oriented toward the camera.

    normal = normalize(dP/du x dP/dv) with P the backprojected camera-frame
    point; central differences in the interior, one-sided at the borders.
    Where n . view_ray > 0 the sign is flipped so normals face the camera.
    """
    pts = backproject_camera(frame.depth, frame.intrinsics)
    du = np.gradient(pts, axis=1)
    dv = np.gradient(pts, axis=0)
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    norm = np.where(norm < 1e-20, 1.0, norm)
    n = n / norm
    rays = camera_rays(frame.intrinsics)
    flip = np.sum(n * rays, axis=-1) > 0
    n[flip] *= -1.0
    return n
