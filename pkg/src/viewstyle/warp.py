"""Z-buffered software rasterization of a DepthMesh into a target camera.

Produces warped color/depth, a validity mask, the per-reference-pixel flow
field consumed by the attention heatmaps, and the covering-triangle index
raster consumed by compositing.

Determinism: fragments are resolved with a total order (smaller interpolated
depth wins, exact depth ties broken by lower triangle index), so identical
inputs yield bit-identical outputs regardless of how the triangle stream is
chunked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Intrinsics, Pose, RgbdFrame, ValidityMask
from .geometry import (
    DEFAULT_CLIP_COS_THRESHOLD,
    DEFAULT_DEPTH_JUMP_RATIO,
    DepthMesh,
    backproject,
    build_mesh,
    project,
)

# Flow occlusion test: projected depth counts as hidden when it exceeds the
# z-buffer by max(abs_eps, rel_eps * zbuffer).
FLOW_ABS_EPS = 1e-3
FLOW_REL_EPS = 1e-2

_CHUNK_CANDIDATES = 4_000_000
_MIN_VERTEX_Z = 1e-9


@dataclass(frozen=True)
class FlowField:
    """Forward flow: where each reference pixel lands in the target raster.

    uv[v, u] = (u', v') in target pixel coordinates (float, unrounded);
    occluded[v, u] is True when the reference point is hidden in the target
    view or projects outside the target raster.
    """

    uv: np.ndarray
    occluded: np.ndarray
    target_shape: tuple[int, int]  # (H', W')

    def correspondences(self) -> np.ndarray:
        """Unoccluded entries as an (N, 4) float array of (u, v, u', v')."""
        vis = ~self.occluded
        v_idx, u_idx = np.nonzero(vis)
        out = np.empty((v_idx.size, 4))
        out[:, 0] = u_idx
        out[:, 1] = v_idx
        out[:, 2] = self.uv[v_idx, u_idx, 0]
        out[:, 3] = self.uv[v_idx, u_idx, 1]
        return out


@dataclass(frozen=True)
class WarpResult:
    """Raster outputs of forward-warping one reference frame to a target view."""

    rgb: np.ndarray            # (H', W', C)
    depth: np.ndarray          # (H', W'), target-camera meters; 0 where invalid
    validity: ValidityMask
    flow: FlowField | None
    tri_index: np.ndarray      # (H', W') int32, -1 where invalid
    normals: np.ndarray        # (H', W', 3) world-frame triangle normal, 0 where invalid

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


def _project_vertices(mesh: DepthMesh, intrinsics: Intrinsics, pose: Pose):
    uv, z = project(mesh.vertices, intrinsics, pose)
    # Screen-space rasterization math runs in float32 for throughput; pixel
    # coordinates up to 2^24 and their edge-function products stay exact, so
    # the top-left fill rule still sees exact zeros on synthetic warps.
    return (
        uv[:, 0].astype(np.float32),
        uv[:, 1].astype(np.float32),
        z.astype(np.float32),
    )


def _rasterize_fragments(xs, ys, zs, tris, tri_ids, width, height):
    """Best fragment per covered pixel for one chunk of triangles.

    Returns (pix, z, tri_id, bary) with one row per covered pixel, pix
    strictly increasing. Coverage uses the top-left fill rule: a pixel
    center exactly on an edge belongs to the triangle when the edge points
    up on screen (dy < 0) or is horizontal pointing right (dy == 0, dx > 0).
    """
    empty = (np.empty(0, np.int64), np.empty(0, np.float32), np.empty(0, np.int64), np.empty((0, 3), np.float32))
    ax, ay, az = xs[tris[:, 0]], ys[tris[:, 0]], zs[tris[:, 0]]
    bx, by, bz = xs[tris[:, 1]], ys[tris[:, 1]], zs[tris[:, 1]]
    cx, cy, cz = xs[tris[:, 2]], ys[tris[:, 2]], zs[tris[:, 2]]

    # Triangles crossing the camera plane cannot be interpolated in screen
    # space; drop them (scene meshes for smooth trajectories never do this).
    ok = (az > _MIN_VERTEX_Z) & (bz > _MIN_VERTEX_Z) & (cz > _MIN_VERTEX_Z)

    area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    flip = area2 < 0
    # Normalize winding so interior edge functions are positive.
    bx, cx = np.where(flip, cx, bx), np.where(flip, bx, cx)
    by, cy = np.where(flip, cy, by), np.where(flip, by, cy)
    bz, cz = np.where(flip, cz, bz), np.where(flip, bz, cz)
    area2 = np.abs(area2)
    ok &= area2 > 0

    x0 = np.maximum(np.ceil(np.minimum.reduce([ax, bx, cx])), 0)
    x1 = np.minimum(np.floor(np.maximum.reduce([ax, bx, cx])), width - 1)
    y0 = np.maximum(np.ceil(np.minimum.reduce([ay, by, cy])), 0)
    y1 = np.minimum(np.floor(np.maximum.reduce([ay, by, cy])), height - 1)
    nx = (x1 - x0 + 1).astype(np.int32)
    ny = (y1 - y0 + 1).astype(np.int32)
    ok &= (nx > 0) & (ny > 0)
    nx[~ok] = 0
    ny[~ok] = 0
    counts = (nx.astype(np.int64)) * ny
    total = int(counts.sum())
    if total == 0:
        return empty

    # Expand each triangle into its bbox pixels: candidate k within triangle t
    # covers pixel (x0 + k % nx, y0 + k // nx).
    tri_rows = np.repeat(np.arange(tris.shape[0], dtype=np.int64), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k = np.arange(total, dtype=np.int64)
    k -= np.repeat(starts, counts)
    dy, dx = np.divmod(k, nx[tri_rows].astype(np.int64))
    px = (x0[tri_rows] + dx).astype(np.float32)
    py = (y0[tri_rows] + dy).astype(np.float32)
    del k, dx, dy

    axr, ayr = ax[tri_rows], ay[tri_rows]
    bxr, byr = bx[tri_rows], by[tri_rows]
    cxr, cyr = cx[tri_rows], cy[tri_rows]

    def _edge(pxq, pyq, qx, qy, rx, ry):
        """Edge function of directed edge q->r at candidate pixels, plus the
        top-left acceptance of its exact zeros."""
        exq = rx - qx
        eyq = ry - qy
        w = exq * (pyq - qy) - eyq * (pxq - qx)
        accept = (eyq < 0) | ((eyq == 0) & (exq > 0))
        return w, (w > 0) | ((w == 0) & accept)

    w0, in0 = _edge(px, py, bxr, byr, cxr, cyr)
    w1, in1 = _edge(px, py, cxr, cyr, axr, ayr)
    w2, in2 = _edge(px, py, axr, ayr, bxr, byr)
    inside = in0 & in1 & in2
    del in0, in1, in2, axr, ayr, bxr, byr, cxr, cyr
    if not inside.any():
        return empty

    tri_rows = tri_rows[inside]
    px = px[inside]
    py = py[inside]
    inv_area = np.float32(1.0) / area2[tri_rows]
    l0 = w0[inside] * inv_area
    l1 = w1[inside] * inv_area
    l2 = w2[inside] * inv_area
    del w0, w1, w2, inside
    zf = l0 * az[tri_rows] + l1 * bz[tri_rows] + l2 * cz[tri_rows]

    pix = py.astype(np.int64) * width + px.astype(np.int64)
    order = np.lexsort((tri_ids[tri_rows], zf, pix))
    pix = pix[order]
    first = np.empty(pix.size, dtype=bool)
    first[0] = True
    first[1:] = pix[1:] != pix[:-1]
    sel = order[first]
    bary = np.stack([l0[sel], l1[sel], l2[sel]], axis=1)
    # Swapped winding swapped vertices b and c; swap weights back.
    flip_sel = flip[tri_rows[sel]]
    bary[flip_sel] = bary[flip_sel][:, [0, 2, 1]]
    return pix[first], zf[sel], tri_ids[tri_rows[sel]], bary


def rasterize(
    mesh: DepthMesh,
    intrinsics: Intrinsics,
    pose: Pose,
    ref_frame: RgbdFrame | None = None,
) -> WarpResult:
    """Render a DepthMesh into a target camera with a deterministic z-buffer.

    Color and depth are barycentric-interpolated; depth is re-expressed in
    the target camera frame. When ``ref_frame`` is given, the forward flow
    field from that reference view into the target is attached.
    """
    width, height = intrinsics.width, intrinsics.height
    n_channels = mesh.colors.shape[1] if mesh.colors.size else 3
    rgb = np.zeros((height, width, n_channels))
    depth = np.zeros((height, width))
    valid = np.zeros((height, width), dtype=bool)
    tri_index = np.full((height, width), -1, dtype=np.int32)
    normals = np.zeros((height, width, 3))

    if mesh.num_triangles > 0:
        xs, ys, zs = _project_vertices(mesh, intrinsics, pose)
        best_z = np.full(height * width, np.inf, dtype=np.float32)
        best_tri = np.full(height * width, np.iinfo(np.int64).max, dtype=np.int64)
        best_bary = np.zeros((height * width, 3), dtype=np.float32)

        tris = mesh.triangles
        # Chunk by cumulative bbox area so candidate expansion stays bounded.
        bb_w = np.ceil(np.maximum.reduce([xs[tris[:, 0]], xs[tris[:, 1]], xs[tris[:, 2]]])) - np.floor(
            np.minimum.reduce([xs[tris[:, 0]], xs[tris[:, 1]], xs[tris[:, 2]]])
        )
        bb_h = np.ceil(np.maximum.reduce([ys[tris[:, 0]], ys[tris[:, 1]], ys[tris[:, 2]]])) - np.floor(
            np.minimum.reduce([ys[tris[:, 0]], ys[tris[:, 1]], ys[tris[:, 2]]])
        )
        with np.errstate(invalid="ignore"):
            est = np.clip(np.nan_to_num((bb_w + 1) * (bb_h + 1), nan=1.0), 1.0, None)
        bounds = np.searchsorted(np.cumsum(est), np.arange(_CHUNK_CANDIDATES, est.sum() + _CHUNK_CANDIDATES, _CHUNK_CANDIDATES))
        start = 0
        for stop in list(np.minimum(bounds + 1, tris.shape[0])) + [tris.shape[0]]:
            stop = int(stop)
            if stop <= start:
                continue
            ids = np.arange(start, stop, dtype=np.int64)
            pix, zf, tid, bary = _rasterize_fragments(xs, ys, zs, tris[start:stop], ids, width, height)
            if pix.size:
                better = (zf < best_z[pix]) | ((zf == best_z[pix]) & (tid < best_tri[pix]))
                pix, zf, tid, bary = pix[better], zf[better], tid[better], bary[better]
                best_z[pix] = zf
                best_tri[pix] = tid
                best_bary[pix] = bary
            start = stop

        covered = np.isfinite(best_z)
        cov_idx = np.nonzero(covered)[0]
        if cov_idx.size:
            tid = best_tri[cov_idx]
            bary = best_bary[cov_idx]
            verts = mesh.triangles[tid]
            cols = (
                mesh.colors[verts[:, 0]] * bary[:, 0:1]
                + mesh.colors[verts[:, 1]] * bary[:, 1:2]
                + mesh.colors[verts[:, 2]] * bary[:, 2:3]
            )
            vy, vx = np.divmod(cov_idx, width)
            rgb[vy, vx] = cols
            depth[vy, vx] = best_z[cov_idx]
            valid[vy, vx] = True
            tri_index[vy, vx] = tid.astype(np.int32)
            normals[vy, vx] = mesh.normals[tid]

    flow = None
    if ref_frame is not None:
        zbuffer = np.where(valid, depth, np.inf)
        flow = compute_flow(ref_frame, intrinsics, pose, zbuffer)
    return WarpResult(
        rgb=rgb,
        depth=depth,
        validity=ValidityMask(valid),
        flow=flow,
        tri_index=tri_index,
        normals=normals,
    )


def compute_flow(
    ref: RgbdFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    zbuffer: np.ndarray,
    abs_eps: float = FLOW_ABS_EPS,
    rel_eps: float = FLOW_REL_EPS,
) -> FlowField:
    """Forward flow of every reference pixel into the target view.

    ``zbuffer`` must come from rasterizing the same reference into the same
    target (target-camera depths, +inf where uncovered). A pixel is flagged
    occluded when its projection falls outside the raster, lands behind the
    camera, or its projected depth exceeds the z-buffer at the rounded
    target pixel by max(abs_eps, rel_eps * zbuffer).
    """
    pts_world, _ = backproject(ref)
    uv, z = project(pts_world, intrinsics, pose)
    h_t, w_t = zbuffer.shape
    ru = np.rint(uv[..., 0]).astype(np.int64)
    rv = np.rint(uv[..., 1]).astype(np.int64)
    inside = (z > 0) & (ru >= 0) & (ru < w_t) & (rv >= 0) & (rv < h_t)
    occluded = ~inside
    zb = np.full(ref.shape, np.inf)
    zb[inside] = zbuffer[rv[inside], ru[inside]]
    tol = np.maximum(abs_eps, rel_eps * np.where(np.isfinite(zb), zb, 0.0))
    occluded |= z > zb + tol
    return FlowField(uv=uv, occluded=occluded, target_shape=(h_t, w_t))


def warp_frame(
    ref: RgbdFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    clip_cos_threshold: float = DEFAULT_CLIP_COS_THRESHOLD,
    depth_jump_ratio: float | None = DEFAULT_DEPTH_JUMP_RATIO,
    channels: np.ndarray | None = None,
) -> WarpResult:
    """build_mesh + rasterize + compute_flow in one call.

    ``channels`` substitutes an arbitrary H x W x C raster for the frame's
    rgb as the interpolated attribute (used for feature warping).
    """
    mesh = build_mesh(ref, clip_cos_threshold, depth_jump_ratio)
    if channels is not None:
        ch = np.asarray(channels, dtype=np.float64)
        if ch.shape[:2] != ref.shape:
            raise ValueError("channels raster must match the frame size")
        mesh = DepthMesh(
            vertices=mesh.vertices,
            colors=ch.reshape(-1, ch.shape[-1]),
            pixel_coords=mesh.pixel_coords,
            triangles=mesh.triangles,
            normals=mesh.normals,
            source_look_at=mesh.source_look_at,
        )
    return rasterize(mesh, intrinsics, pose, ref_frame=ref)
