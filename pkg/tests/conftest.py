import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from viewstyle.cameras import Intrinsics, Pose, RgbdFrame, pose_look_at


def smooth_field(shape, rng, lo=0.0, hi=1.0, waves=4, fmax=1.5):
    """Band-limited random field in [lo, hi]: a mixture of low-frequency
    sinusoids, so depth meshes stay well conditioned."""
    h, w = shape
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    field = np.zeros(shape)
    for _ in range(waves):
        fu, fv = rng.uniform(0.2, fmax, size=2) * 2 * np.pi / max(h, w)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.3, 1.0) * np.sin(fu * u + fv * v + phase)
    field -= field.min()
    peak = field.max()
    if peak > 0:
        field /= peak
    return lo + (hi - lo) * field


def smooth_rgb(shape, rng, fmax=1.5):
    return np.stack([smooth_field(shape, rng, 0.05, 0.95, fmax=fmax) for _ in range(3)], axis=-1)


def make_frame(size=32, seed=0, depth_range=(1.5, 2.5), pose=None, index=0, fov_scale=1.0, fmax=1.5):
    rng = np.random.default_rng(seed)
    h = w = size
    intr = Intrinsics(
        fx=fov_scale * 0.9 * w, fy=fov_scale * 0.9 * w,
        cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h,
    )
    depth = smooth_field((h, w), rng, *depth_range, fmax=fmax)
    rgb = smooth_rgb((h, w), rng, fmax=fmax)
    return RgbdFrame(rgb=rgb, depth=depth, intrinsics=intr, pose=pose or Pose.identity(), index=index)


def random_nearby_pose(rng, center_depth=2.0, max_angle_deg=5.0, max_shift=0.08):
    """Pose looking roughly at the scene center from a jittered viewpoint."""
    eye = rng.uniform(-max_shift, max_shift, size=3)
    ang = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, size=2))
    target = np.array([np.tan(ang[0]) * center_depth, np.tan(ang[1]) * center_depth, center_depth])
    return pose_look_at(eye, target)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
