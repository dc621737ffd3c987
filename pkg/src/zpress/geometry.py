"""Pinhole cameras, camera-center distances and pairwise view overlap.

All geometry runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

DEFAULT_OVERLAP_GRID = 16
DEFAULT_OVERLAP_DEPTHS = (0.5, 1.0, 2.0, 4.0)
_DEPTH_EPS = 1e-9


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rotation, camera center and pinhole intrinsics.

    A world point X maps to camera coordinates R @ (X - center); the camera
    looks down +z with +x right and +y down in the image.
    """

    rotation: np.ndarray
    center: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        ctr = np.array(self.center, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        ctr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "center", ctr)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise InvalidInput("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise InvalidInput("rotation determinant is not +1")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInput("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height or self.width < 1 or self.height < 1:
            raise InvalidInput("image size must be positive integers")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidInput("principal point outside the image")

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.center, other.center)
            and (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
        )

    __hash__ = None

    @property
    def intrinsics(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def world_to_camera(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation.T

    def camera_to_world(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation + self.center

    def pixel_rays(self, u, v):
        """World-space ray directions (camera z-component 1) through pixels."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d_cam = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)
        return d_cam @ self.rotation

    def with_intrinsics(self, fx, fy, cx, cy, width, height):
        return CameraPose(self.rotation, self.center, fx, fy, cx, cy, width, height)

    def translated(self, offset):
        return CameraPose(self.rotation, self.center + np.asarray(offset, float), self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def to_dict(self):
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "center": [float(x) for x in self.center],
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }


def look_at(center, target, up=(0.0, -1.0, 0.0), **intrinsics):
    """Pose at ``center`` whose optical axis points at ``target``.

    ``up`` is the world direction that should appear toward the top of the
    image; with +y down in the image, the camera y axis is -up projected.
    """
    center = np.asarray(center, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - center
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return CameraPose(rot, center, **intrinsics)


def pairwise_distances(poses):
    """K x K Euclidean distances between camera centers."""
    if len(poses) == 0:
        raise InvalidInput("pairwise_distances needs at least one pose")
    centers = np.stack([p.center for p in poses])
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    return dist


def project_point(pose, point):
    """Project a world point; returns (pixel, depth, valid).

    ``valid`` is False when the point is behind the camera or numerically on
    the camera plane; in the latter case depth is reported as 0.
    """
    pc = pose.world_to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    depth = float(pc[2])
    if abs(depth) < _DEPTH_EPS:
        return np.array([np.nan, np.nan]), 0.0, False
    pixel = np.array([pose.fx * pc[0] / depth + pose.cx, pose.fy * pc[1] / depth + pose.cy])
    return pixel, depth, depth > 0


def project_points(pose, points):
    """Vectorized projection: returns (pixels (n,2), depths (n,))."""
    pc = pose.world_to_camera(points)
    z = pc[..., 2]
    safe = np.where(np.abs(z) < _DEPTH_EPS, 1.0, z)
    uv = np.stack([pose.fx * pc[..., 0] / safe + pose.cx, pose.fy * pc[..., 1] / safe + pose.cy], axis=-1)
    return uv, np.where(np.abs(z) < _DEPTH_EPS, 0.0, z)


def unproject(pose, pixel, depth):
    u, v = pixel
    pc = np.array([(u - pose.cx) / pose.fx * depth, (v - pose.cy) / pose.fy * depth, depth])
    return pose.camera_to_world(pc)


def _directed_overlap(a, b, grid, depths):
    step_u = a.width / grid
    step_v = a.height / grid
    u, v = np.meshgrid((np.arange(grid) + 0.5) * step_u, (np.arange(grid) + 0.5) * step_v)
    rays = a.pixel_rays(u.reshape(-1), v.reshape(-1))
    hit = np.zeros(rays.shape[0], dtype=bool)
    for d in depths:
        pts = a.center + d * rays
        uv, z = project_points(b, pts)
        inside = (z > _DEPTH_EPS) & (uv[:, 0] >= 0) & (uv[:, 0] <= b.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= b.height)
        hit |= inside
    return float(hit.mean())


def _check_overlap_args(grid, depths):
    if int(grid) != grid or grid < 2:
        raise InvalidInput(f"overlap grid must be an integer >= 2, got {grid}")
    depths = tuple(float(d) for d in depths)
    if not depths or min(depths) <= 0:
        raise InvalidInput("overlap depths must be non-empty and positive")
    return int(grid), depths


def view_overlap(a, b, grid=DEFAULT_OVERLAP_GRID, depths=DEFAULT_OVERLAP_DEPTHS):
    """Symmetric overlap in [0, 1]: min of the two directed ray-hit fractions."""
    grid, depths = _check_overlap_args(grid, depths)
    return min(_directed_overlap(a, b, grid, depths), _directed_overlap(b, a, grid, depths))


def overlap_matrix(poses, grid=DEFAULT_OVERLAP_GRID, depths=DEFAULT_OVERLAP_DEPTHS):
    if len(poses) < 2:
        raise InvalidInput("overlap_matrix needs at least two poses")
    grid, depths = _check_overlap_args(grid, depths)
    k = len(poses)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = view_overlap(poses[i], poses[j], grid, depths)
    return out


# pose files -----------------------------------------------------------------

_POSE_FIELDS = {
    "rotation": 9,
    "center": 3,
    "fx": None,
    "fy": None,
    "cx": None,
    "cy": None,
    "width": "int",
    "height": "int",
}


class PoseFileError(InvalidInput):
    pass


def poses_from_json(text):
    """Parse a JSON array of pose objects, with entry/field diagnostics."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PoseFileError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, list):
        raise PoseFileError("pose file must be a JSON array")
    poses = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise PoseFileError(f"entry {i}: expected an object")
        for name, kind in _POSE_FIELDS.items():
            if name not in entry:
                raise PoseFileError(f"entry {i}: missing field '{name}'")
            val = entry[name]
            if isinstance(kind, int):
                if not (isinstance(val, list) and len(val) == kind and all(_is_num(x) for x in val)):
                    raise PoseFileError(f"entry {i}: field '{name}' must be {kind} numbers")
            elif kind == "int":
                if not (isinstance(val, int) and not isinstance(val, bool)):
                    raise PoseFileError(f"entry {i}: field '{name}' must be an integer")
            elif not _is_num(val):
                raise PoseFileError(f"entry {i}: field '{name}' must be a number")
        extra = set(entry) - set(_POSE_FIELDS)
        if extra:
            raise PoseFileError(f"entry {i}: unknown field '{sorted(extra)[0]}'")
        try:
            poses.append(
                CameraPose(
                    np.array(entry["rotation"]).reshape(3, 3),
                    entry["center"],
                    entry["fx"],
                    entry["fy"],
                    entry["cx"],
                    entry["cy"],
                    entry["width"],
                    entry["height"],
                )
            )
        except InvalidInput as exc:
            raise PoseFileError(f"entry {i}: {exc}") from exc
    return poses


def poses_to_json(poses):
    return json.dumps([p.to_dict() for p in poses], indent=1)


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)
