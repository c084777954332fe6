"""Perspective look-at camera.

Convention: right-handed world with +z as the up axis. Azimuth rotates about
+z starting from +x; elevation tilts the camera toward +z (elevation 90 puts
the camera on the +z axis looking down). The camera always looks at the
origin. Pixel y grows downward; pixel (0,0) covers the top-left corner and
pixel centers sit at half-integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class Camera:
    fov_deg: float = 30.0
    distance: float = 4.0
    elevation_deg: float = 0.0
    azimuth_deg: float = 0.0
    resolution: tuple = (256, 256)  # (width, height)

    def __post_init__(self):
        if not (0.0 < self.fov_deg < 180.0):
            raise ValueError("fov_deg must be in (0, 180)")
        if self.distance <= 0:
            raise ValueError("distance must be positive")
        if self.resolution[0] < 8 or self.resolution[1] < 8:
            raise ValueError("resolution must be at least 8x8")

    @property
    def width(self):
        return int(self.resolution[0])

    @property
    def height(self):
        return int(self.resolution[1])

    @property
    def focal_px(self):
        return (self.width / 2.0) / np.tan(np.deg2rad(self.fov_deg) / 2.0)

    def position(self) -> np.ndarray:
        el = np.deg2rad(self.elevation_deg)
        az = np.deg2rad(self.azimuth_deg)
        return self.distance * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )

    def basis(self):
        """Returns (right, up, forward) unit vectors in world space."""
        pos = self.position()
        forward = -pos / np.linalg.norm(pos)
        right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
        n = np.linalg.norm(right)
        if n < 1e-12:  # looking straight up/down; continuous limit of the generic case
            az = np.deg2rad(self.azimuth_deg)
            right = np.array([-np.sin(az), np.cos(az), 0.0])
        else:
            right /= n
        up = np.cross(right, forward)
        return right, up, forward

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        """Camera-space coordinates (x right, y down, z forward/depth)."""
        right, up, forward = self.basis()
        rel = np.atleast_2d(points) - self.position()
        return np.stack([rel @ right, rel @ (-up), rel @ forward], axis=-1)

    def with_(self, **kw) -> "Camera":
        return replace(self, **kw)


def project_points(points: np.ndarray, camera: Camera) -> np.ndarray:
    """Project (N,3) world points to (N,3) arrays of (pixel_x, pixel_y, depth).

    Depth is the camera-space forward coordinate; points behind the camera
    have depth <= 0 (their pixel coordinates are not meaningful).
    """
    cam = camera.world_to_cam(points)
    z = cam[:, 2]
    safe_z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    f = camera.focal_px
    px = camera.width / 2.0 + f * cam[:, 0] / safe_z
    py = camera.height / 2.0 + f * cam[:, 1] / safe_z
    return np.stack([px, py, z], axis=-1)


def project(vertex, camera: Camera):
    """Single-point convenience wrapper around project_points."""
    p = project_points(np.asarray(vertex, dtype=np.float64)[None, :], camera)[0]
    return float(p[0]), float(p[1]), float(p[2])
