"""Camera geometry: pixel-plane coordinates vs. world polar directions.

A camera is described by the polar direction of its optical (line-of-sight)
axis plus horizontal/vertical viewing angles and a pixel-plane size. Pixels
map to azimuth/elevation offsets around the LoS axis through the tangent-plane
projection; the inverse places a world direction back on the pixel plane.

All angles at the module boundary are degrees. Pixel coordinates are
continuous in [0, W] x [0, H]; integer quantization is a caller concern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence


class NotVisibleError(ValueError):
    """Direction lies outside the camera's field of view."""


@dataclass(frozen=True)
class CameraModel:
    """Pose and optics of one camera.

    los_azimuth_deg / los_elevation_deg: polar direction of the optical axis.
    horiz_view_deg / vert_view_deg: full viewing angles, in (0, 180).
    pixel_width / pixel_height: pixel-plane dimensions, >= 1.
    """

    los_azimuth_deg: float
    los_elevation_deg: float
    horiz_view_deg: float
    vert_view_deg: float
    pixel_width: int
    pixel_height: int

    def __post_init__(self):
        if not (0.0 < self.horiz_view_deg < 180.0):
            raise ValueError(f"horizontal viewing angle must be in (0, 180), got {self.horiz_view_deg}")
        if not (0.0 < self.vert_view_deg < 180.0):
            raise ValueError(f"vertical viewing angle must be in (0, 180), got {self.vert_view_deg}")
        if self.pixel_width < 1 or self.pixel_height < 1:
            raise ValueError(f"pixel plane must be at least 1x1, got {self.pixel_width}x{self.pixel_height}")

    @property
    def azimuth_low(self) -> float:
        return self.los_azimuth_deg - self.horiz_view_deg / 2.0

    @property
    def azimuth_high(self) -> float:
        return self.los_azimuth_deg + self.horiz_view_deg / 2.0


@dataclass(frozen=True)
class PixelCoord:
    """Continuous pixel coordinate, u in [0, W], v in [0, H]."""

    u: float
    v: float


@dataclass(frozen=True)
class PolarDirection:
    """World direction: azimuth and elevation, degrees."""

    azimuth_deg: float
    elevation_deg: float


def pixel_to_direction(cam: CameraModel, p: PixelCoord) -> PolarDirection:
    """Map a pixel to its world polar direction.

    The angular offsets around the LoS axis are
    arctan(((2u - W)/W) * tan(half horizontal view)) and the analogous
    vertical expression; the image center lies exactly on the LoS axis.
    """
    w, h = cam.pixel_width, cam.pixel_height
    if not (0.0 <= p.u <= w and 0.0 <= p.v <= h):
        raise ValueError(f"pixel ({p.u}, {p.v}) outside the {w}x{h} pixel plane")
    half_h = math.tan(math.radians(cam.horiz_view_deg / 2.0))
    half_v = math.tan(math.radians(cam.vert_view_deg / 2.0))
    d_az = math.degrees(math.atan((2.0 * p.u - w) / w * half_h))
    d_el = math.degrees(math.atan((2.0 * p.v - h) / h * half_v))
    return PolarDirection(cam.los_azimuth_deg + d_az, cam.los_elevation_deg + d_el)


def direction_to_pixel(cam: CameraModel, d: PolarDirection) -> PixelCoord:
    """Place a world direction on the camera's pixel plane.

    Inverse of :func:`pixel_to_direction`. Directions on the closed FoV
    boundary map to the pixel-plane edge (u == 0 or u == W); anything
    strictly outside raises :class:`NotVisibleError`.
    """
    d_az = d.azimuth_deg - cam.los_azimuth_deg
    d_el = d.elevation_deg - cam.los_elevation_deg
    if abs(d_az) > cam.horiz_view_deg / 2.0 or abs(d_el) > cam.vert_view_deg / 2.0:
        raise NotVisibleError(
            f"direction ({d.azimuth_deg}, {d.elevation_deg}) not visible to this camera")
    half_h = math.tan(math.radians(cam.horiz_view_deg / 2.0))
    half_v = math.tan(math.radians(cam.vert_view_deg / 2.0))
    u = cam.pixel_width / 2.0 * (1.0 + math.tan(math.radians(d_az)) / half_h)
    v = cam.pixel_height / 2.0 * (1.0 + math.tan(math.radians(d_el)) / half_v)
    # tan() roundoff can push a boundary direction epsilon past the edge
    u = min(max(u, 0.0), float(cam.pixel_width))
    v = min(max(v, 0.0), float(cam.pixel_height))
    return PixelCoord(u, v)


class CameraArray:
    """Ordered cameras with pairwise-disjoint horizontal FoVs.

    Containment uses half-open azimuth intervals [low, high), so an azimuth
    on a shared boundary belongs to exactly one camera. The top edge of the
    direction-finding range is the one closed exception: an azimuth equal to
    a camera's high edge and to `df_range_deg` routes to that camera.
    """

    def __init__(self, cameras: Sequence[CameraModel], df_range_deg: float):
        spans = sorted(range(len(cameras)), key=lambda i: cameras[i].azimuth_low)
        for a, b in zip(spans, spans[1:]):
            if cameras[b].azimuth_low < cameras[a].azimuth_high:
                raise ValueError(
                    f"camera FoVs overlap: [{cameras[a].azimuth_low}, {cameras[a].azimuth_high}) "
                    f"and [{cameras[b].azimuth_low}, {cameras[b].azimuth_high})")
        self.cameras = list(cameras)
        self.df_range_deg = float(df_range_deg)

    def camera_for_azimuth(self, azimuth_deg: float) -> Optional[int]:
        """Index of the unique camera whose horizontal FoV contains the azimuth."""
        for i, cam in enumerate(self.cameras):
            if cam.azimuth_low <= azimuth_deg < cam.azimuth_high:
                return i
            if azimuth_deg == cam.azimuth_high == self.df_range_deg:
                return i
        return None


def clamp_azimuth(azimuth_deg: float, df_range_deg: float) -> float:
    """Clamp an azimuth into the direction-finding range [0, omega]."""
    return min(max(azimuth_deg, 0.0), df_range_deg)
