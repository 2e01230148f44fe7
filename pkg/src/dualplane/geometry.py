"""Cameras, per-pixel rays, the back-space coordinate flip and ray sampling.

Conventions: a right-handed world frame with +y up; the subject sits at
the origin facing +z. A camera is placed on a sphere around the origin
by azimuth (degrees around +y, zero on the +z axis) and elevation
(degrees above the horizontal plane), always looking at the origin.
Image row 0 is the top of the frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_AZIMUTHS = (0.0, 90.0, 180.0, 270.0)

PROTOCOL_DISTANCE = 3.5
PROTOCOL_FOV = 30.0
ELEVATION_STD = 20.0
ELEVATION_CLAMP = 85.0

DEFAULT_ORTHO_HALFWIDTH = 1.2
DEFAULT_DEPTH_MARGIN = 1.5


@dataclass(frozen=True)
class Camera:
    kind: str  # "perspective" | "orthographic"
    azimuth: float
    elevation: float
    distance: float = PROTOCOL_DISTANCE
    fov: float = PROTOCOL_FOV
    ortho_halfwidth: float = DEFAULT_ORTHO_HALFWIDTH
    resolution: int = 64

    def __post_init__(self):
        if self.kind not in ("perspective", "orthographic"):
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.distance <= 0:
            raise ValueError("camera distance must be positive")
        if self.kind == "perspective" and not 0.0 < self.fov < 180.0:
            raise ValueError(f"perspective fov must be in (0, 180), got {self.fov}")


@dataclass
class RayBatch:
    origins: np.ndarray     # [P, 3]
    directions: np.ndarray  # [P, 3], unit length
    near: float
    far: float

    def __post_init__(self):
        if self.near >= self.far:
            raise ValueError(f"near {self.near} must be below far {self.far}")


def camera_position(cam: Camera) -> np.ndarray:
    az = np.deg2rad(cam.azimuth)
    el = np.deg2rad(cam.elevation)
    return cam.distance * np.array([
        np.sin(az) * np.cos(el),
        np.sin(el),
        np.cos(az) * np.cos(el),
    ])


def camera_basis(cam: Camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (right, up, forward) unit vectors for the look-at-origin frame."""
    position = camera_position(cam)
    forward = -position / np.linalg.norm(position)
    world_up = np.array([0.0, 1.0, 0.0])
    if abs(forward @ world_up) > 1.0 - 1e-9:
        world_up = np.array([0.0, 0.0, 1.0])  # degenerate straight-down view
    right = np.cross(forward, world_up)
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return right, up, forward


def camera_from_protocol(seed: int, mode: str) -> list[Camera]:
    """Build the capture set: 16 random perspective or 4 fixed ortho views.

    random16 draws azimuths uniformly on [0, 360) and elevations from a
    20-degree normal clamped to ±85; ortho4 places orthographic cameras
    at azimuths 0/90/180/270 with zero elevation. Pure function of
    (seed, mode).
    """
    if mode == "ortho4":
        return [Camera("orthographic", az, 0.0) for az in ORTHO_AZIMUTHS]
    if mode == "random16":
        rng = np.random.default_rng(seed)
        azimuths = rng.uniform(0.0, 360.0, size=16)
        elevations = np.clip(rng.normal(0.0, ELEVATION_STD, size=16),
                             -ELEVATION_CLAMP, ELEVATION_CLAMP)
        return [Camera("perspective", float(a), float(e))
                for a, e in zip(azimuths, elevations)]
    raise ValueError(f"unknown protocol mode {mode!r}")


def ray_through_ndc(cam: Camera, u, v) -> tuple[np.ndarray, np.ndarray]:
    """Origin/direction for continuous frame coordinates u, v in [-1, 1].

    u runs left-to-right, v bottom-to-top; (±1, ±1) are the exact frame
    corners. Accepts scalars or equal-shape arrays.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    right, up, forward = camera_basis(cam)
    position = camera_position(cam)
    if cam.kind == "orthographic":
        origins = (position
                   + u[..., None] * cam.ortho_halfwidth * right
                   + v[..., None] * cam.ortho_halfwidth * up)
        directions = np.broadcast_to(forward, origins.shape).copy()
        return origins, directions
    half_tan = np.tan(np.deg2rad(cam.fov) / 2.0)
    directions = (forward
                  + u[..., None] * half_tan * right
                  + v[..., None] * half_tan * up)
    directions = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
    origins = np.broadcast_to(position, directions.shape).copy()
    return origins, directions


def pixel_grid(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame coordinates of pixel centers, row-major with row 0 on top."""
    centers = (np.arange(resolution) + 0.5) / resolution
    u = 2.0 * centers - 1.0
    v = 1.0 - 2.0 * centers
    uu, vv = np.meshgrid(u, v)
    return uu.ravel(), vv.ravel()


def generate_rays(cam: Camera, depth_margin: float = DEFAULT_DEPTH_MARGIN) -> RayBatch:
    """One ray per pixel center; near/far bracket the unit-scale subject."""
    u, v = pixel_grid(cam.resolution)
    origins, directions = ray_through_ndc(cam, u, v)
    return RayBatch(origins=origins, directions=directions,
                    near=cam.distance - depth_margin,
                    far=cam.distance + depth_margin)


def world_to_back_space(points):
    """Map world coordinates into the back field's frame: (x, y, z) -> (-x, y, -z).

    A rotation by pi about the y axis; applies equally to positions and
    directions, and is its own inverse. Accepts any [..., 3] array.
    """
    points = np.asarray(points)
    flipped = points.copy()
    flipped[..., 0] = -flipped[..., 0]
    flipped[..., 2] = -flipped[..., 2]
    return flipped


def stratify_samples(rays: RayBatch, n_samples: int,
                     jitter_seed: int | None = None):
    """Stratified depths along each ray plus the corresponding points.

    [near, far] is split into ``n_samples`` equal strata with one draw per
    stratum (uniform when ``jitter_seed`` is given, the midpoint when it is
    None). Returns (depths [P, S], points [P, S, 3]).
    """
    if n_samples < 2:
        raise ValueError("stratify_samples: n_samples must be >= 2")
    p = rays.origins.shape[0]
    width = (rays.far - rays.near) / n_samples
    edges = rays.near + width * np.arange(n_samples)
    if jitter_seed is None:
        offsets = np.full((p, n_samples), 0.5)
    else:
        offsets = np.random.default_rng(jitter_seed).uniform(size=(p, n_samples))
    depths = edges[None, :] + offsets * width
    points = rays.origins[:, None, :] + depths[..., None] * rays.directions[:, None, :]
    return depths, points


# -- camera records -----------------------------------------------------------

def camera_record(cam: Camera) -> str:
    """Single-line structured text form used in dataset manifests."""
    parts = [f"kind={cam.kind}",
             f"azimuth={cam.azimuth:.10g}",
             f"elevation={cam.elevation:.10g}",
             f"distance={cam.distance:.10g}"]
    if cam.kind == "perspective":
        parts.append(f"fov={cam.fov:.10g}")
    else:
        parts.append(f"halfwidth={cam.ortho_halfwidth:.10g}")
    parts.append(f"resolution={cam.resolution}")
    return " ".join(parts)


def parse_camera_record(text: str) -> Camera:
    fields: dict[str, str] = {}
    for token in text.split():
        key, _, value = token.partition("=")
        fields[key] = value
    kind = fields["kind"]
    kwargs = dict(kind=kind,
                  azimuth=float(fields["azimuth"]),
                  elevation=float(fields["elevation"]),
                  distance=float(fields["distance"]),
                  resolution=int(fields["resolution"]))
    if kind == "perspective":
        kwargs["fov"] = float(fields["fov"])
    else:
        kwargs["ortho_halfwidth"] = float(fields["halfwidth"])
    return Camera(**kwargs)
