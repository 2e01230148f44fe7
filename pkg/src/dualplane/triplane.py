"""Front/back tri-plane feature fields and differentiable point sampling.

A tri-plane stores three feature planes (XY, XZ, YZ). A 3-d point is
featurized by projecting it onto each plane, bilinearly sampling, and
summing the three feature vectors. The dual field keeps one world-aligned
tri-plane for the front view and a second one expressed in back space
(x and z negated), so edits to either field never leak into the other's
sampled features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import world_to_back_space

DEFAULT_RESOLUTION = 64
DEFAULT_CHANNELS = 16
DEFAULT_EXTENT = 1.5

PLANE_NAMES = ("xy", "xz", "yz")
# Coordinate pairs projected onto each plane, as indices into (x, y, z).
_PLANE_AXES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


@dataclass
class TriPlane:
    xy: Tensor
    xz: Tensor
    yz: Tensor
    extent: float = DEFAULT_EXTENT

    def __post_init__(self):
        shapes = {self.xy.shape, self.xz.shape, self.yz.shape}
        if len(shapes) != 1:
            raise ValueError(f"tri-plane planes disagree in shape: {shapes}")
        if self.xy.ndim != 3 or self.xy.shape[0] != self.xy.shape[1]:
            raise ValueError(f"planes must be [R, R, C], got {self.xy.shape}")

    @property
    def resolution(self) -> int:
        return self.xy.shape[0]

    @property
    def channels(self) -> int:
        return self.xy.shape[2]

    def planes(self) -> dict:
        return {"xy": self.xy, "xz": self.xz, "yz": self.yz}


@dataclass
class DualTriPlane:
    front: TriPlane
    back: TriPlane

    def __post_init__(self):
        same = (self.front.resolution == self.back.resolution
                and self.front.channels == self.back.channels
                and self.front.extent == self.back.extent)
        if not same:
            raise ValueError("front and back tri-planes must share (R, C, extent)")

    @property
    def extent(self) -> float:
        return self.front.extent


def create_triplane(resolution: int = DEFAULT_RESOLUTION,
                    channels: int = DEFAULT_CHANNELS,
                    extent: float = DEFAULT_EXTENT,
                    init_scale: float = 0.0,
                    rng: np.random.Generator | None = None,
                    requires_grad: bool = True) -> TriPlane:
    """Fresh tri-plane; zeros by default, or small gaussian texels."""
    def make():
        if init_scale == 0.0 or rng is None:
            data = np.zeros((resolution, resolution, channels))
        else:
            data = init_scale * rng.standard_normal((resolution, resolution, channels))
        return Tensor(data, requires_grad=requires_grad)

    return TriPlane(xy=make(), xz=make(), yz=make(), extent=extent)


def create_dual_triplane(resolution: int = DEFAULT_RESOLUTION,
                         channels: int = DEFAULT_CHANNELS,
                         extent: float = DEFAULT_EXTENT,
                         init_scale: float = 0.0,
                         rng: np.random.Generator | None = None,
                         requires_grad: bool = True) -> DualTriPlane:
    front = create_triplane(resolution, channels, extent, init_scale, rng, requires_grad)
    back = create_triplane(resolution, channels, extent, init_scale, rng, requires_grad)
    return DualTriPlane(front=front, back=back)


def _plane_uv(points: np.ndarray, plane: str, extent: float) -> np.ndarray:
    a, b = _PLANE_AXES[plane]
    return np.stack([points[:, a], points[:, b]], axis=1) / extent


def sample_triplane(tp: TriPlane, points) -> Tensor:
    """Sum of the three plane features at each point's projections.

    Points are given in the tri-plane's own coordinate frame; positions
    outside ±extent clamp to the plane border. Differentiable with
    respect to plane contents only.
    """
    pts = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"sample_triplane: points must be [N, 3], got {pts.shape}")
    total = None
    for name, plane in tp.planes().items():
        sampled = ad.bilinear_sample(plane, _plane_uv(pts, name, tp.extent))
        total = sampled if total is None else ad.add(total, sampled)
    return total


def sample_dual(dtp: DualTriPlane, world_points) -> tuple[Tensor, Tensor]:
    """Per-point features from both fields for world-space points.

    The front field is sampled at the points as given; the back field is
    sampled at their back-space image (x and z negated). Returns
    (front [N, C], back [N, C]).
    """
    pts = world_points.data if isinstance(world_points, Tensor) else np.asarray(world_points)
    front = sample_triplane(dtp.front, pts)
    back = sample_triplane(dtp.back, world_to_back_space(pts))
    return front, back


def triplane_tensors(dtp: DualTriPlane) -> dict:
    """Checkpoint layout: front.xy/xz/yz then back.xy/xz/yz."""
    named = {}
    for prefix, tp in (("front", dtp.front), ("back", dtp.back)):
        for name, plane in tp.planes().items():
            named[f"{prefix}.{name}"] = plane
    return named


def load_triplane_tensors(named: dict, extent: float = DEFAULT_EXTENT) -> DualTriPlane:
    def build(prefix):
        return TriPlane(xy=Tensor(named[f"{prefix}.xy"], requires_grad=True),
                        xz=Tensor(named[f"{prefix}.xz"], requires_grad=True),
                        yz=Tensor(named[f"{prefix}.yz"], requires_grad=True),
                        extent=extent)

    return DualTriPlane(front=build("front"), back=build("back"))
