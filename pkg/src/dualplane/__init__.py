"""Dual tri-plane neural fields fitted from two opposed (front/back) views.

A numpy-only library: its own reverse-mode autodiff core, front/back
tri-plane feature fields with direction-aware attention fusion, a
differentiable volume renderer with the full reconstruction /
adversarial / smoothness loss stack, a procedural SDF figurine oracle
for ground truth, and a per-scene Adam fitting loop.
"""

from .autodiff import Tensor, grad_check, no_grad, set_default_dtype, set_nan_checks
from .fusion import FusionParams, concat_fusion, direction_aware_attention
from .geometry import Camera, RayBatch, camera_from_protocol, world_to_back_space
from .losses import LossWeights
from .render import RenderOutput, render_view
from .scenes import FigurineScene, SceneDataset, build_figurine, oracle_render
from .trainer import FitState, RunConfig, fit
from .triplane import DualTriPlane, TriPlane, sample_dual, sample_triplane

__version__ = "0.1.0"

__all__ = [
    "Tensor", "grad_check", "no_grad", "set_default_dtype", "set_nan_checks",
    "FusionParams", "concat_fusion", "direction_aware_attention",
    "Camera", "RayBatch", "camera_from_protocol", "world_to_back_space",
    "LossWeights", "RenderOutput", "render_view",
    "FigurineScene", "SceneDataset", "build_figurine", "oracle_render",
    "FitState", "RunConfig", "fit",
    "DualTriPlane", "TriPlane", "sample_dual", "sample_triplane",
]
