"""Render the procedural figurine oracle and write a capture dataset.

The figurine is a signed-distance composition (sphere head, capsule
torso and limbs), textured with a checker-and-eyes pattern on surfaces
facing +z and a flat coat on surfaces facing -z. Running this script
writes the four orthographic views plus the sixteen random perspective
views into ./out_dataset and prints a few image statistics.
"""

import os

import numpy as np

from dualplane.geometry import Camera
from dualplane.scenes import (build_figurine, ghost_face_metric, oracle_render,
                              write_dataset)

out_dir = os.path.join(os.path.dirname(__file__), "out_dataset")

scene = build_figurine(seed=7)
print(f"figurine seed 7: head radius {scene.head_radius:.3f}, "
      f"checker cell {scene.checker_cell} world units")

front_rgb, front_mask, front_depth = oracle_render(
    scene, Camera("orthographic", 0.0, 0.0, resolution=64))
back_rgb, back_mask, _ = oracle_render(
    scene, Camera("orthographic", 180.0, 0.0, resolution=64))

print(f"front view coverage: {front_mask.mean():.3f} of the frame")
print(f"texture variance, front {front_rgb[front_mask == 1].var():.4f} "
      f"vs back {back_rgb[back_mask == 1].var():.4f} "
      "(the back is deliberately smooth)")
print(f"silhouettes mirror exactly: "
      f"{np.array_equal(front_mask, back_mask[:, ::-1])}")
print(f"ghost correlation of the clean back view: "
      f"{ghost_face_metric(scene, back_rgb, front_rgb, back_mask):.4f} "
      "(near zero by construction)")

dataset = write_dataset(scene, seed=7, include_random=True, out_dir=out_dir)
print(f"wrote {len(dataset.views)} views to {out_dir}")
