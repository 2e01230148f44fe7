"""Procedural figurine scenes with an independent SDF ground-truth renderer.

The figurine (sphere head, capsule torso and limbs) is bilaterally
symmetric in x and z, fits a height of about two world units, and is
textured asymmetrically: a high-frequency checker pattern plus dark eye
discs covers every surface point whose outward normal faces +z, while
-z-facing surfaces get a flat monochrome coat. That split (exact at the
plane of zero normal z) is what makes leaked frontal texture on rendered
back views measurable.

Rendering is plain sphere tracing with one fixed directional light and a
constant ambient term: an oracle entirely independent of the
differentiable renderer it is used to validate.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Camera, camera_from_protocol, camera_record,
                       generate_rays, parse_camera_record)
from .images import read_pfm, read_png, write_pfm, write_png

HIT_EPSILON = 1e-5
MAX_STEPS = 256

LIGHT_DIRECTION = np.array([0.25, 0.9, 0.2]) / np.linalg.norm([0.25, 0.9, 0.2])
LIGHT_AMBIENT = 0.3
LIGHT_DIFFUSE = 0.7
BACKGROUND = np.array([1.0, 1.0, 1.0])


@dataclass
class FigurineScene:
    seed: int
    head_center: np.ndarray
    head_radius: float
    torso: tuple            # (a, b, radius)
    limbs: list             # [(a, b, radius)] mirrored x pairs, z = 0
    checker_cell: float
    eye_offset: float       # |x| of the eye centers
    eye_height: float
    eye_radius: float
    front_base: np.ndarray = field(default_factory=lambda: np.array([0.92, 0.78, 0.62]))
    front_alt: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.30, 0.65]))
    eye_color: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.09]))
    back_color: np.ndarray = field(default_factory=lambda: np.array([0.45, 0.52, 0.58]))

    def eye_centers(self) -> np.ndarray:
        cx, cy, cz = self.head_center
        dy = self.eye_height - cy
        ez = np.sqrt(max(self.head_radius**2 - self.eye_offset**2 - dy**2, 1e-4))
        return np.array([[self.eye_offset, self.eye_height, cz + ez],
                         [-self.eye_offset, self.eye_height, cz + ez]])


def build_figurine(seed: int) -> FigurineScene:
    """Deterministic figurine; the seed jitters proportions by a few percent."""
    rng = np.random.default_rng([seed, 101])
    s = float(rng.uniform(0.95, 1.05))
    head_r = 0.42 * s
    arm_r = 0.10 * s
    leg_r = 0.115 * s
    sx, hx = 0.30, 0.62
    limbs = []
    for side in (1.0, -1.0):
        limbs.append((np.array([side * sx, 0.20, 0.0]),
                      np.array([side * hx, -0.28, 0.0]), arm_r))
        limbs.append((np.array([side * 0.15, -0.45, 0.0]),
                      np.array([side * 0.19, -0.98, 0.0]), leg_r))
    return FigurineScene(
        seed=seed,
        head_center=np.array([0.0, 0.62, 0.0]),
        head_radius=head_r,
        torso=(np.array([0.0, -0.42, 0.0]), np.array([0.0, 0.28, 0.0]), 0.30 * s),
        limbs=limbs,
        checker_cell=0.24,
        eye_offset=0.16 * s,
        eye_height=0.70,
        eye_radius=0.11 * s,
    )


def _sd_sphere(p: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return np.linalg.norm(p - center, axis=-1) - radius


def _sd_capsule(p: np.ndarray, a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    pa = p - a
    ba = b - a
    h = np.clip((pa @ ba) / (ba @ ba), 0.0, 1.0)
    return np.linalg.norm(pa - h[..., None] * ba, axis=-1) - radius


def primitive_distances(scene: FigurineScene, p: np.ndarray) -> np.ndarray:
    """Distance to each primitive, stacked along the last axis."""
    parts = [_sd_sphere(p, scene.head_center, scene.head_radius),
             _sd_capsule(p, *scene.torso)]
    parts.extend(_sd_capsule(p, a, b, r) for a, b, r in scene.limbs)
    return np.stack(parts, axis=-1)


def sdf_eval(scene: FigurineScene, p) -> np.ndarray:
    """Signed distance of [N, 3] points to the figurine (negative inside)."""
    return primitive_distances(scene, np.asarray(p, dtype=np.float64)).min(axis=-1)


def surface_normal(scene: FigurineScene, p: np.ndarray, h: float = 1e-4) -> np.ndarray:
    offsets = np.eye(3) * h
    n = np.stack([sdf_eval(scene, p + offsets[i]) - sdf_eval(scene, p - offsets[i])
                  for i in range(3)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def albedo(scene: FigurineScene, p: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Texture rule: checker + eyes where the normal faces +z, flat behind."""
    p = np.atleast_2d(p)
    n = np.atleast_2d(n)
    colors = np.broadcast_to(scene.back_color, p.shape).copy()
    front = n[:, 2] > 0.0
    if np.any(front):
        parity = (np.floor(p[front, 0] / scene.checker_cell)
                  + np.floor(p[front, 1] / scene.checker_cell)).astype(np.int64) % 2
        front_colors = np.where(parity[:, None] == 0, scene.front_base, scene.front_alt)
        eyes = scene.eye_centers()
        for eye in eyes:
            hit = np.linalg.norm(p[front] - eye, axis=-1) < scene.eye_radius
            front_colors[hit] = scene.eye_color
        colors[front] = front_colors
    return colors


def sphere_trace(scene: FigurineScene, origins: np.ndarray, directions: np.ndarray,
                 near: float, far: float):
    """March rays to the surface; returns (hit mask, hit distance)."""
    n = origins.shape[0]
    t = np.full(n, near)
    hit = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(MAX_STEPS):
        if active.size == 0:
            break
        p = origins[active] + t[active, None] * directions[active]
        dist = sdf_eval(scene, p)
        arrived = dist < HIT_EPSILON
        hit[active[arrived]] = True
        t[active] += np.maximum(dist, 0.0)
        alive = ~arrived & (t[active] <= far)
        active = active[alive]
    return hit, np.where(hit, t, 0.0)


def oracle_render(scene: FigurineScene, cam: Camera,
                  light_direction: np.ndarray = LIGHT_DIRECTION,
                  ambient: float = LIGHT_AMBIENT,
                  diffuse: float = LIGHT_DIFFUSE):
    """Ground-truth (rgb, mask, depth) images via sphere tracing.

    Diffuse shading only: albedo * clip(ambient + diffuse * max(0, n.l)).
    Missed rays get the white background, zero mask and zero depth; depth
    is the hit distance along the ray.
    """
    rays = generate_rays(cam)
    hit, t = sphere_trace(scene, rays.origins, rays.directions, rays.near, rays.far)
    r = cam.resolution
    rgb = np.broadcast_to(BACKGROUND, (r * r, 3)).copy()
    if np.any(hit):
        points = rays.origins[hit] + t[hit, None] * rays.directions[hit]
        normals = surface_normal(scene, points)
        lambert = np.maximum(normals @ light_direction, 0.0)
        shade = np.clip(ambient + diffuse * lambert, 0.0, 1.0)
        rgb[hit] = albedo(scene, points, normals) * shade[:, None]
    return (rgb.reshape(r, r, 3),
            hit.astype(np.float64).reshape(r, r),
            t.reshape(r, r))


# -- dataset -------------------------------------------------------------------


@dataclass
class GroundTruthView:
    camera: Camera
    rgb: np.ndarray    # [H, W, 3] in [0, 1]
    mask: np.ndarray   # [H, W]
    depth: np.ndarray  # [H, W]


@dataclass
class SceneDataset:
    scene_seed: int
    resolution: int
    views: list
    manifest_path: str | None = None

    def ortho_views(self) -> list:
        return self.views[:4]

    @property
    def front(self) -> GroundTruthView:
        return self.views[0]   # azimuth 0: the +z-facing side

    @property
    def back(self) -> GroundTruthView:
        return self.views[2]   # azimuth 180


def worker_count(n_tasks: int) -> int:
    """Parallel worker cap: min(cpu, tasks), bounded by NOVA_THREADS."""
    limit = os.cpu_count() or 1
    env = os.environ.get("NOVA_THREADS")
    if env:
        try:
            limit = min(limit, max(1, int(env)))
        except ValueError:
            pass
    return max(1, min(limit, n_tasks))


def _quantized_view(cam: Camera, rgb, mask, depth) -> GroundTruthView:
    """Round-trip arrays through file precision so memory matches disk."""
    from .images import from_uint8, to_uint8
    return GroundTruthView(camera=cam,
                           rgb=from_uint8(to_uint8(rgb)),
                           mask=np.asarray(mask, dtype=np.float32).astype(np.float64),
                           depth=np.asarray(depth, dtype=np.float32).astype(np.float64))


def render_protocol_views(scene: FigurineScene, seed: int, include_random: bool,
                          resolution: int) -> list:
    cameras = [Camera(c.kind, c.azimuth, c.elevation, c.distance, c.fov,
                      c.ortho_halfwidth, resolution)
               for c in camera_from_protocol(seed, "ortho4")]
    if include_random:
        cameras += [Camera(c.kind, c.azimuth, c.elevation, c.distance, c.fov,
                           c.ortho_halfwidth, resolution)
                    for c in camera_from_protocol(seed, "random16")]

    def render(cam):
        return _quantized_view(cam, *oracle_render(scene, cam))

    workers = worker_count(len(cameras))
    if workers == 1:
        return [render(cam) for cam in cameras]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(render, cameras))


def write_dataset(scene: FigurineScene, seed: int, include_random: bool,
                  out_dir: str, resolution: int = 64) -> SceneDataset:
    """Render the capture protocol and write PNG/PFM files plus a manifest.

    Deterministic given (scene, seed): identical reruns produce
    bit-identical files.
    """
    views = render_protocol_views(scene, seed, include_random, resolution)
    try:
        os.makedirs(out_dir, exist_ok=True)
        lines = ["# dualplane dataset manifest",
                 f"scene_seed = {scene.seed}",
                 f"protocol_seed = {seed}",
                 f"resolution = {resolution}",
                 "light_direction = " + ",".join(f"{v:.17g}" for v in LIGHT_DIRECTION),
                 f"light_ambient = {LIGHT_AMBIENT:.17g}",
                 f"light_diffuse = {LIGHT_DIFFUSE:.17g}",
                 f"views = {len(views)}"]
        for k, view in enumerate(views):
            stem = f"view_{k:02d}"
            write_png(os.path.join(out_dir, f"{stem}.png"), view.rgb)
            write_pfm(os.path.join(out_dir, f"{stem}_mask.pfm"), view.mask)
            write_pfm(os.path.join(out_dir, f"{stem}_depth.pfm"), view.depth)
            lines.append(f"view {k:02d} {camera_record(view.camera)} "
                         f"rgb={stem}.png mask={stem}_mask.pfm depth={stem}_depth.pfm")
        manifest_path = os.path.join(out_dir, "manifest.txt")
        with open(manifest_path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"dataset write failed under {out_dir!r}: {exc}") from exc
    return SceneDataset(scene_seed=scene.seed, resolution=resolution,
                        views=views, manifest_path=manifest_path)


def read_dataset(directory: str) -> SceneDataset:
    manifest_path = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    header: dict[str, str] = {}
    views = []
    with open(manifest_path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("view "):
                tokens = line.split()
                record = " ".join(tokens[2:])
                cam = parse_camera_record(record)
                files = {k: v for k, _, v in
                         (tok.partition("=") for tok in tokens[2:]) if k in
                         ("rgb", "mask", "depth")}
                views.append(GroundTruthView(
                    camera=cam,
                    rgb=read_png(os.path.join(directory, files["rgb"])),
                    mask=read_pfm(os.path.join(directory, files["mask"])),
                    depth=read_pfm(os.path.join(directory, files["depth"]))))
            else:
                key, _, value = line.partition("=")
                header[key.strip()] = value.strip()
    return SceneDataset(scene_seed=int(header["scene_seed"]),
                        resolution=int(header["resolution"]),
                        views=views, manifest_path=manifest_path)


# -- ghost-face metric ------------------------------------------------------------


def face_region(scene: FigurineScene, resolution: int,
                halfwidth: float = None) -> tuple[int, int, int, int]:
    """(row0, row1, col0, col1) bounding the head in an ortho view image."""
    if halfwidth is None:
        halfwidth = Camera("orthographic", 0, 0).ortho_halfwidth
    cy = scene.head_center[1]
    r = scene.head_radius
    scale = resolution / 2.0
    row_center = (1.0 - cy / halfwidth) * scale - 0.5
    half_px = r / halfwidth * scale
    row0 = max(int(np.floor(row_center - half_px)), 0)
    row1 = min(int(np.ceil(row_center + half_px)) + 1, resolution)
    col_center = (resolution - 1) / 2.0
    col0 = max(int(np.floor(col_center - half_px)), 0)
    col1 = min(int(np.ceil(col_center + half_px)) + 1, resolution)
    return row0, row1, col0, col1


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Mean-removed correlation of two grayscale patches, in [-1, 1]."""
    if a.size == 0 or b.size == 0:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    denominator = np.linalg.norm(a) * np.linalg.norm(b)
    if denominator < 1e-12:
        return 0.0
    return float((a * b).sum() / denominator)


def _grayscale_highpass(patch: np.ndarray) -> np.ndarray:
    """Channel-mean grayscale minus its binomial blur: texture detail only."""
    gray = patch.mean(axis=-1)
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    padded = np.pad(gray, 2, mode="edge")
    blurred = np.apply_along_axis(lambda r: np.convolve(r, kernel, "valid"), 1, padded)
    blurred = np.apply_along_axis(lambda c: np.convolve(c, kernel, "valid"), 0, blurred)
    return gray - blurred


def erode_mask(mask: np.ndarray, iterations: int = 2) -> np.ndarray:
    """Binary erosion with a 3x3 structuring element."""
    eroded = mask > 0.5
    for _ in range(iterations):
        padded = np.pad(eroded, 1, mode="constant")
        stacked = [padded[1 + di:padded.shape[0] - 1 + di,
                          1 + dj:padded.shape[1] - 1 + dj]
                   for di in (-1, 0, 1) for dj in (-1, 0, 1)]
        eroded = np.logical_and.reduce(stacked)
    return eroded


def ghost_face_correlation(back_rgb: np.ndarray, front_rgb: np.ndarray,
                           region: tuple[int, int, int, int],
                           valid: np.ndarray | None = None) -> float:
    """Correlation of a back view's face texture with the frontal pattern.

    The template is the front view's face region mirrored horizontally: a
    point at world (x, y) lands on mirrored columns in the two opposed
    orthographic views, so leaked frontal texture lines up with the
    mirrored template. Both patches are high-pass filtered (shading and
    silhouette contrast must not count as leakage) and compared on
    ``valid`` pixels, typically the eroded head interior. Near zero for a
    clean back view, near one for a fully leaked one.
    """
    r0, r1, c0, c1 = region
    back_patch = _grayscale_highpass(back_rgb[r0:r1, c0:c1])
    template = _grayscale_highpass(np.fliplr(front_rgb[r0:r1, c0:c1]))
    if valid is not None:
        inside = valid[r0:r1, c0:c1] if valid.shape == back_rgb.shape[:2] else valid
        back_patch = back_patch[inside]
        template = template[inside]
    return normalized_cross_correlation(back_patch, template)


def ghost_face_metric(scene: FigurineScene, back_rgb: np.ndarray,
                      front_rgb: np.ndarray, back_mask: np.ndarray) -> float:
    """Ghost correlation over the eroded head interior of an ortho back view."""
    region = face_region(scene, back_rgb.shape[0])
    return ghost_face_correlation(back_rgb, front_rgb, region,
                                  valid=erode_mask(back_mask))
