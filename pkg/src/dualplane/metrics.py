"""Image quality metrics and evaluation reports.

PSNR over [0, 1] images with a 99 dB sentinel for identical inputs;
SSIM with the standard 11x11 gaussian window (sigma 1.5, k1 = 0.01,
k2 = 0.03, unit dynamic range) on the channel-mean grayscale; and the
same gaussian-pyramid L1 proxy the training loss uses as its perceptual
term (reported as proxy_lpips, not as a learned perceptual metric).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .losses import gaussian_pyramid_l1

PSNR_SENTINEL = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for [0, 1] images; identical inputs report 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(10.0 * np.log10(1.0 / mse), PSNR_SENTINEL)


def _grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _window_means(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("xykl,kl->xy", view, window, optimize=True)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over valid 11x11 gaussian windows, in [-1, 1].

    Color images are reduced to grayscale by channel mean; the dynamic
    range is fixed at 1. Images smaller than the window fall back to a
    single global window.
    """
    ga, gb = _grayscale(a), _grayscale(b)
    if ga.shape != gb.shape:
        raise ValueError(f"ssim: shape mismatch {ga.shape} vs {gb.shape}")
    size = min(SSIM_WINDOW, *ga.shape)
    window = _gaussian_window(size)
    mu_a = _window_means(ga, window)
    mu_b = _window_means(gb, window)
    mu_aa = _window_means(ga * ga, window)
    mu_bb = _window_means(gb * gb, window)
    mu_ab = _window_means(ga * gb, window)
    var_a = mu_aa - mu_a ** 2
    var_b = mu_bb - mu_b ** 2
    cov = mu_ab - mu_a * mu_b
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
             / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(score.mean())


def proxy_lpips(a: np.ndarray, b: np.ndarray) -> float:
    """The training perceptual proxy evaluated on plain arrays."""
    with ad.no_grad():
        return gaussian_pyramid_l1(a, b).item()


@dataclass
class ViewMetrics:
    label: str
    psnr: float
    ssim: float
    proxy_lpips: float
    ghost: float | None = None


@dataclass
class MetricReport:
    views: list

    def mean(self, attr: str) -> float:
        values = [getattr(v, attr) for v in self.views if getattr(v, attr) is not None]
        return float(np.mean(values)) if values else float("nan")

    def format_table(self) -> str:
        lines = ["view\tpsnr_db\tssim\tssim_x100\tproxy_lpips\tghost_corr"]
        for v in self.views:
            ghost = f"{v.ghost:.6f}" if v.ghost is not None else "-"
            lines.append(f"{v.label}\t{v.psnr:.6f}\t{v.ssim:.6f}"
                         f"\t{100.0 * v.ssim:.4f}\t{v.proxy_lpips:.6f}\t{ghost}")
        lines.append(f"mean\t{self.mean('psnr'):.6f}\t{self.mean('ssim'):.6f}"
                     f"\t{100.0 * self.mean('ssim'):.4f}"
                     f"\t{self.mean('proxy_lpips'):.6f}\t-")
        lines.append("# fid: not computed (needs a pretrained classifier; out of scope)")
        return "\n".join(lines) + "\n"


_ORTHO_LABELS = ("front", "left", "back", "right")  # azimuth 0/90/180/270 order


def evaluate_views(state, dataset) -> MetricReport:
    """Render the four ortho views from a fitted state and score them."""
    from .scenes import build_figurine, ghost_face_metric
    from .trainer import render_eval_views

    views = dataset.ortho_views()
    renders = render_eval_views(state, [v.camera for v in views])
    scene = build_figurine(dataset.scene_seed)
    report = []
    front_gt = views[0].rgb
    for label, view, out in zip(_ORTHO_LABELS, views, renders):
        images = out.images()
        ghost = None
        if label == "back":
            ghost = ghost_face_metric(scene, images["rgb"], front_gt, view.mask)
        report.append(ViewMetrics(label=label,
                                  psnr=psnr(images["rgb"], view.rgb),
                                  ssim=ssim(images["rgb"], view.rgb),
                                  proxy_lpips=proxy_lpips(images["rgb"], view.rgb),
                                  ghost=ghost))
    return MetricReport(views=report)


def format_ablation_table(rows: dict) -> str:
    """Methods x {right, left, front, back} x {ssim, proxy, psnr} table."""
    order = ("right", "left", "front", "back")
    header = ["method"]
    for label in order:
        header += [f"{label}_ssim_x100", f"{label}_proxy_lpips", f"{label}_psnr"]
    header.append("back_ghost_corr")
    lines = ["\t".join(header)]
    for method, report in rows.items():
        by_label = {v.label: v for v in report.views}
        cells = [method]
        for label in order:
            v = by_label[label]
            cells += [f"{100.0 * v.ssim:.4f}", f"{v.proxy_lpips:.6f}", f"{v.psnr:.4f}"]
        ghost = by_label["back"].ghost
        cells.append(f"{ghost:.6f}" if ghost is not None else "-")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
