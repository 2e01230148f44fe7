"""The loss stack: reconstruction terms, adversarial pair with the
gradient penalty, density smoothness, and the total."""

import numpy as np
import pytest

from dualplane import autodiff as ad
from dualplane import losses as ls
from dualplane.autodiff import Tensor
from dualplane.render import RenderOutput


def _conv_classifier_oracle(d: ls.DiscriminatorParams, x: np.ndarray) -> float:
    """Plain-loop strided conv classifier matching the discriminator."""
    h = x
    for layer in d.convs:
        kh, kw, cin, cout = layer.w.data.shape
        ph = kh // 2
        padded = np.pad(h, ((ph, ph), (ph, ph), (0, 0)), mode="edge")
        ho = int(np.ceil(h.shape[0] / layer.stride))
        wo = int(np.ceil(h.shape[1] / layer.stride))
        out = np.zeros((ho, wo, cout))
        for i in range(ho):
            for j in range(wo):
                window = padded[i * layer.stride:i * layer.stride + kh,
                                j * layer.stride:j * layer.stride + kw]
                for c in range(cout):
                    out[i, j, c] = (window * layer.w.data[:, :, :, c]).sum() \
                        + layer.b.data[c]
        h = np.where(out > 0, out, d.slope * out)
    pooled = h.mean(axis=(0, 1))
    return float(pooled @ d.w_head.data + d.b_head.data)


@pytest.fixture
def weights():
    return ls.LossWeights()


@pytest.fixture
def gt_view(rng):
    class View:
        rgb = rng.uniform(0, 1, (8, 8, 3))
        mask = (rng.uniform(0, 1, (8, 8)) > 0.5).astype(np.float64)
        depth = rng.uniform(2, 4, (8, 8))
    return View()


def _render_from(rgb, mask, depth):
    r = rgb.shape[0]
    return RenderOutput(rgb=Tensor(np.asarray(rgb).reshape(r * r, 3)),
                        depth=Tensor(np.asarray(depth).reshape(r * r)),
                        mask=Tensor(np.asarray(mask).reshape(r * r)),
                        weights=None, resolution=r)


class TestDefaultWeights:
    def test_values(self, weights):
        assert (weights.lpips, weights.l1, weights.mask, weights.depth) == \
            (20.0, 4.0, 1.0, 1000.0)
        assert weights.r1 == 5.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ls.LossWeights(depth=-1.0)


class TestPerceptualProxy:
    def test_identical_images_zero(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        assert ls.gaussian_pyramid_l1(img, img).item() == 0.0

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        assert ls.gaussian_pyramid_l1(a, b).item() == \
            ls.gaussian_pyramid_l1(b, a).item()

    def test_constant_difference_hand_evaluation(self):
        """Constant images differing by c: every level contributes c."""
        a = np.full((8, 8, 3), 0.7)
        b = np.full((8, 8, 3), 0.45)
        assert abs(ls.gaussian_pyramid_l1(a, b).item() - 0.25) < 1e-12

    def test_precomputed_levels_match(self, rng):
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        direct = ls.gaussian_pyramid_l1(a, b).item()
        cached = ls.gaussian_pyramid_l1(a, None, b_levels=ls.image_pyramid(b)).item()
        assert abs(direct - cached) < 1e-14

    def test_pluggable_metric(self, rng):
        a = rng.uniform(0, 1, (4, 4, 3))
        b = rng.uniform(0, 1, (4, 4, 3))
        plain_l1 = lambda x, y: ad.reduce_mean(ad.absolute(ad.sub(
            x if isinstance(x, Tensor) else Tensor(x),
            y if isinstance(y, Tensor) else Tensor(y))))
        out = ls.perceptual_distance(a, b, metric=plain_l1)
        assert abs(out.item() - np.abs(a - b).mean()) < 1e-12


class TestReconstructionLoss:
    def test_perfect_prediction_is_zero(self, gt_view, weights):
        pred = _render_from(gt_view.rgb, gt_view.mask, gt_view.depth)
        assert ls.reconstruction_loss(pred, gt_view, weights).item() == 0.0

    def test_constant_rgb_offset_terms(self, gt_view, weights):
        """Only rgb differs, by 0.1: term-by-term hand computation."""
        rgb = np.clip(gt_view.rgb * 0.0 + 0.45, 0, 1)
        gt_view.rgb = np.full_like(gt_view.rgb, 0.55)
        pred = _render_from(rgb, gt_view.mask, gt_view.depth)
        terms = ls.reconstruction_terms(pred, gt_view, weights)
        assert abs(terms["l1"].item() - 4.0 * 0.1) < 1e-9
        assert abs(terms["lpips"].item() - 20.0 * 0.1) < 1e-9
        assert terms["mask"].item() == 0.0
        assert terms["depth"].item() == 0.0

    def test_depth_masked_to_foreground(self, gt_view, weights):
        depth = gt_view.depth.copy()
        depth[gt_view.mask < 0.5] += 100.0  # background depth must not count
        pred = _render_from(gt_view.rgb, gt_view.mask, depth)
        assert ls.reconstruction_loss(pred, gt_view, weights).item() == 0.0

    def test_weight_linearity(self, gt_view, rng):
        pred = _render_from(rng.uniform(0, 1, (8, 8, 3)),
                            rng.uniform(0, 1, (8, 8)),
                            rng.uniform(2, 4, (8, 8)))
        base = ls.reconstruction_terms(pred, gt_view, ls.LossWeights())
        doubled = ls.reconstruction_terms(
            pred, gt_view, ls.LossWeights(depth=2000.0))
        assert doubled["depth"].item() == pytest.approx(2 * base["depth"].item())
        assert doubled["l1"].item() == base["l1"].item()
        assert doubled["lpips"].item() == base["lpips"].item()

    def test_resolution_mismatch_rejected(self, gt_view, weights, rng):
        pred = _render_from(rng.uniform(0, 1, (4, 4, 3)),
                            rng.uniform(0, 1, (4, 4)), rng.uniform(2, 4, (4, 4)))
        with pytest.raises(ad.DimensionError):
            ls.reconstruction_loss(pred, gt_view, weights)

    def test_gradient_through_all_terms(self, gt_view, weights, rng):
        rgb = Tensor(rng.uniform(0.2, 0.8, (16, 3)), requires_grad=True)
        mask = Tensor(rng.uniform(0.2, 0.8, 16), requires_grad=True)
        depth = Tensor(rng.uniform(2, 4, 16), requires_grad=True)
        gt = type("View", (), {"rgb": rng.uniform(0, 1, (4, 4, 3)),
                               "mask": (rng.uniform(0, 1, (4, 4)) > 0.4).astype(float),
                               "depth": rng.uniform(2, 4, (4, 4))})()
        pred = RenderOutput(rgb=rgb, depth=depth, mask=mask, weights=None,
                            resolution=4)

        def objective():
            return ls.reconstruction_loss(pred, gt, weights)

        err = ad.grad_check(objective, {"rgb": rgb, "mask": mask, "depth": depth},
                            eps=1e-6)
        assert err < 1e-3


class TestAdversarialPair:
    def test_zero_discriminator_gives_zero_losses(self, rng):
        d = ls.create_discriminator_params(widths=(4,), rng=rng, init_scale=0.0)
        fake = (rng.uniform(0, 1, (8, 8, 3)),) * 2 + (rng.uniform(0, 1, (8, 8)),)
        real = (rng.uniform(0, 1, (8, 8, 3)),) * 2 + (rng.uniform(0, 1, (8, 8)),)
        assert ls.generator_loss(d, fake).item() == 0.0
        assert ls.discriminator_loss(d, fake, real, ls.LossWeights()).item() == 0.0

    def test_frozen_constant_logit(self, rng):
        d = ls.create_discriminator_params(widths=(4,), rng=rng, init_scale=0.0)
        d.b_head.data[...] = 1.25
        fake = (rng.uniform(0, 1, (8, 8, 3)),) * 2 + (rng.uniform(0, 1, (8, 8)),)
        assert ls.generator_loss(d, fake).item() == pytest.approx(-1.25)

    def test_identical_batches_leave_r1_only(self, rng):
        d = ls.create_discriminator_params(widths=(4, 6), rng=rng)
        batch = (rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)),
                 rng.uniform(0, 1, (8, 8)))
        w = ls.LossWeights()
        with_r1 = ls.discriminator_loss(d, batch, batch, w).item()
        r1_alone = ls.r1_penalty(d, batch, w.r1).item()
        assert with_r1 == pytest.approx(r1_alone, abs=1e-12)

    def test_generator_loss_matches_conv_oracle(self, rng):
        d = ls.create_discriminator_params(widths=(3, 4), rng=rng)
        fake = (rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)),
                rng.uniform(0, 1, (8, 8)))
        stacked = np.concatenate([fake[0], fake[1], fake[2][..., None]], axis=-1)
        expected = -_conv_classifier_oracle(d, stacked)
        assert abs(ls.generator_loss(d, fake).item() - expected) < 1e-8

    def test_discriminator_loss_matches_oracle(self, rng):
        d = ls.create_discriminator_params(widths=(3,), rng=rng)
        fake = (rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)),
                rng.uniform(0, 1, (8, 8)))
        real = (rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)),
                rng.uniform(0, 1, (8, 8)))
        w = ls.LossWeights(r1=0.0)  # logit terms only
        fake_logit = _conv_classifier_oracle(
            d, np.concatenate([fake[0], fake[1], fake[2][..., None]], axis=-1))
        real_logit = _conv_classifier_oracle(
            d, np.concatenate([real[0], real[1], real[2][..., None]], axis=-1))
        got = ls.discriminator_loss(d, fake, real, w).item()
        assert abs(got - (fake_logit - real_logit)) < 1e-8

    def test_r1_weight_gradients_match_finite_differences(self, rng):
        d = ls.create_discriminator_params(widths=(4, 6), rng=rng)
        real = (rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)),
                rng.uniform(0, 1, (8, 8)))
        err = ad.grad_check(lambda: ls.r1_penalty(d, real, 5.0),
                            ls.discriminator_tensors(d), eps=1e-5)
        assert err < 1e-4

    def test_r1_on_headless_classifier_closed_form(self, rng):
        """No conv layers: logit = mean-pooled input @ w, so the input
        gradient is w / (H*W) per pixel and the penalty has a closed form."""
        d = ls.DiscriminatorParams(convs=[],
                                   w_head=Tensor(rng.standard_normal(7),
                                                 requires_grad=True),
                                   b_head=Tensor(0.0, requires_grad=True))
        real = (rng.uniform(0, 1, (6, 6, 3)), rng.uniform(0, 1, (6, 6, 3)),
                rng.uniform(0, 1, (6, 6)))
        gamma = 5.0
        got = ls.r1_penalty(d, real, gamma).item()
        pixels = 36.0
        expected = 0.5 * gamma * float(d.w_head.data @ d.w_head.data) / pixels
        assert got == pytest.approx(expected, rel=1e-12)

    def test_gradient_flow_separation(self, rng):
        d = ls.create_discriminator_params(widths=(4,), rng=rng)
        d_params = ls.discriminator_tensors(d)
        fake_rgb = Tensor(rng.uniform(0, 1, (8, 8, 3)), requires_grad=True)
        fake_mask = Tensor(rng.uniform(0, 1, (8, 8)), requires_grad=True)
        fake = (fake_rgb, fake_rgb, fake_mask)
        real = (rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)),
                rng.uniform(0, 1, (8, 8)))

        ad.zero_grad(d_params)
        ls.generator_loss(d, fake).backward()
        assert all(p.grad is None for p in d_params.values())
        assert fake_rgb.grad is not None and np.any(fake_rgb.grad != 0)

        fake_rgb.grad = None
        fake_mask.grad = None
        ls.discriminator_loss(d, fake, real, ls.LossWeights()).backward()
        assert fake_rgb.grad is None and fake_mask.grad is None
        assert all(p.grad is not None for p in d_params.values())


class TestDensitySmoothness:
    def test_constant_field_zero(self, rng, weights):
        probes = rng.uniform(-1, 1, (100, 3))
        loss = ls.density_smoothness_loss(lambda p: Tensor(np.full(len(p), 3.3)),
                                          probes, seed=0, weights=weights)
        assert abs(loss.item()) < 1e-9

    def test_zero_perturbation_is_exactly_zero(self, rng, weights, monkeypatch):
        probes = rng.uniform(-1, 1, (50, 3))
        monkeypatch.setattr(ls, "PERTURBATION_STD", 0.0)
        loss = ls.density_smoothness_loss(lambda p: Tensor(p[:, 2] * 4.0),
                                          probes, seed=1, weights=weights)
        assert loss.item() == 0.0

    def test_linear_density_halfnormal_statistic(self, weights):
        """sigma linear in z with slope a: loss = w * a * 0.04 * sqrt(2/pi)."""
        slope = 2.5
        probes = np.random.default_rng(5).uniform(-1, 1, (10000, 3))
        loss = ls.density_smoothness_loss(
            lambda p: Tensor(slope * p[:, 2] + 10.0), probes, seed=6,
            weights=weights)
        expected = weights.reg * slope * ls.PERTURBATION_STD * np.sqrt(2 / np.pi)
        assert loss.item() == pytest.approx(expected, rel=0.03)

    def test_deterministic_given_seed(self, rng, weights):
        probes = rng.uniform(-1, 1, (20, 3))
        f = lambda p: Tensor(np.linalg.norm(p, axis=1))
        a = ls.density_smoothness_loss(f, probes, seed=3, weights=weights).item()
        b = ls.density_smoothness_loss(f, probes, seed=3, weights=weights).item()
        assert a == b

    def test_through_live_field(self, rng, weights):
        from dualplane.fusion import create_fusion_params
        from dualplane.render import create_decoder_params
        from dualplane.triplane import create_dual_triplane

        dtp = create_dual_triplane(4, 4, init_scale=0.5, rng=rng)
        fusion = create_fusion_params(feature_channels=4, rng=rng)
        dec = create_decoder_params(rng=rng)
        sigma_fn = ls.density_fn_from_state(dtp, fusion, dec, "per_point")
        probes = rng.uniform(-1, 1, (16, 3))

        def objective():
            return ls.density_smoothness_loss(sigma_fn, probes, seed=2,
                                              weights=weights)

        err = ad.grad_check(objective, {"xy": dtp.front.xy, "w1": dec.w1}, eps=1e-5)
        assert err < 1e-3


class TestTotalLoss:
    def test_all_zero(self):
        assert ls.total_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0),
                             Tensor(0.0)).item() == 0.0

    def test_sum(self):
        assert ls.total_loss(Tensor(1.0), Tensor(2.0), Tensor(3.0),
                             Tensor(4.0)).item() == 10.0

    def test_gan_off_components_default_to_zero(self):
        assert ls.total_loss(Tensor(1.5), None, None, Tensor(0.25)).item() == 1.75

    def test_matches_independent_resummation(self, rng):
        parts = [float(v) for v in rng.standard_normal(4)]
        got = ls.total_loss(*[Tensor(v) for v in parts]).item()
        assert got == pytest.approx(sum(parts), abs=1e-12)
