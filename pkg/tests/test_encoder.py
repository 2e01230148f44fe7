"""The two-path image encoder and its tri-plane lifting."""

import numpy as np
import pytest

from dualplane import autodiff as ad
from dualplane import encoder as enc
from dualplane.autodiff import Tensor


def _conv_oracle(x, w, b, slope):
    """Naive edge-padded stride-1 conv + leaky rectification."""
    kh, kw, cin, cout = w.shape
    ph = kh // 2
    padded = np.pad(x, ((ph, ph), (ph, ph), (0, 0)), mode="edge")
    out = np.zeros((x.shape[0], x.shape[1], cout))
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            window = padded[i:i + kh, j:j + kw]
            for c in range(cout):
                out[i, j, c] = (window * w[:, :, :, c]).sum() + b[c]
    return np.where(out > 0, out, slope * out)


@pytest.fixture
def params(rng):
    return enc.create_encoder_params(grid_resolution=8, channels=4,
                                     plane_channels=2, rng=rng)


class TestEncodeFront:
    def test_zero_image_zero_bias_gives_zero(self, params):
        out = enc.encode_front(params, np.zeros((8, 8, 3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-15)

    def test_constant_image_constant_grid(self, params):
        out = enc.encode_front(params, np.full((8, 8, 3), 0.6)).data
        np.testing.assert_allclose(out, np.broadcast_to(out[0, 0], out.shape),
                                   atol=1e-12)

    def test_matches_naive_convolution_oracle(self, params, rng):
        """The first conv stage against a plain-loop convolution."""
        img = rng.uniform(0, 1, (8, 8, 3))
        h1 = _conv_oracle(img, params.front_conv1.w.data,
                          params.front_conv1.b.data, params.slope)
        h2 = _conv_oracle(h1, params.front_conv2.w.data,
                          params.front_conv2.b.data, params.slope)
        out = enc.encode_front(params, img).data
        np.testing.assert_allclose(out, h1 + h2, atol=1e-10)

    def test_non_square_rejected(self, params, rng):
        with pytest.raises(ad.DimensionError):
            enc.encode_front(params, rng.uniform(0, 1, (8, 6, 3)))

    def test_input_resized_when_needed(self, params, rng):
        out = enc.encode_front(params, rng.uniform(0, 1, (16, 16, 3)))
        assert out.shape == (8, 8, 4)


class TestEncodeBack:
    def test_zero_image_zero_bias_gives_zero(self, params):
        out = enc.encode_back(params, np.zeros((8, 8, 3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-15)

    def test_constant_image_constant_grid(self, params):
        """Attention pooling of a constant field returns the constant."""
        out = enc.encode_back(params, np.full((8, 8, 3), 0.3)).data
        np.testing.assert_allclose(out, np.broadcast_to(out[0, 0], out.shape),
                                   atol=1e-12)

    def test_matches_compositional_oracle(self, params, rng):
        """Recompose hr + upsample(mid(pool(base))) from the public pieces."""
        img = rng.uniform(0, 1, (8, 8, 3))
        x = Tensor(img)
        hr = ad.leaky_relu(ad.conv2d(x, params.back_hr.w, params.back_hr.b),
                           params.slope)
        base = ad.leaky_relu(ad.conv2d(x, params.back_base.w, params.back_base.b),
                             params.slope)
        pooled = enc.attention_pool2(base, params.back_score)
        mid = ad.leaky_relu(ad.conv2d(pooled, params.back_mid.w, params.back_mid.b),
                            params.slope)
        expected = ad.add(hr, ad.upsample_bilinear(mid, 2)).data
        np.testing.assert_allclose(enc.encode_back(params, img).data, expected,
                                   atol=1e-8)

    def test_smoother_than_front_path(self, params, rng):
        """The pooled path damps high-frequency input relative to the front
        path (the structural contrast the two encoders exist for)."""
        r = np.indices((8, 8)).sum(axis=0) % 2
        checker = np.repeat(r[..., None], 3, axis=2).astype(float)
        flat = np.full((8, 8, 3), 0.5)

        def hf_gain(encode):
            hf = encode(params, checker).data
            dc = encode(params, flat).data
            return np.abs(np.diff(hf - dc, axis=0)).mean()

        # base-stream-only back path vs the front path, same HR kernels
        params.back_hr.w.data[:] = params.front_conv1.w.data * 0.0
        gain_back = hf_gain(enc.encode_back)
        gain_front = hf_gain(enc.encode_front)
        assert gain_back < gain_front


class TestAttentionPool:
    def test_constant_field_fixed_point(self, params, rng):
        x = Tensor(np.full((6, 6, 4), 1.7))
        out = enc.attention_pool2(x, params.back_score)
        np.testing.assert_allclose(out.data, 1.7, atol=1e-12)

    def test_weights_select_high_score_texels(self, rng):
        score = enc.ConvSpec(w=Tensor(np.zeros((1, 1, 1, 1))),
                             b=Tensor(np.zeros(1)))
        # score == feature value: big entries dominate their 2x2 patch
        score.w.data[0, 0, 0, 0] = 50.0
        x = np.zeros((2, 2, 1))
        x[0, 0, 0] = 1.0
        out = enc.attention_pool2(Tensor(x), score)
        assert out.data[0, 0, 0] == pytest.approx(1.0, abs=1e-3)

    def test_odd_size_rejected(self, params):
        with pytest.raises(ad.DimensionError):
            enc.attention_pool2(Tensor(np.zeros((5, 5, 4))), params.back_score)


class TestLift:
    def test_zero_grid_zero_planes(self, params):
        tp = enc.lift_to_triplane(params, Tensor(np.zeros((8, 8, 4))))
        for plane in tp.planes().values():
            np.testing.assert_array_equal(plane.data, 0.0)

    def test_channel_split_order(self, params, rng):
        """Tagged one-hot lift kernels land in xy / xz / yz blocks in order."""
        params.lift.w.data[:] = 0.0
        params.lift.b.data[:] = 0.0
        params.lift.w.data[0, 0, 0, 0] = 1.0   # -> xy channel 0
        params.lift.w.data[0, 0, 1, 2] = 1.0   # -> xz channel 0
        params.lift.w.data[0, 0, 2, 4] = 1.0   # -> yz channel 0
        grid = rng.uniform(0, 1, (8, 8, 4))
        tp = enc.lift_to_triplane(params, Tensor(grid))
        np.testing.assert_allclose(tp.xy.data[:, :, 0], grid[:, :, 0], atol=1e-12)
        np.testing.assert_allclose(tp.xz.data[:, :, 0], grid[:, :, 1], atol=1e-12)
        np.testing.assert_allclose(tp.yz.data[:, :, 0], grid[:, :, 2], atol=1e-12)

    def test_reassembled_planes_equal_conv_output(self, params, rng):
        grid = Tensor(rng.uniform(0, 1, (8, 8, 4)))
        tp = enc.lift_to_triplane(params, grid)
        direct = ad.conv2d(grid, params.lift.w, params.lift.b).data
        recombined = np.concatenate([tp.xy.data, tp.xz.data, tp.yz.data], axis=2)
        np.testing.assert_array_equal(recombined, direct)


class TestDualEncoding:
    def test_shared_flag_routes_through_front_path(self, params, rng):
        front_img = rng.uniform(0, 1, (8, 8, 3))
        back_img = rng.uniform(0, 1, (8, 8, 3))
        split = enc.encode_to_dual_triplane(params, front_img, back_img)
        shared = enc.encode_to_dual_triplane(params, front_img, back_img,
                                             shared=True)
        assert shared.back.xy.shape == split.back.xy.shape
        expected = enc.lift_to_triplane(params, enc.encode_front(params, back_img))
        np.testing.assert_array_equal(shared.back.xy.data, expected.xy.data)

    def test_dc_agreement_of_shared_linear_parts(self, params, rng):
        """With the pooled stream zeroed and identical kernels, both paths
        give the same response to a DC (constant) image."""
        params.front_conv2.w.data[:] = 0.0
        params.front_conv2.b.data[:] = 0.0
        params.back_mid.w.data[:] = 0.0
        params.back_mid.b.data[:] = 0.0
        params.back_hr.w.data[:] = params.front_conv1.w.data
        params.back_hr.b.data[:] = params.front_conv1.b.data
        dc = np.full((8, 8, 3), 0.42)
        front = enc.encode_front(params, dc).data
        back = enc.encode_back(params, dc).data
        np.testing.assert_allclose(front, back, atol=1e-12)

    def test_end_to_end_gradients(self, rng):
        """encode -> lift -> sample -> render against finite differences."""
        from dualplane.fusion import create_fusion_params
        from dualplane.geometry import Camera
        from dualplane.render import create_decoder_params, render_view
        from dualplane.triplane import DualTriPlane

        params = enc.create_encoder_params(grid_resolution=4, channels=3,
                                           plane_channels=2, rng=rng)
        fusion = create_fusion_params(feature_channels=2, rng=rng)
        dec = create_decoder_params(rng=rng)
        front_img = rng.uniform(0, 1, (4, 4, 3))
        back_img = rng.uniform(0, 1, (4, 4, 3))
        cam = Camera("orthographic", 0.0, 0.0, resolution=3)

        def objective():
            dtp = enc.encode_to_dual_triplane(params, front_img, back_img)
            out = render_view(cam, dtp, fusion, dec, samples_per_ray=3, seed=4)
            return ad.add(ad.reduce_mean(out.rgb), ad.reduce_mean(out.mask))

        named = enc.encoder_tensors(params)
        assert ad.grad_check(objective, named, eps=1e-5) < 1e-3

    def test_checkpoint_round_trip(self, params, rng):
        named = enc.encoder_tensors(params)
        assert all(k.startswith(("enc.front.", "enc.back.", "enc.lift")) for k in named)
        rebuilt = enc.load_encoder_tensors(
            {k: v.data for k, v in named.items()},
            grid_resolution=8, plane_channels=2, plane_extent=1.5)
        np.testing.assert_array_equal(rebuilt.back_mid.w.data,
                                      params.back_mid.w.data)
