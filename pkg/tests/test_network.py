"""Layer graph, weight I/O, forward/backward, rescaling."""

import numpy as np
import pytest

from gramtex.errors import (
    DeadFilterError,
    DimensionError,
    ParseError,
    UsageError,
    ValidationError,
)
from gramtex.gradcheck import central_diff, max_relative_error, tiny_spec
from gramtex.network import (
    CONV,
    POOL,
    LayerSpec,
    Network,
    NetworkSpec,
    backward_to_pixels,
    build_vgg19_spec,
    forward,
    load_weights,
    measure_mean_activations,
    random_init,
    rescale_weights,
    save_weights,
)
from gramtex.tensor import ConvWeights


# ---------------------------------------------------------------------------
# Independent oracle: convolution + relu + pooling as bare Python loops.
# Used to cross-check the rescaling measurement without touching the kernels
# under test.

def naive_conv_relu(x, kernel, bias):
    cin, h, w = x.shape
    cout = kernel.shape[0]
    padded = np.zeros((cin, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = x
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for y in range(h):
            for xx in range(w):
                acc = bias[o]
                for c in range(cin):
                    for dy in range(3):
                        for dx in range(3):
                            acc += kernel[o, c, dy, dx] * padded[c, y + dy, xx + dx]
                out[o, y, xx] = max(acc, 0.0)
    return out


def naive_avg_pool(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for y in range(h // 2):
            for xx in range(w // 2):
                out[ch, y, xx] = x[ch, 2 * y:2 * y + 2, 2 * xx:2 * xx + 2].mean()
    return out


class TestSpecs:
    def test_vgg19_layer_counts(self):
        spec = build_vgg19_spec()
        assert len(spec.layers) == 21
        assert len(spec.conv_layers()) == 16
        assert sum(1 for l in spec.layers if l.kind == POOL) == 5

    def test_vgg19_channel_widths(self):
        spec = build_vgg19_spec()
        assert spec.layer("conv1_1").out_channels == 64
        assert spec.layer("conv2_1").out_channels == 128
        assert spec.layer("conv3_1").out_channels == 256
        assert spec.layer("conv4_1").out_channels == 512
        assert spec.layer("conv5_4").out_channels == 512

    def test_vgg19_pool_preserves_channels(self):
        spec = build_vgg19_spec()
        pool1 = spec.layer("pool1")
        assert pool1.in_channels == pool1.out_channels == 64

    def test_vgg19_names_in_order(self):
        spec = build_vgg19_spec()
        names = [l.name for l in spec.layers]
        assert names[:3] == ["conv1_1", "conv1_2", "pool1"]
        assert names[-1] == "pool5"

    def test_channel_chain_validated(self):
        with pytest.raises(ValidationError):
            NetworkSpec((
                LayerSpec("a", CONV, 3, 8),
                LayerSpec("b", CONV, 4, 8),
            ))

    def test_first_layer_must_read_rgb(self):
        with pytest.raises(ValidationError):
            NetworkSpec((LayerSpec("a", CONV, 4, 8),))

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValidationError):
            NetworkSpec((
                LayerSpec("a", CONV, 3, 8),
                LayerSpec("a", CONV, 8, 8),
            ))

    def test_unknown_layer_lookup(self):
        with pytest.raises(ValidationError):
            build_vgg19_spec().index_of("conv9_9")

    def test_required_divisor(self):
        spec = build_vgg19_spec()
        assert spec.required_divisor("conv1_1") == 1
        assert spec.required_divisor("pool4") == 16
        assert spec.required_divisor("conv5_4") == 16
        assert spec.required_divisor("pool5") == 32


class TestWeightFiles:
    def test_round_trip_identity_at_stored_precision(self, tmp_path, tiny_network):
        path = tmp_path / "w.cnnw"
        save_weights(tiny_network, path)
        once = load_weights(path, tiny_spec())
        path2 = tmp_path / "w2.cnnw"
        save_weights(once, path2)
        twice = load_weights(path2, tiny_spec())
        for name in ("conv1", "conv2"):
            assert np.array_equal(once.weights[name].kernel, twice.weights[name].kernel)
            assert np.array_equal(once.weights[name].bias, twice.weights[name].bias)
        assert path.read_bytes()[8:] == path2.read_bytes()[8:]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cnnw"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ParseError, match="bad magic"):
            load_weights(path, tiny_spec())

    def test_dim_mismatch_names_layer(self, tmp_path, tiny_network):
        path = tmp_path / "w.cnnw"
        save_weights(tiny_network, path)
        wrong = NetworkSpec((
            LayerSpec("conv1", CONV, 3, 8),
            LayerSpec("conv2", CONV, 8, 12),
            LayerSpec("pool1", POOL, 12, 12),
        ))
        with pytest.raises(ParseError, match="conv2"):
            load_weights(path, wrong)

    def test_truncated_file(self, tmp_path, tiny_network):
        path = tmp_path / "w.cnnw"
        save_weights(tiny_network, path)
        clipped = tmp_path / "clipped.cnnw"
        clipped.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ParseError, match="truncated"):
            load_weights(clipped, tiny_spec())

    def test_trailing_bytes(self, tmp_path, tiny_network):
        path = tmp_path / "w.cnnw"
        save_weights(tiny_network, path)
        padded = tmp_path / "padded.cnnw"
        padded.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(ParseError, match="trailing"):
            load_weights(padded, tiny_spec())

    def test_vgg19_file_has_16_blocks_in_spec_order(self, tmp_path):
        import struct

        spec = build_vgg19_spec()
        net = random_init(spec, seed=1, scale=0.01)
        path = tmp_path / "vgg.cnnw"
        save_weights(net, path)
        blob = path.read_bytes()
        assert blob[:8] == b"CNNW0001"
        (count,) = struct.unpack_from("<I", blob, 8)
        assert count == 16
        offset = 12
        for layer in spec.conv_layers():
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            assert blob[offset:offset + name_len].decode() == layer.name
            offset += name_len
            out_ch, in_ch = struct.unpack_from("<II", blob, offset)
            assert (out_ch, in_ch) == (layer.out_channels, layer.in_channels)
            offset += 8 + 4 * (out_ch * in_ch * 9 + out_ch)
        assert offset == len(blob)


class TestForward:
    def test_zero_image_zero_bias_gives_zero(self):
        net = random_init(tiny_spec(), seed=0, scale=0.1)  # biases are zero
        acts = forward(net, np.zeros((3, 8, 8)), "pool1")
        for name in ("conv1", "conv2", "pool1"):
            assert np.array_equal(acts.outputs[name], np.zeros_like(acts.outputs[name]))

    def test_pool4_shape_on_64x64(self):
        net = random_init(build_vgg19_spec(), seed=0, scale=0.05)
        rng = np.random.Generator(np.random.PCG64(1))
        acts = forward(net, rng.normal(size=(3, 64, 64)), "pool4")
        assert acts.outputs["pool4"].shape == (512, 4, 4)

    def test_deterministic(self, tiny_network, rng):
        x = rng.normal(size=(3, 8, 8))
        a = forward(tiny_network, x, "pool1")
        b = forward(tiny_network, x, "pool1")
        for name in a.outputs:
            assert np.array_equal(a.outputs[name], b.outputs[name])

    def test_unknown_layer(self, tiny_network):
        with pytest.raises(ValidationError):
            forward(tiny_network, np.zeros((3, 8, 8)), "conv7")

    def test_indivisible_dims_rejected_before_compute(self, tiny_network):
        with pytest.raises(ValidationError, match="divisible"):
            forward(tiny_network, np.zeros((3, 7, 8)), "pool1")

    def test_captures_exactly_requested_prefix(self, tiny_network, rng):
        acts = forward(tiny_network, rng.normal(size=(3, 8, 8)), "conv2")
        assert set(acts.outputs) == {"conv1", "conv2"}


class TestBackwardToPixels:
    def test_zero_injection_gives_zero_gradient(self, tiny_network, rng):
        x = rng.normal(size=(3, 8, 8))
        acts = forward(tiny_network, x, "pool1")
        grad = backward_to_pixels(
            tiny_network, acts, {"pool1": np.zeros_like(acts.outputs["pool1"])}
        )
        assert np.array_equal(grad, np.zeros((3, 8, 8)))

    @pytest.mark.parametrize("seed", range(5))
    def test_single_injection_matches_finite_differences(self, seed, tiny_network):
        rng = np.random.Generator(np.random.PCG64(seed))
        x = rng.normal(size=(3, 8, 8))
        probe = rng.normal(size=(8, 8, 8))

        def functional(img):
            acts = forward(tiny_network, img, "conv1")
            return 0.5 * float(np.sum(probe * acts.outputs["conv1"] ** 2))

        acts = forward(tiny_network, x, "conv1")
        analytic = backward_to_pixels(
            tiny_network, acts, {"conv1": probe * acts.outputs["conv1"]}
        )
        idx = rng.choice(x.size, size=50, replace=False)
        numeric = central_diff(functional, x, idx, eps=1e-6)
        assert max_relative_error(analytic.ravel()[idx], numeric) < 1e-5

    def test_two_injections_sum_linearly(self, tiny_network, rng):
        x = rng.normal(size=(3, 8, 8))
        acts = forward(tiny_network, x, "pool1")
        g1 = rng.normal(size=acts.outputs["conv1"].shape)
        g2 = rng.normal(size=acts.outputs["pool1"].shape)
        combined = backward_to_pixels(tiny_network, acts, {"conv1": g1, "pool1": g2})
        separate = backward_to_pixels(tiny_network, acts, {"conv1": g1}) + \
            backward_to_pixels(tiny_network, acts, {"pool1": g2})
        assert max_relative_error(combined.ravel(), separate.ravel()) < 1e-12

    def test_unknown_injection_layer(self, tiny_network, rng):
        acts = forward(tiny_network, rng.normal(size=(3, 8, 8)), "conv1")
        with pytest.raises(UsageError):
            backward_to_pixels(tiny_network, acts, {"conv2": np.zeros((16, 8, 8))})

    def test_injection_shape_checked(self, tiny_network, rng):
        acts = forward(tiny_network, rng.normal(size=(3, 8, 8)), "conv1")
        with pytest.raises(DimensionError):
            backward_to_pixels(tiny_network, acts, {"conv1": np.zeros((8, 4, 4))})


class TestRandomInit:
    def test_same_seed_identical(self):
        a = random_init(tiny_spec(), seed=9)
        b = random_init(tiny_spec(), seed=9)
        for name in a.weights:
            assert np.array_equal(a.weights[name].kernel, b.weights[name].kernel)

    def test_different_seeds_differ(self):
        a = random_init(tiny_spec(), seed=1)
        b = random_init(tiny_spec(), seed=2)
        assert not np.array_equal(a.weights["conv1"].kernel, b.weights["conv1"].kernel)

    def test_biases_zero(self):
        net = random_init(tiny_spec(), seed=0)
        assert np.array_equal(net.weights["conv1"].bias, np.zeros(8))

    def test_scale_validated(self):
        with pytest.raises(ValidationError):
            random_init(tiny_spec(), seed=0, scale=0.0)


@pytest.fixture(scope="module")
def calibration_images():
    rng = np.random.Generator(np.random.PCG64(17))
    return [rng.uniform(-1.5, 1.5, size=(3, 8, 8)) for _ in range(10)]


class TestRescale:
    def test_measured_means_match_naive_oracle(self, calibration_images):
        # Toy 2-layer check: the first layer's scale factors equal the means
        # computed by an independent loop-based forward pass.
        net = random_init(tiny_spec(), seed=3, scale=0.5)
        w1 = net.weights["conv1"]
        sums = np.zeros(8)
        count = 0
        for img in calibration_images[:3]:
            out = naive_conv_relu(img, w1.kernel, w1.bias)
            sums += out.reshape(8, -1).sum(axis=1)
            count += out.shape[1] * out.shape[2]
        expected_a1 = sums / count
        rescaled = rescale_weights(net, calibration_images[:3])
        factors = w1.kernel[:, 0, 0, 0] / rescaled.weights["conv1"].kernel[:, 0, 0, 0]
        assert max_relative_error(factors, expected_a1) < 1e-10

    def test_post_condition_unit_means(self, calibration_images):
        net = random_init(tiny_spec(), seed=3, scale=0.5)
        rescaled = rescale_weights(net, calibration_images)
        means = measure_mean_activations(rescaled, calibration_images)
        for name, m in means.items():
            assert np.max(np.abs(m - 1.0)) < 1e-6, name

    def test_fixed_point(self, calibration_images):
        # A second rescale of an already-unit-mean network changes nothing.
        net = random_init(tiny_spec(), seed=3, scale=0.5)
        once = rescale_weights(net, calibration_images)
        twice = rescale_weights(once, calibration_images)
        for name in once.weights:
            assert max_relative_error(
                once.weights[name].kernel.ravel(), twice.weights[name].kernel.ravel()
            ) < 1e-12

    def test_compensation_preserves_downstream(self, calibration_images, rng):
        # Scaling layer 1's filters and compensating layer 2 leaves layer-2
        # outputs unchanged (positive homogeneity of the rectifier).
        net = random_init(tiny_spec(), seed=3, scale=0.5)
        scales = rng.uniform(0.5, 2.0, size=8)
        w1, w2 = net.weights["conv1"], net.weights["conv2"]
        hacked = Network(net.spec, {
            "conv1": ConvWeights(w1.kernel / scales[:, None, None, None], w1.bias / scales),
            "conv2": ConvWeights(w2.kernel * scales[None, :, None, None], w2.bias),
        })
        for img in calibration_images[:3]:
            a = forward(net, img, "pool1")
            b = forward(hacked, img, "pool1")
            assert max_relative_error(
                a.outputs["conv2"].ravel(), b.outputs["conv2"].ravel()
            ) < 1e-10
            assert max_relative_error(
                a.outputs["pool1"].ravel(), b.outputs["pool1"].ravel()
            ) < 1e-10

    def test_rescale_preserves_downstream_of_each_layer(self, calibration_images):
        # Full rescale only divides each layer's own outputs; everything above
        # is reproduced after compensation, so conv2's rescaled outputs are
        # conv2's originals divided by conv2's own factors.
        net = random_init(tiny_spec(), seed=3, scale=0.5)
        rescaled = rescale_weights(net, calibration_images)
        a2 = measure_mean_activations(net, calibration_images)["conv2"]
        img = calibration_images[0]
        before = forward(net, img, "conv2").outputs["conv2"]
        after = forward(rescaled, img, "conv2").outputs["conv2"]
        assert max_relative_error(
            after.ravel(), (before / a2[:, None, None]).ravel()
        ) < 1e-10

    def test_dead_filter_reported(self, calibration_images):
        net = random_init(tiny_spec(), seed=3, scale=0.5)
        w1 = net.weights["conv1"]
        kernel = w1.kernel.copy()
        bias = w1.bias.copy()
        kernel[2] = 0.0
        bias[2] = -1.0  # filter 2 never activates
        dead_net = Network(net.spec, {**net.weights, "conv1": ConvWeights(kernel, bias)})
        with pytest.raises(DeadFilterError, match=r"conv1\[2\]"):
            rescale_weights(dead_net, calibration_images)

    def test_empty_calibration_rejected(self, tiny_network):
        with pytest.raises(ValidationError):
            rescale_weights(tiny_network, [])


class TestNetworkValidation:
    def test_missing_weights(self):
        with pytest.raises(ValidationError, match="conv2"):
            Network(tiny_spec(), {
                "conv1": ConvWeights(np.zeros((8, 3, 3, 3)), np.zeros(8)),
            })

    def test_wrong_dims_name_layer(self):
        with pytest.raises(DimensionError, match="conv1"):
            Network(tiny_spec(), {
                "conv1": ConvWeights(np.zeros((4, 3, 3, 3)), np.zeros(4)),
                "conv2": ConvWeights(np.zeros((16, 8, 3, 3)), np.zeros(16)),
            })
