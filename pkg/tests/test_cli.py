"""CLI surface: exit codes, determinism, file outputs."""

import numpy as np
import pytest

from gramtex.cli import main
from gramtex.gram import load_descriptor
from gramtex.imageio import load_ppm
from gramtex.samples import sample_texture_path


@pytest.fixture(scope="module")
def texture(tmp_path_factory):
    # the bundled 64x64 fixture, copied next to the test outputs
    src = sample_texture_path().read_bytes()
    path = tmp_path_factory.mktemp("fixture") / "texture.ppm"
    path.write_bytes(src)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestCountParams:
    def test_all_layers_to_pool4(self, capsys):
        assert run("count-params", "--up-to", "pool4", "--statistic", "gram") == 0
        assert capsys.readouterr().out.strip() == "852128"

    def test_one_layer_per_scale(self, capsys):
        assert run("count-params", "--layers", "conv1_1,pool1,pool2,pool3,pool4",
                   "--statistic", "gram") == 0
        assert capsys.readouterr().out.strip() == "176640"

    def test_pca64(self, capsys):
        assert run("count-params", "--layers", "conv1_1,pool1,pool2,pool3,pool4",
                   "--statistic", "pca:64") == 0
        assert capsys.readouterr().out.strip() == "10400"

    def test_mean(self, capsys):
        assert run("count-params", "--layers", "conv1_1,pool1,pool2,pool3,pool4",
                   "--statistic", "mean") == 0
        assert capsys.readouterr().out.strip() == "1024"

    def test_unknown_layer_exits_1(self, capsys):
        assert run("count-params", "--layers", "conv9_9") == 1
        assert "conv9_9" in capsys.readouterr().err


class TestDescribe:
    def test_conv1_1_gram_is_64x64(self, texture, tmp_path, capsys):
        out = tmp_path / "d.grmd"
        assert run("describe", texture, "--init-weights", "random",
                   "--layers", "conv1_1", "--out", out) == 0
        stdout = capsys.readouterr().out
        assert "conv1_1: gram 64x64" in stdout
        desc = load_descriptor(out)
        assert desc.entries[0].values.shape == (64, 64)

    def test_mean_statistic_prints_1024_parameters(self, texture, tmp_path, capsys):
        out = tmp_path / "d.grmd"
        assert run("describe", texture, "--init-weights", "random",
                   "--layers", "conv1_1,pool1,pool2,pool3,pool4",
                   "--statistic", "mean", "--out", out) == 0
        assert "1024 parameters" in capsys.readouterr().out

    def test_missing_weights_file_exits_1_naming_path(self, texture, tmp_path, capsys):
        out = tmp_path / "d.grmd"
        assert run("describe", texture, "--weights", "/nope/weights.cnnw",
                   "--layers", "conv1_1", "--out", out) == 1
        assert "/nope/weights.cnnw" in capsys.readouterr().err

    def test_missing_source_exits_1(self, tmp_path, capsys):
        assert run("describe", tmp_path / "absent.ppm", "--init-weights", "random",
                   "--layers", "conv1_1", "--out", tmp_path / "d.grmd") == 1
        assert "absent.ppm" in capsys.readouterr().err


class TestSynthesize:
    def test_same_invocation_twice_is_bitwise_identical(self, texture, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.ppm"
            trace = tmp_path / f"{name}.csv"
            assert run("synthesize", texture, "--init-weights", "random",
                       "--layers", "conv1_1", "--iters", "3", "--seed", "0",
                       "--out", out, "--trace", trace) == 0
            outs.append((out.read_bytes(), trace.read_bytes()))
        assert outs[0] == outs[1]

    def test_layer_sweep_lowest_and_pool4_both_complete(self, texture, tmp_path):
        for layers in ("conv1_1", "conv1_1,pool1,pool2,pool3,pool4"):
            out = tmp_path / "sweep.ppm"
            assert run("synthesize", texture, "--init-weights", "random",
                       "--layers", layers, "--iters", "2", "--out", out) == 0
            img = load_ppm(out)
            assert (img.height, img.width) == (64, 64)

    def test_random_weights_run_end_to_end(self, texture, tmp_path):
        # The random-filter network drives its own loss down fine; only the
        # perceptual quality collapses, which no machine check asserts.
        out = tmp_path / "rand.ppm"
        trace = tmp_path / "rand.csv"
        assert run("synthesize", texture, "--init-weights", "random", "--seed", "7",
                   "--layers", "conv1_1", "--iters", "10",
                   "--out", out, "--trace", trace) == 0
        rows = trace.read_text().splitlines()
        first = float(rows[1].split(",")[1])
        last = float(rows[-1].split(",")[1])
        assert last < first

    def test_from_descriptor_file(self, texture, tmp_path):
        desc = tmp_path / "t.grmd"
        assert run("describe", texture, "--init-weights", "random",
                   "--layers", "conv1_1", "--out", desc) == 0
        out = tmp_path / "from_desc.ppm"
        assert run("synthesize", desc, "--init-weights", "random",
                   "--layers", "conv1_1", "--iters", "2", "--out", out) == 0
        assert load_ppm(out).height == 64

    def test_trace_header_lists_layers(self, texture, tmp_path):
        out = tmp_path / "o.ppm"
        trace = tmp_path / "o.csv"
        assert run("synthesize", texture, "--init-weights", "random",
                   "--layers", "conv1_1,pool1", "--iters", "2",
                   "--out", out, "--trace", trace) == 0
        header = trace.read_text().splitlines()[0]
        assert header == "iter,total_loss,grad_supnorm,E_conv1_1,E_pool1"

    def test_abort_exits_2_with_partial_trace(self, tmp_path, capsys):
        import struct

        # A descriptor whose gram payload is NaN: the first loss evaluation
        # aborts the optimizer.
        path = tmp_path / "nan.grmd"
        n = 64
        blob = b"GRMD0001" + struct.pack("<I", 1)
        name = b"conv1_1"
        blob += struct.pack("<H", len(name)) + name
        blob += struct.pack("<BII", 0, n, 64 * 64)
        blob += np.full(n * (n + 1) // 2, np.nan).astype("<f8").tobytes()
        path.write_bytes(blob)
        out = tmp_path / "x.ppm"
        trace = tmp_path / "x.csv"
        code = run("synthesize", path, "--init-weights", "random",
                   "--layers", "conv1_1", "--iters", "2",
                   "--out", out, "--trace", trace)
        assert code == 2
        assert "abort" in capsys.readouterr().err
        assert trace.exists()

    def test_indivisible_dims_exit_1_with_required_divisor(self, tmp_path, capsys):
        from gramtex.imageio import Image8, save_ppm

        img = Image8(30, 30, np.zeros((30, 30, 3), dtype=np.uint8))
        src = tmp_path / "odd.ppm"
        save_ppm(img, src)
        assert run("synthesize", src, "--init-weights", "random",
                   "--up-to", "pool4", "--iters", "1",
                   "--out", tmp_path / "x.ppm") == 1
        assert "divisible by 16" in capsys.readouterr().err


class TestWeightCommands:
    @staticmethod
    def _write_calib(tmp_path, count=3, size=16):
        from gramtex.imageio import Image8, save_ppm

        calib = tmp_path / "calib"
        calib.mkdir()
        rng = np.random.Generator(np.random.PCG64(2))
        for i in range(count):
            pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            save_ppm(Image8(size, size, pixels), calib / f"{i}.ppm")
        return calib

    def test_save_load_through_cli_rescale(self, tmp_path):
        from gramtex.network import (
            Network, build_vgg19_spec, load_weights, random_init, save_weights,
        )
        from gramtex.tensor import ConvWeights

        # All-positive kernels keep every filter alive at any depth: inputs
        # above layer one are nonnegative, so each filter responds somewhere.
        spec = build_vgg19_spec()
        base = random_init(spec, seed=1, scale=0.05)
        alive = Network(spec, {
            name: ConvWeights(np.abs(w.kernel), w.bias)
            for name, w in base.weights.items()
        })
        weights_in = tmp_path / "in.cnnw"
        save_weights(alive, weights_in)
        calib = self._write_calib(tmp_path)
        weights_out = tmp_path / "out.cnnw"
        assert run("rescale-weights", weights_in, calib, weights_out) == 0
        load_weights(weights_out, build_vgg19_spec())

    def test_dead_filters_reported_with_exit_1(self, tmp_path, capsys):
        from gramtex.network import build_vgg19_spec, random_init, save_weights

        # Plain random weights with zero biases leave some deep filters
        # silent on a small calibration set; the CLI must name them.
        weights_in = tmp_path / "in.cnnw"
        save_weights(random_init(build_vgg19_spec(), seed=1, scale=0.05), weights_in)
        calib = self._write_calib(tmp_path)
        assert run("rescale-weights", weights_in, calib, tmp_path / "out.cnnw") == 1
        assert "mean activation" in capsys.readouterr().err

    def test_rescale_empty_dir_exits_1(self, tmp_path, capsys):
        from gramtex.network import build_vgg19_spec, random_init, save_weights

        weights_in = tmp_path / "in.cnnw"
        save_weights(random_init(build_vgg19_spec(), seed=1, scale=0.05), weights_in)
        empty = tmp_path / "none"
        empty.mkdir()
        assert run("rescale-weights", weights_in, empty, tmp_path / "out.cnnw") == 1
        assert "no .ppm images" in capsys.readouterr().err


class TestPcaFitAndExport:
    def test_pca_fit_writes_consumable_descriptor(self, texture, tmp_path):
        desc = tmp_path / "pca.grmd"
        assert run("pca-fit", texture, "--init-weights", "random",
                   "--layers", "conv1_1", "--k", "8", "--out", desc) == 0
        loaded = load_descriptor(desc)
        assert loaded.entries[0].kind == "pca"
        assert loaded.entries[0].values.shape == (8, 8)
        out = tmp_path / "o.ppm"
        assert run("synthesize", desc, "--init-weights", "random",
                   "--statistic", "pca:8", "--layers", "conv1_1",
                   "--iters", "2", "--out", out) == 0

    def test_export_features_length(self, texture, tmp_path, capsys):
        desc = tmp_path / "d.grmd"
        run("describe", texture, "--init-weights", "random",
            "--layers", "conv1_1", "--out", desc)
        capsys.readouterr()
        vec = tmp_path / "v.f64"
        assert run("export-features", desc, "--out", vec) == 0
        n = 64 * 65 // 2
        assert f"wrote {n} values" in capsys.readouterr().out
        data = np.frombuffer(vec.read_bytes(), dtype="<f8")
        assert data.size == n
        expected = load_descriptor(desc).entries[0].values[np.triu_indices(64)]
        assert np.array_equal(data, expected)


class TestGradcheckCommand:
    def test_exit_zero_and_reports_each_check(self, capsys):
        assert run("gradcheck", "--seed", "0") == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5
        assert "FAIL" not in out


class TestHelp:
    def test_help_lists_every_shared_flag_with_defaults(self, capsys):
        with pytest.raises(SystemExit) as e:
            run("synthesize", "--help")
        assert e.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--weights", "--pooling", "--statistic", "--layers", "--up-to",
                     "--seed", "--iters", "--out", "--trace", "--threads",
                     "--init-weights"):
            assert flag in text
        assert "default: gram" in text
        assert "default: avg" in text
        assert "default: 1000" in text

    def test_threads_flag_does_not_change_results(self, texture, tmp_path):
        outs = []
        for threads in (None, 1):
            out = tmp_path / f"t{threads}.grmd"
            argv = ["describe", texture, "--init-weights", "random",
                    "--layers", "conv1_1", "--out", out]
            if threads:
                argv += ["--threads", threads]
            assert run(*argv) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
