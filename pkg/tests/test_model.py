import math

import numpy as np
import pytest

from conftest import random_params, tiny_arch
from eris.linalg import Rng
from eris.model import (
    ArchConfig,
    consistency_error,
    discriminate_domain,
    encode,
    energy_domain,
    energy_label,
    energy_scores,
    estimate_cost,
    init_params,
    load_params,
    predict,
    proto_sq_dists,
    save_params,
    tensor_shapes,
    variance_head,
)


class TestArchConfig:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            tiny_arch(kernel_size=4)

    def test_projection_wider_than_encoding_rejected(self):
        with pytest.raises(ValueError):
            tiny_arch(encoding_dim=4, projection_dim=5)


class TestInitParams:
    def test_deterministic(self):
        arch = tiny_arch()
        a = init_params(arch, Rng(4))
        b = init_params(arch, Rng(4))
        for name in a.names():
            assert np.array_equal(a[name], b[name])

    def test_shapes_match_arch(self):
        arch = ArchConfig(channels_per_layer=(16, 16), kernel_size=5, in_channels=9,
                          encoding_dim=64, projection_dim=32, mlp_hidden=64,
                          n_classes=6, n_domains=5)
        params = init_params(arch, Rng(0))
        for name, shape in tensor_shapes(arch).items():
            assert params[name].shape == shape

    def test_weight_stddev_near_005(self):
        arch = ArchConfig(channels_per_layer=(16, 16), kernel_size=5, in_channels=9,
                          encoding_dim=64, projection_dim=32, mlp_hidden=64,
                          n_classes=6, n_domains=5)
        params = init_params(arch, Rng(1))
        weights = np.concatenate([params[n].reshape(-1) for n in params.names()
                                  if not n.endswith("_b") and n != "protos"])
        assert weights.size >= 10_000
        assert abs(weights.std() - 0.05) < 0.2 * 0.05

    def test_biases_and_prototypes_zero(self):
        params = init_params(tiny_arch(), Rng(2))
        assert np.all(params["dom_b1"] == 0)
        assert np.all(params["protos"] == 0)


class TestEncode:
    def test_output_shape(self):
        arch = ArchConfig(channels_per_layer=(16, 16), kernel_size=5, in_channels=9,
                          encoding_dim=64, projection_dim=32, mlp_hidden=64,
                          n_classes=6, n_domains=5)
        params = init_params(arch, Rng(0))
        out = encode(params, Rng(1).normal_array((2, 9, 128), 1.0))
        assert out.shape == (2, 64)
        assert np.all(np.isfinite(out))

    def test_zero_input_zero_biases_gives_zero(self):
        params = init_params(tiny_arch(), Rng(0))
        out = encode(params, np.zeros((3, 2, 8)))
        assert np.array_equal(out, np.zeros((3, 4)))

    def test_batch_permutation_equivariance(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(5))
        x = Rng(6).normal_array((5, 2, 8), 1.0)
        perm = np.array([3, 0, 4, 1, 2])
        assert np.allclose(encode(params, x)[perm], encode(params, x[perm]))

    def test_channel_mismatch_error(self):
        params = init_params(tiny_arch(), Rng(0))
        with pytest.raises(ValueError):
            encode(params, np.zeros((1, 5, 8)))


def straight_line_branch(f0, w_proj, w1, b1, w2, b2, w3, b3):
    """Independent elementwise recomputation of a projected energy branch."""
    z = np.array([sum(f0[i] * w_proj[i, j] for i in range(len(f0)))
                  for j in range(w_proj.shape[1])])
    h1 = np.array([max(0.0, sum(z[i] * w1[i, j] for i in range(len(z))) + b1[j])
                   for j in range(w1.shape[1])])
    h2 = np.array([max(0.0, sum(h1[i] * w2[i, j] for i in range(len(h1))) + b2[j])
                   for j in range(w2.shape[1])])
    return np.array([sum(h2[i] * w3[i, j] for i in range(len(h2))) + b3[j]
                     for j in range(w3.shape[1])])


class TestEnergyHeads:
    def test_shapes_and_finite(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(7))
        f0 = Rng(8).normal_vector(4)
        e_d = energy_domain(params, f0)
        e_y = energy_label(params, f0)
        assert e_d.shape == (3,) and np.all(np.isfinite(e_d))
        assert e_y.shape == (3,) and np.all(np.isfinite(e_y))

    def test_zero_weights_give_bias(self):
        params = init_params(tiny_arch(), Rng(0))
        for name in ("dom_w1", "dom_w2", "dom_w3"):
            params[name] = np.zeros_like(params[name])
        # projections stay random; zero MLP weights already force bias output
        params["dom_b3"] = np.array([0.5, -0.25, 1.0])
        assert np.allclose(energy_domain(params, Rng(1).normal_vector(4)),
                           [0.5, -0.25, 1.0])

    def test_matches_straight_line_oracle(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(9))
        f0 = Rng(10).normal_vector(4)
        expect_d = straight_line_branch(f0, params["w_d"], params["dom_w1"], params["dom_b1"],
                                        params["dom_w2"], params["dom_b2"],
                                        params["dom_w3"], params["dom_b3"])
        expect_y = straight_line_branch(f0, params["w_l"], params["lab_w1"], params["lab_b1"],
                                        params["lab_w2"], params["lab_b2"],
                                        params["lab_w3"], params["lab_b3"])
        assert np.allclose(energy_domain(params, f0), expect_d, rtol=1e-12)
        assert np.allclose(energy_label(params, f0), expect_y, rtol=1e-12)


class TestConsistencyError:
    def test_zero_case(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(11))
        # force E_y = 0 and prototype 0 equal to f0
        for name in ("lab_w3",):
            params[name] = np.zeros_like(params[name])
        params["lab_b3"] = np.zeros_like(params["lab_b3"])
        f0 = Rng(12).normal_vector(4)
        protos = params["protos"].copy()
        protos[0] = f0
        params["protos"] = protos
        assert consistency_error(params, f0)[0] == pytest.approx(0.0, abs=1e-12)

    def test_additive_in_energy(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(13))
        f0 = Rng(14).normal_vector(4)
        base = consistency_error(params, f0)
        params["lab_b3"] = params["lab_b3"] + 0.75
        assert np.allclose(consistency_error(params, f0), base + 0.75)

    def test_hand_case(self):
        # b=2: F0=(1,0), P0=(0,0), E_y[0]=0.5 -> C_y[0] = 0.5 + 1 = 1.5
        arch = tiny_arch(encoding_dim=2, projection_dim=2)
        params = init_params(arch, Rng(0))
        params["lab_w3"] = np.zeros_like(params["lab_w3"])
        params["lab_b3"] = np.array([0.5, 0.0, 0.0])
        c = consistency_error(params, np.array([1.0, 0.0]))
        assert c[0] == pytest.approx(1.5)

    def test_energy_scores_invariant(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(15))
        f0 = Rng(16).normal_vector(4)
        s = energy_scores(params, f0)
        d2 = proto_sq_dists(params, f0[None, :])[0]
        assert np.allclose(s.c_y, s.e_y + d2)


class TestPredict:
    def test_hand_softmax(self):
        arch = tiny_arch(n_classes=2)
        params = init_params(arch, Rng(0))
        # zero label branch, prototypes chosen so C_y = dist2 = [0.1, 2.0]
        params["lab_w3"] = np.zeros_like(params["lab_w3"])
        protos = params["protos"].copy()
        f0 = np.zeros(4)
        protos[0] = np.array([math.sqrt(0.1), 0, 0, 0])
        protos[1] = np.array([math.sqrt(2.0), 0, 0, 0])
        params["protos"] = protos
        klass, conf, probs = predict(params, f0)
        expected = math.exp(-0.1) / (math.exp(-0.1) + math.exp(-2.0))
        assert klass == 0
        assert conf == pytest.approx(expected, abs=1e-12)
        assert conf == pytest.approx(0.8699, abs=5e-5)

    def test_uniform_when_all_equal(self):
        arch = tiny_arch()
        params = init_params(arch, Rng(0))
        params["lab_w3"] = np.zeros_like(params["lab_w3"])  # E_y = 0, protos all zero
        klass, conf, probs = predict(params, np.zeros(4))
        assert conf == pytest.approx(1.0 / 3.0)
        assert np.allclose(probs, 1.0 / 3.0)

    def test_shift_invariance(self):
        arch = tiny_arch()
        params = random_params(arch, Rng(17))
        f0 = Rng(18).normal_vector(4)
        k1, c1, p1 = predict(params, f0)
        params["lab_b3"] = params["lab_b3"] + 3.25  # shifts every C_y entry
        k2, c2, p2 = predict(params, f0)
        assert k1 == k2
        assert np.allclose(p1, p2)


class TestVarianceHead:
    def test_zero_weights_give_ones(self):
        params = init_params(tiny_arch(), Rng(0))
        params["var_w"] = np.zeros_like(params["var_w"])
        assert np.allclose(variance_head(params, Rng(1).normal_vector(4)), 1.0)

    def test_strictly_positive(self):
        params = random_params(tiny_arch(), Rng(19))
        for _ in range(10):
            assert np.all(variance_head(params, Rng(20).normal_vector(4)) > 0)

    def test_hand_two_domain_case(self):
        arch = tiny_arch(encoding_dim=2, projection_dim=2, n_domains=2)
        params = init_params(arch, Rng(0))
        params["w_d"] = np.eye(2)
        params["var_w"] = np.array([[1.0, 0.0], [0.0, 2.0]])
        params["var_b"] = np.array([0.1, -0.1])
        f0 = np.array([0.3, -0.2])
        expect = np.exp([0.3 * 1.0 + 0.1, -0.2 * 2.0 - 0.1])
        assert np.allclose(variance_head(params, f0), expect)


class TestDiscriminator:
    def test_length_and_zero_weights(self):
        params = init_params(tiny_arch(), Rng(0))
        params["disc_w2"] = np.zeros_like(params["disc_w2"])
        params["disc_b2"] = np.array([1.0, 2.0, 3.0])
        out = discriminate_domain(params, Rng(1).normal_vector(4))
        assert out.shape == (3,)
        assert np.allclose(out, [1.0, 2.0, 3.0])

    def test_matches_straight_line_oracle(self):
        params = random_params(tiny_arch(), Rng(21))
        f0 = Rng(22).normal_vector(4)
        g1 = np.maximum(0.0, f0 @ params["disc_w1"] + params["disc_b1"])
        expect = g1 @ params["disc_w2"] + params["disc_b2"]
        assert np.allclose(discriminate_domain(params, f0), expect, rtol=1e-12)


def count_macs_instrumented(arch: ArchConfig, length: int, rng: Rng) -> int:
    """Brute-force oracle: run the canonical forward pass with explicit loops,
    counting one MAC per multiply-accumulate actually performed."""
    macs = 0
    widths = arch.conv_widths
    pad = (arch.kernel_size - 1) // 2
    x = [[rng.uniform(-1, 1) for _ in range(length)] for _ in range(widths[0])]
    for l in range(arch.n_conv_layers):
        c_in, c_out = widths[l], widths[l + 1]
        w = [[[rng.uniform(-1, 1) for _ in range(arch.kernel_size)]
              for _ in range(c_in)] for _ in range(c_out)]
        out = [[0.0] * length for _ in range(c_out)]
        for o in range(c_out):
            for t in range(length):
                acc = 0.0
                for i in range(c_in):
                    for k in range(arch.kernel_size):
                        src = t + k - pad
                        val = x[i][src] if 0 <= src < length else 0.0
                        acc += w[o][i][k] * val
                        macs += 1
                out[o][t] = max(0.0, acc)
        x = out
    pooled = [sum(row) / length for row in x]  # encoding vector, width b
    assert len(pooled) == arch.encoding_dim

    def dense(vec, n_out):
        nonlocal macs
        out = []
        for j in range(n_out):
            acc = 0.0
            for v in vec:
                acc += v * rng.uniform(-1, 1)
                macs += 1
            out.append(acc)
        return out

    h1 = dense(pooled, arch.mlp_hidden)
    h2 = dense(h1, arch.mlp_hidden)
    dense(h2, arch.n_classes)
    dense(h2, arch.n_domains)
    return macs


class TestEstimateCost:
    def test_degenerate_conv_stack(self):
        arch = tiny_arch(channels_per_layer=())
        b, h = arch.encoding_dim, arch.mlp_hidden
        cost = estimate_cost(arch, 10)
        assert cost.time_macs == b * h + h * h + h * (arch.n_classes + arch.n_domains)

    def test_hand_conv_term(self):
        arch = ArchConfig(channels_per_layer=(4,), kernel_size=3, in_channels=2,
                          encoding_dim=4, projection_dim=2, mlp_hidden=4,
                          n_classes=2, n_domains=2)
        cost = estimate_cost(arch, 10)
        conv_term = 10 * 3 * 2 * 4
        assert conv_term == 240
        assert cost.time_macs == conv_term + 4 * 4 + 16 + 4 * 4

    def test_matches_instrumented_counter_on_random_archs(self):
        rng = Rng(33)
        for trial in range(5):
            in_channels = int(rng.integers(1, 4))
            n_layers = int(rng.integers(0, 3))
            chans = tuple(int(rng.integers(1, 4)) for _ in range(n_layers))
            b = chans[-1] if chans else in_channels  # pooling output is the encoding
            arch = ArchConfig(
                channels_per_layer=chans,
                kernel_size=2 * int(rng.integers(0, 2)) + 1,
                in_channels=in_channels,
                encoding_dim=b,
                projection_dim=min(2, b),
                mlp_hidden=int(rng.integers(2, 6)),
                n_classes=int(rng.integers(2, 5)),
                n_domains=int(rng.integers(2, 5)),
            )
            length = int(rng.integers(3, 9))
            assert estimate_cost(arch, length).time_macs == \
                count_macs_instrumented(arch, length, rng)

    def test_param_and_activation_counts(self):
        arch = ArchConfig(channels_per_layer=(4,), kernel_size=3, in_channels=2,
                          encoding_dim=4, projection_dim=2, mlp_hidden=4,
                          n_classes=2, n_domains=3)
        cost = estimate_cost(arch, 10)
        assert cost.param_count == 3 * 2 * 4 + 4 * 4 + 16 + 4 * (2 + 3)
        assert cost.activation_count == 10 * 2 + 4 + 2 * 2 + 2 * 3


class TestParamsSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        params = random_params(tiny_arch(), Rng(44))
        path = tmp_path / "params.bin"
        save_params(params, str(path))
        loaded = load_params(str(path))
        assert loaded.arch == params.arch
        for name in params.names():
            assert np.array_equal(loaded[name], params[name])

    def test_save_load_save_identical_bytes(self, tmp_path):
        params = random_params(tiny_arch(), Rng(45))
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_params(params, str(p1))
        save_params(load_params(str(p1)), str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_magic(self, tmp_path):
        params = init_params(tiny_arch(), Rng(0))
        path = tmp_path / "params.bin"
        save_params(params, str(path))
        assert path.read_bytes().startswith(b"ERIS-PARAMS,1,")

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"ERIS-PARAMS,9,0,1,1,,1,1,1,1,1\n")
        with pytest.raises(ValueError):
            load_params(str(path))
