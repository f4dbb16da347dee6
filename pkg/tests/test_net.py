"""Network tests: construction, Siamese forward, backward, checkpoints."""

import numpy as np
import pytest

from conftest import check_grad

from slimsiam import net as N
from slimsiam.errors import CheckpointError, ConfigError, VersionError


def rand_cube(rng, shape=(3, 16, 12)):
    return rng.normal(size=shape)


class TestBuildModel:
    def test_default_has_four_weighted_layers(self):
        m = N.build_model()
        weighted = m.weighted_layers()
        assert len(weighted) == 4
        shapes = [l.weights.shape for _, l in weighted]
        assert shapes == [(16, 3, 3, 3), (32, 16, 3, 3), (64, 32, 3, 3),
                          (64, 64)]

    def test_same_seed_identical(self):
        a = N.build_model(seed=5)
        b = N.build_model(seed=5)
        for (_, la), (_, lb) in zip(a.weighted_layers(), b.weighted_layers()):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)

    def test_different_seed_differs(self):
        a = N.build_model(seed=1)
        b = N.build_model(seed=2)
        assert not np.array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_embed_dim_contract(self):
        with pytest.raises(ConfigError):
            N.build_model(embed_dim=32)

    def test_bad_widths(self):
        with pytest.raises(ConfigError):
            N.build_model(widths=())
        with pytest.raises(ConfigError):
            N.build_model(widths=(16, 0))


class TestForward:
    def test_zero_weights_give_bias(self):
        m = N.build_model(widths=(4, 5), seed=0)
        for _, layer in m.weighted_layers():
            layer.weights[:] = 0.0
        bias = np.linspace(-1, 1, 64)
        m.layers[-1].bias = bias.copy()
        e = N.forward(m, np.random.default_rng(0).normal(size=(3, 16, 16)))
        assert np.array_equal(e, bias)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        m = N.build_model(widths=(4, 4), seed=3)
        x = rand_cube(rng)
        assert np.array_equal(N.forward(m, x), N.forward(m, x))

    def test_pair_shares_weights(self):
        rng = np.random.default_rng(2)
        m = N.build_model(widths=(4, 4), seed=4)
        x = rand_cube(rng)
        e1, e2 = N.forward_pair(m, x, x)
        assert np.array_equal(e1, e2)
        assert N.distance(e1, e2) == 0.0

    def test_pair_order_swap(self):
        rng = np.random.default_rng(3)
        m = N.build_model(widths=(4, 4), seed=5)
        x1, x2 = rand_cube(rng), rand_cube(rng)
        a1, a2 = N.forward_pair(m, x1, x2)
        b1, b2 = N.forward_pair(m, x2, x1)
        assert np.array_equal(a1, b2) and np.array_equal(a2, b1)

    def test_pair_matches_independent_forwards(self):
        rng = np.random.default_rng(4)
        m = N.build_model(widths=(4, 4), seed=6)
        x1, x2 = rand_cube(rng), rand_cube(rng)
        e1, e2 = N.forward_pair(m, x1, x2)
        assert np.array_equal(e1, N.forward(m, x1))
        assert np.array_equal(e2, N.forward(m, x2))


class TestDistance:
    def test_zero_for_identical(self):
        e = np.arange(64, dtype=np.float64)
        assert N.distance(e, e) == 0.0

    def test_unit_axes(self):
        e1 = np.zeros(64)
        e2 = np.zeros(64)
        e1[0] = 1.0
        e2[1] = 1.0
        assert N.distance(e1, e2) == pytest.approx(np.sqrt(2.0), rel=1e-15)

    def test_componentwise_oracle(self):
        rng = np.random.default_rng(5)
        e1, e2 = rng.normal(size=64), rng.normal(size=64)
        want = float(np.sqrt(sum((a - b) ** 2 for a, b in zip(e1, e2))))
        assert N.distance(e1, e2) == pytest.approx(want, rel=1e-12)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(6)
        m = N.build_model(widths=(4, 4), seed=7)
        x1, x2 = rand_cube(rng), rand_cube(rng)
        _, _, c1, c2 = N.forward_pair(m, x1, x2, with_cache=True)
        grads = N.backward(m, (c1, c2), np.zeros(64), np.zeros(64))
        for gw, gb in grads:
            assert not gw.any() and not gb.any()

    def test_symmetric_towers_contribute_half(self):
        rng = np.random.default_rng(7)
        m = N.build_model(widths=(4, 4), seed=8)
        x = rand_cube(rng)
        g = rng.normal(size=64)
        _, _, c1, c2 = N.forward_pair(m, x, x, with_cache=True)
        both = N.backward(m, (c1, c2), g, g)
        one = N.backward(m, (c1, c2), g, np.zeros(64))
        for (bw, bb), (ow, ob) in zip(both, one):
            assert np.array_equal(bw, 2.0 * ow)
            assert np.array_equal(bb, 2.0 * ob)

    @staticmethod
    def min_preactivation(m, xs):
        """Smallest |conv pre-activation| over the given inputs."""
        from slimsiam import tensor_ops as T
        mp = np.inf
        for x in xs:
            h = np.asarray(x)
            for layer in m.layers:
                if layer.kind == N.CONV:
                    h = T.conv2d_forward(h, layer.weights, layer.bias,
                                         stride=1, pad=1)
                    mp = min(mp, float(np.min(np.abs(h))))
                    h = T.relu_forward(h)
                elif layer.kind == N.AVGPOOL2:
                    h = T.avg_pool2_forward(h)
                elif layer.kind == N.GLOBAL_AVGPOOL:
                    h = T.global_avg_pool_forward(h)
                elif layer.kind == N.FC:
                    h = T.fc_forward(h, layer.weights, layer.bias)
        return mp

    def test_full_network_finite_differences(self):
        # Width-2 miniature of the default topology, embedding probed
        # with a fixed random vector so the loss is scalar. Seeds fixed
        # to cases whose relu pre-activations all sit further from zero
        # than a finite-difference step can reach.
        for seed in (0, 1, 3, 4, 6):
            rng = np.random.default_rng(600 + seed)
            m = N.build_model(widths=(2, 2, 2), seed=seed)
            x1 = rand_cube(rng)
            x2 = rand_cube(rng)
            probe1 = rng.normal(size=64)
            probe2 = rng.normal(size=64)
            assert self.min_preactivation(m, (x1, x2)) > 2e-4
            _, _, c1, c2 = N.forward_pair(m, x1, x2, with_cache=True)
            grads = N.backward(m, (c1, c2), probe1, probe2)

            def loss():
                e1, e2 = N.forward_pair(m, x1, x2)
                return float(e1 @ probe1 + e2 @ probe2)

            for (mi, layer), (gw, gb) in zip(m.weighted_layers(), grads):
                def loss_w(v, layer=layer):
                    old = layer.weights
                    layer.weights = v
                    try:
                        return loss()
                    finally:
                        layer.weights = old

                def loss_b(v, layer=layer):
                    old = layer.bias
                    layer.bias = v
                    try:
                        return loss()
                    finally:
                        layer.bias = old

                check_grad(loss_w, layer.weights, gw, rng, n_coords=20)
                check_grad(loss_b, layer.bias, gb, rng, n_coords=4)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        m = N.build_model(widths=(5, 7, 9), seed=11)
        p = tmp_path / "m.ssvw"
        N.save_checkpoint(m, p)
        back = N.load_checkpoint(p)
        assert len(back.layers) == len(m.layers)
        for (_, la), (_, lb) in zip(m.weighted_layers(),
                                    back.weighted_layers()):
            assert np.array_equal(la.weights, lb.weights)
            assert np.array_equal(la.bias, lb.bias)
        kinds = [l.kind for l in back.layers]
        assert kinds == [l.kind for l in m.layers]

    def test_roundtrip_preserves_forward(self, tmp_path):
        rng = np.random.default_rng(8)
        m = N.build_model(widths=(4, 6), seed=12)
        p = tmp_path / "m.ssvw"
        N.save_checkpoint(m, p)
        back = N.load_checkpoint(p)
        x = rand_cube(rng)
        assert np.array_equal(N.forward(m, x), N.forward(back, x))

    def test_truncated(self, tmp_path):
        m = N.build_model(widths=(4,), seed=13)
        p = tmp_path / "m.ssvw"
        N.save_checkpoint(m, p)
        p.write_bytes(p.read_bytes()[:-20])
        with pytest.raises(CheckpointError):
            N.load_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.ssvw"
        p.write_bytes(b"WXYZ" + bytes(64))
        with pytest.raises(CheckpointError):
            N.load_checkpoint(p)

    def test_bad_version(self, tmp_path):
        m = N.build_model(widths=(4,), seed=14)
        p = tmp_path / "m.ssvw"
        N.save_checkpoint(m, p)
        blob = bytearray(p.read_bytes())
        blob[4] = 3
        p.write_bytes(bytes(blob))
        with pytest.raises(VersionError):
            N.load_checkpoint(p)

    def test_trailing_bytes(self, tmp_path):
        m = N.build_model(widths=(4,), seed=15)
        p = tmp_path / "m.ssvw"
        N.save_checkpoint(m, p)
        p.write_bytes(p.read_bytes() + b"\x00" * 8)
        with pytest.raises(CheckpointError):
            N.load_checkpoint(p)

    def test_non_composing_shapes(self, tmp_path):
        m = N.Model()
        m.layers.append(N.Layer(N.CONV, np.zeros((4, 3, 3, 3)), np.zeros(4)))
        m.layers.append(N.Layer(N.RELU))
        m.layers.append(N.Layer(N.GLOBAL_AVGPOOL))
        # fc expects 5 inputs but the conv gives 4
        m.layers.append(N.Layer(N.FC, np.zeros((64, 5)), np.zeros(64)))
        p = tmp_path / "m.ssvw"
        N.save_checkpoint(m, p)
        with pytest.raises(CheckpointError):
            N.load_checkpoint(p)
