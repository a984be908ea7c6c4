import numpy as np
import pytest

from vlra.adapters import AdapterKind, forward as adapter_forward
from vlra.errors import ShapeError, StaleTapeError
from vlra.linalg import Rng
from vlra.model import (AdaptedLinear, FrozenLinear, LayerNorm, ToyNet, attach,
                        make_frozen_linear, make_mlp, make_single, net_backward,
                        net_forward)


def mlp(seed=0, **kw):
    return make_mlp(8, 16, 4, Rng(seed, 0), **kw)


class TestAttachCounts:
    def test_ilora_on_mlp(self):
        net = attach(mlp(), AdapterKind("ilora"), set(), Rng(0, 1))
        assert net.trainable_count() == 16 + 4

    def test_bitfit_matches_ilora_count(self):
        net = attach(mlp(), AdapterKind("bitfit"), set(), Rng(0, 1))
        assert net.trainable_count() == 16 + 4

    def test_unfreeze_norms_adds_scale_and_shift(self):
        net = attach(mlp(norm=True), AdapterKind("ilora"), {"norms"}, Rng(0, 1))
        assert net.trainable_count() == 20 + 32

    def test_norms_flag_without_norm_layer_adds_nothing(self):
        net = attach(mlp(norm=False), AdapterKind("ilora"), {"norms"}, Rng(0, 1))
        assert net.trainable_count() == 20

    def test_count_is_additive(self):
        net = attach(mlp(norm=True), AdapterKind("lora"), {"biases", "gamma", "norms"}, Rng(0, 1))
        per_layer = [(8 + 16) + 16 + 16, (16 + 4) + 4 + 4]  # lora + bias + gamma
        assert net.trainable_count() == sum(per_layer) + 32

    def test_unknown_flag_rejected(self):
        with pytest.raises(ValueError):
            attach(mlp(), AdapterKind("ilora"), {"heads"}, Rng(0, 1))

    def test_adapterless_net(self):
        net = attach(mlp(), None, {"biases"}, Rng(0, 1))
        assert net.trainable_count() == 16 + 4


class TestForward:
    def test_identity_pipeline(self):
        layers = [AdaptedLinear(FrozenLinear(np.eye(4), np.zeros(4))),
                  AdaptedLinear(FrozenLinear(np.eye(4), np.zeros(4)))]
        net = ToyNet(layers=layers, activation="none")
        x = Rng(1, 2).normal(4)
        y, _ = net_forward(net, x)
        np.testing.assert_allclose(y, x, atol=1e-15)

    def test_gelu_concentrates_positive(self):
        # large positive pre-activations pass through nearly unchanged
        layers = [AdaptedLinear(FrozenLinear(np.eye(3), np.full(3, 10.0))),
                  AdaptedLinear(FrozenLinear(np.eye(3), np.zeros(3)))]
        net = ToyNet(layers=layers, activation="gelu")
        y, _ = net_forward(net, np.zeros(3))
        assert y.mean() > 0
        np.testing.assert_allclose(y, np.full(3, 10.0), rtol=1e-6)

    def test_single_layer_reduces_to_adapter_forward(self):
        net = make_single(6, 4, Rng(3, 0))
        attach(net, AdapterKind("ilora"), set(), Rng(3, 1))
        net.layers[0].adapter.trainables["b"][:] = Rng(4, 1).normal(4)
        x = Rng(5, 2).normal(6)
        y, _ = net_forward(net, x)
        base = net.layers[0].base
        np.testing.assert_array_equal(
            y, adapter_forward(net.layers[0].adapter, base.W0, base.beta0, x))

    def test_input_shape_checked(self):
        net = mlp()
        with pytest.raises(ShapeError):
            net_forward(net, np.ones(9))


class TestSemanticsEquivalences:
    def test_biases_only_reproduces_bitfit(self):
        base = make_frozen_linear(5, 3, Rng(7, 0))
        plain = AdaptedLinear(base, train_bias=True)
        plain.bias_shift[:] = Rng(8, 1).normal(3)
        x = Rng(9, 2).normal(5)
        y, _ = plain.forward(x)
        np.testing.assert_allclose(y, base.W0 @ x + base.beta0 + plain.bias_shift, atol=1e-15)

    def test_gamma_and_biases_reproduce_difffit(self):
        base = make_frozen_linear(5, 3, Rng(7, 0))
        layer = AdaptedLinear(base, train_bias=True, train_scale=True)
        layer.bias_shift[:] = Rng(8, 1).normal(3)
        layer.out_scale[:] = 1.0 + 0.3 * Rng(9, 1).normal(3)
        x = Rng(10, 2).normal(5)
        y, _ = layer.forward(x)
        expected = layer.out_scale * (base.W0 @ x + (base.beta0 + layer.bias_shift))
        np.testing.assert_allclose(y, expected, atol=1e-14)


class TestBackward:
    def _perturbed_net(self, seed=0, **kw):
        net = attach(mlp(seed=seed, **kw), AdapterKind("ilora"),
                     {"biases", "gamma", "norms"}, Rng(seed, 1))
        prng = Rng(seed + 40, 1)
        for arr in net.trainables().values():
            arr += 0.3 * prng.normal(arr.size).reshape(arr.shape)
        return net

    def test_zero_upstream_gradient(self):
        net = self._perturbed_net(norm=True)
        _, tape = net_forward(net, Rng(1, 2).normal(8))
        grads = net_backward(net, tape, np.zeros(4))
        for name, g in grads.items():
            np.testing.assert_array_equal(g, np.zeros_like(g), err_msg=name)

    def test_single_layer_delegates_to_adapter_backward(self):
        net = make_single(6, 4, Rng(3, 0))
        attach(net, AdapterKind("lora"), set(), Rng(3, 1))
        net.layers[0].adapter.trainables["B"][:] = Rng(4, 1).normal_matrix(4, 1)
        x = Rng(5, 2).normal(6)
        g = Rng(6, 2).normal(4)
        _, tape = net_forward(net, x)
        grads = net_backward(net, tape, g)
        from vlra.adapters import backward as adapter_backward
        base = net.layers[0].base
        bundle = adapter_backward(net.layers[0].adapter, base.W0, x, g, base.beta0)
        np.testing.assert_array_equal(grads["layer0.A"], bundle.grads["A"])
        np.testing.assert_array_equal(grads["layer0.B"], bundle.grads["B"])

    @pytest.mark.parametrize("activation,norm", [("gelu", True), ("relu", False), ("none", True)])
    def test_full_net_gradcheck(self, activation, norm):
        from vlra.analysis import fd_gradcheck
        net = self._perturbed_net(seed=11, activation=activation, norm=norm)
        x = Rng(12, 2).normal(8)
        g = Rng(13, 2).normal(4)
        assert fd_gradcheck(net, x, g, h=1e-5) <= 1e-6

    def test_stale_tape_detected(self):
        net = self._perturbed_net()
        _, tape = net_forward(net, Rng(1, 2).normal(8))
        net.mark_updated()
        with pytest.raises(StaleTapeError):
            net_backward(net, tape, np.ones(4))


class TestLayerNorm:
    def test_normalizes_at_init(self):
        ln = LayerNorm(6)
        v = Rng(2, 2).normal(6) * 3 + 1.0
        out, _ = ln.forward(v)
        assert abs(out.mean()) < 1e-12
        assert abs(out.std() - 1.0) < 1e-4  # eps keeps it just under 1

    def test_batch_paths_match_vector_paths(self):
        layer = AdaptedLinear(make_frozen_linear(5, 4, Rng(1, 0)),
                              train_bias=True, train_scale=True)
        layer.adapter = None
        X = Rng(2, 2).normal_matrix(7, 5)
        G = Rng(3, 2).normal_matrix(7, 4)
        batch = layer.forward_batch(X)
        grads, g_in = layer.backward_batch(X, G)
        acc = {n: np.zeros_like(v) for n, v in layer.trainables().items()}
        for i in range(7):
            y, cache = layer.forward(X[i])
            np.testing.assert_allclose(batch[i], y, atol=1e-13)
            gi, gin = layer.backward(cache, G[i])
            np.testing.assert_allclose(g_in[i], gin, atol=1e-13)
            for n in acc:
                acc[n] += gi[n]
        for n in acc:
            np.testing.assert_allclose(grads[n], acc[n], atol=1e-12)
