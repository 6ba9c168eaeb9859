import numpy as np
import pytest

from fastcifar.exceptions import ConfigError, ShapeError, StateError
from fastcifar.layers import BatchNorm2d, Conv2d, Residual, Sequential
from fastcifar.model import (PRESETS, NetConfig, build, feature_sizes, forward_macs, param_count_formula,
                             training_flops)
from fastcifar.ops import softmax_crossentropy
from fastcifar.rng import stream

from conftest import numeric_grad, rel_error


def to_float64(net):
    def walk(layer):
        for p in layer.params.values():
            p.value = p.value.astype(np.float64)
        for k in list(layer.buffers):
            layer.buffers[k] = layer.buffers[k].astype(np.float64)
        if isinstance(layer, Sequential):
            for child in layer:
                walk(child)
        if isinstance(layer, Residual):
            walk(layer.body)
    walk(net.body)
    return net


@pytest.fixture
def small_net():
    return build(NetConfig(widths=(4, 6, 8)), stream(0, "init"))


class TestConfig:
    def test_whiten_width(self):
        assert NetConfig().whiten_width == 24

    @pytest.mark.parametrize("kwargs", [
        {"widths": (64, 0, 256)},
        {"convs_per_block": 4},
        {"residual": True},
        {"bn_retention": 1.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            NetConfig(**kwargs)

    def test_scaled(self):
        assert NetConfig().scaled(0.25).widths == (16, 64, 64)


class TestArchitecture:
    def test_feature_sizes(self):
        assert feature_sizes() == [31, 15, 7, 3]

    def test_output_shape(self, small_net, rng):
        x = rng.normal(size=(3, 3, 32, 32)).astype(np.float32)
        out = small_net(x)
        assert out.shape == (3, 10) and out.dtype == np.float32

    def test_rejects_bad_input(self, small_net):
        with pytest.raises(ShapeError):
            small_net(np.zeros((1, 1, 32, 32), np.float32))

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_param_count_matches_formula(self, name):
        net = build(PRESETS[name], stream(0, "init"))
        assert net.param_count() == param_count_formula(PRESETS[name])

    def test_airbench94_param_count(self):
        assert param_count_formula(PRESETS["airbench94"]) == 1_972_792

    def test_parameter_names(self, small_net):
        names = [n for n, _ in small_net.named_parameters()]
        assert names[:2] == ["whiten.weight", "whiten.bias"]
        assert "block2.conv1.weight" in names and "block3.norm2.bias" in names and names[-1] == "head.weight"

    def test_residual_names(self):
        net = build(PRESETS["airbench96"].scaled(1 / 32), stream(0, "init"))
        names = {n for n, _ in net.named_parameters()}
        assert {"block1.conv3.weight", "block1.norm3.bias"} <= names

    def test_macs_and_flops(self):
        cfg = PRESETS["airbench94"]
        # conv MACs by hand: 24*12*31^2 + per block (cin*w*9*s_in^2 + w*w*9*s_out^2) + head
        hand = (31 * 31 * 24 * 12 + 31 * 31 * 64 * 24 * 9 + 15 * 15 * 64 * 64 * 9
                + 15 * 15 * 256 * 64 * 9 + 7 * 7 * 256 * 256 * 9
                + 7 * 7 * 256 * 256 * 9 + 3 * 3 * 256 * 256 * 9 + 2560)
        assert forward_macs(cfg) == hand
        assert 3.0e14 <= training_flops(cfg, 9.9) <= 4.2e14


class TestBatchNormLayer:
    def test_scale_frozen(self):
        bn = BatchNorm2d(3)
        assert not bn.params["weight"].requires_grad
        assert bn.params["bias"].group == "norm_bias"

    def test_param_groups(self, small_net):
        groups = small_net.param_groups()
        assert all(n.endswith("norm1.bias") or n.endswith("norm2.bias") for n, _ in groups["norm_bias"])
        others = {n for n, _ in groups["other"]}
        assert "whiten.weight" not in others and "whiten.bias" in others
        assert not any(n.endswith("norm1.weight") for n in others)


class TestBackward:
    def test_backward_without_forward(self, small_net):
        with pytest.raises(StateError):
            small_net.backward(np.zeros((2, 10), np.float32))

    def test_eval_forward_caches_nothing(self, small_net, rng):
        small_net(rng.normal(size=(2, 3, 32, 32)).astype(np.float32), training=False)
        with pytest.raises(StateError):
            small_net.backward(np.zeros((2, 10), np.float32))

    @pytest.mark.parametrize("cfg", [NetConfig(widths=(3, 4, 5)),
                                     NetConfig(widths=(3, 4, 5), convs_per_block=3, residual=True)])
    def test_network_gradients(self, cfg):
        net = to_float64(build(cfg, stream(1, "init")))
        r = np.random.default_rng(1)
        x = r.normal(size=(4, 3, 28, 28))
        y = r.integers(0, 10, 4)
        loss = lambda: softmax_crossentropy(net(x, training=True), y, 0.2)[0]
        _, g = softmax_crossentropy(net(x, training=True), y, 0.2)
        grads = net.backward(g)
        params = dict(net.named_parameters())
        for name in ("whiten.bias", "block1.conv1.weight", "block2.norm1.bias", "block3.conv2.weight", "head.weight"):
            assert rel_error(grads[name], numeric_grad(loss, params[name].value)) < 1e-3, name

    def test_frozen_first_layer_skipped(self, small_net, rng):
        small_net.whiten.bias.requires_grad = False
        x = rng.normal(size=(2, 3, 32, 32)).astype(np.float32)
        _, g = softmax_crossentropy(small_net(x, training=True), np.array([1, 2]), 0.2)
        grads = small_net.backward(g)
        assert "whiten.bias" not in grads and small_net.whiten.bias.grad is None
        assert grads["block1.conv1.weight"].shape == (4, 24, 3, 3)


class TestState:
    def test_state_dict_is_live(self, small_net):
        state = small_net.state_dict()
        state["head.weight"][...] = 0
        assert np.all(dict(small_net.named_parameters())["head.weight"].value == 0)
        assert "block1.norm1.running_var" in state

    def test_save_load_roundtrip(self, small_net, tmp_path, rng):
        x = rng.normal(size=(2, 3, 32, 32)).astype(np.float32)
        small_net.save(tmp_path / "m.abt")
        other = build(small_net.config, stream(9, "init"))
        other.load(tmp_path / "m.abt")
        np.testing.assert_array_equal(other(x), small_net(x))

    def test_load_mismatch(self, small_net):
        state = {k: v.copy() for k, v in small_net.state_dict().items()}
        state["head.weight"] = np.zeros((3, 3), np.float32)
        with pytest.raises(ShapeError):
            small_net.load_state_dict(state)
        del state["head.weight"]
        with pytest.raises(KeyError):
            small_net.load_state_dict(state)

    def test_copy_is_independent(self, small_net):
        twin = small_net.copy()
        twin.state_dict()["head.weight"][...] = 1
        assert not np.all(small_net.state_dict()["head.weight"] == 1)

    def test_conv_layer_dirac(self, small_net):
        w = small_net.body["block2"]["conv1"].weight.value
        assert w[0, 0, 1, 1] == 1 and w[0, 1].sum() == 0
        assert isinstance(small_net.whiten, Conv2d)
