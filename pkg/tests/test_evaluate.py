import numpy as np
import pytest

from fastcifar.evaluate import accuracy, evaluate, infer
from fastcifar.model import NetConfig, build
from fastcifar.ops import reflect_pad2d
from fastcifar.rng import stream


class ViewStub:
    """Returns a one-hot identifying which of the six TTA views it was given."""

    def __init__(self, x):
        padded = reflect_pad2d(x, 1)
        ul, dr = padded[:, :, :32, :32], padded[:, :, 2:, 2:]
        self.views = [x, x[..., ::-1], ul, ul[..., ::-1], dr, dr[..., ::-1]]

    def forward(self, x, training=False):
        out = np.zeros((len(x), 6))
        for k, v in enumerate(self.views):
            out[np.all(x == v, axis=(1, 2, 3)), k] = 1
        assert np.all(out.sum(1) == 1)
        return out


class ConstStub:
    def forward(self, x, training=False):
        return np.tile(np.arange(10.0), (len(x), 1))


@pytest.fixture(scope="module")
def net():
    return build(NetConfig(widths=(4, 6, 8)), stream(0, "init"))


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(0).normal(size=(5, 3, 32, 32)).astype(np.float32)


class TestInfer:
    def test_level0_is_forward(self, net, images):
        np.testing.assert_array_equal(infer(net, images, 0), net.forward(images))

    def test_level2_view_weights(self, images):
        x = np.arange(2 * 3 * 32 * 32, dtype=np.float64).reshape(2, 3, 32, 32)
        out = infer(ViewStub(x), x, 2)
        np.testing.assert_array_equal(out, np.tile([1 / 4, 1 / 4, 1 / 8, 1 / 8, 1 / 8, 1 / 8], (2, 1)))

    def test_level1_view_weights(self):
        x = np.arange(3 * 32 * 32, dtype=np.float64).reshape(1, 3, 32, 32)
        np.testing.assert_array_equal(infer(ViewStub(x), x, 1)[0], [0.5, 0.5, 0, 0, 0, 0])

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_constant_network(self, images, level):
        np.testing.assert_allclose(infer(ConstStub(), images, level), ConstStub().forward(images))

    def test_mirror_symmetric_network(self, images):
        sym = build(NetConfig(widths=(4, 6, 8)), stream(0, "init"))
        # a mirror-symmetric input makes every view pair identical
        x = images + images[..., ::-1]
        np.testing.assert_allclose(infer(sym, x, 1), infer(sym, x, 0), atol=1e-5)

    def test_convex_combination(self, net, images):
        padded = reflect_pad2d(images, 1)
        views = [images, padded[:, :, :32, :32], padded[:, :, 2:, 2:]]
        views += [v[..., ::-1] for v in views]
        single = np.stack([net.forward(np.ascontiguousarray(v)) for v in views])
        out = infer(net, images, 2)
        assert np.all(out >= single.min(0) - 1e-5) and np.all(out <= single.max(0) + 1e-5)

    def test_batch_size_invariance(self, net, images):
        np.testing.assert_allclose(infer(net, images, 2, batch_size=2), infer(net, images, 2), atol=1e-6)

    def test_deterministic(self, net, images):
        np.testing.assert_array_equal(infer(net, images, 2), infer(net, images, 2))

    def test_bad_level(self, net, images):
        with pytest.raises(ValueError):
            infer(net, images, 3)


class TestAccuracy:
    def test_perfect(self):
        assert accuracy(np.eye(4), np.arange(4)) == 1.0

    def test_ties_go_to_lowest_index(self):
        assert accuracy(np.zeros((6, 10)), np.zeros(6, int)) == 1.0

    def test_three_of_four(self):
        assert accuracy(np.eye(4), np.array([0, 1, 2, 0])) == 0.75

    def test_evaluate(self, net, images):
        labels = infer(net, images, 0).argmax(1)
        assert evaluate(net, images, labels, 0) == 1.0
