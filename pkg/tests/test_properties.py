"""Property-based checks of invariants that should hold for any valid input."""
import io

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fastcifar import archive, ops
from fastcifar.analysis import PowerLawFit, coverage, effective_speedup, fit_power_law
from fastcifar.config import Config
from fastcifar.data import AugmentPolicy, flip_mask, translate
from fastcifar.optim import HyperParams, LookaheadState, triangle
from fastcifar.trainer import RunStats

finite = st.floats(-10, 10, allow_nan=False, width=64)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_conv_is_linear(cin, cout, size, seed):
    r = np.random.default_rng(seed)
    x1, x2 = r.normal(size=(2, 1, cin, size, size))
    w = r.normal(size=(cout, cin, 3, 3))
    np.testing.assert_allclose(ops.conv2d(2 * x1 - x2, w), 2 * ops.conv2d(x1, w) - ops.conv2d(x2, w), atol=1e-10)


@given(arrays(np.float64, (1, 2, 5, 6), elements=finite), st.integers(0, 4))
def test_reflect_pad_keeps_center(x, p):
    out = ops.reflect_pad2d(x, p)
    assert out.shape == (1, 2, 5 + 2 * p, 6 + 2 * p)
    np.testing.assert_array_equal(out[:, :, p:p + 5, p:p + 6], x)


@given(arrays(np.float64, (3, 6), elements=finite), st.lists(st.integers(0, 5), min_size=3, max_size=3),
       st.floats(0, 0.9))
def test_crossentropy_invariants(logits, labels, smoothing):
    loss, grad = ops.softmax_crossentropy(logits, np.array(labels), smoothing)
    assert loss >= 0
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-9)
    # invariant to a per-row logit shift
    shifted, _ = ops.softmax_crossentropy(logits + 3.0, np.array(labels), smoothing)
    assert np.isclose(loss, shifted, rtol=1e-9, atol=1e-9)


@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_translate_is_a_crop_of_the_padded_image(px, which, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 1, 8, 8))
    shifts = r.integers(-px, px + 1, size=(2, 2))
    out = translate(x, shifts, px)
    padded = ops.reflect_pad2d(x, px)
    i = which % 2
    sy, sx = shifts[i] + px
    np.testing.assert_array_equal(out[i], padded[i, :, sy:sy + 8, sx:sx + 8])


@given(st.integers(0, 10**6), st.lists(st.integers(0, 10**4), min_size=1, max_size=50))
def test_alternating_flip_alternates(epoch, idx):
    p = AugmentPolicy(flip="alternating")
    idx = np.array(idx)
    assert np.all(flip_mask(p, idx, epoch) != flip_mask(p, idx, epoch + 1))


@given(st.sampled_from(["none", "random", "alternating"]),
       st.sampled_from(["random_reshuffle", "with_replacement", "sequential"]),
       st.integers(1, 60), st.integers(1, 4), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_coverage_bounds(flip, sampling, n, window, seed):
    rep = coverage(flip, sampling, n, window, trials=2, seed=seed)
    assert rep.max_unique <= (n if flip == "none" else 2 * n)
    assert rep.min_unique <= rep.unique_pairs <= rep.max_unique


@given(st.integers(1, 500), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 0.99))
def test_triangle_range(total, start, end, peak):
    s = triangle(total, start, end, peak)
    assert len(s) == total + 1
    assert s.max() <= 1.0 and s.min() >= min(start, end) - 1e-12
    if int(peak * total) > 0:
        assert s[int(peak * total)] == 1.0


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite), st.floats(0, 1))
def test_lookahead_between_old_and_new(old, new, decay):
    state = {"w": old.copy()}
    la = LookaheadState(state)
    state["w"][...] = new
    la.update(state, decay)
    lo, hi = np.minimum(old, new), np.maximum(old, new)
    assert np.all(state["w"] >= lo - 1e-12) and np.all(state["w"] <= hi + 1e-12)


@given(st.floats(-2.5, -0.2), st.floats(0.5, 50), st.floats(0, 10))
@settings(max_examples=30, deadline=None)
def test_power_law_fit_is_sound(a, b, c):
    pts = [(e, c + b * e ** a) for e in (5, 10, 20, 40, 80)]
    fit = fit_power_law(pts)
    assert fit.c >= 0
    assert np.all(np.isfinite(fit.predict([1, 1000])))
    np.testing.assert_allclose(fit.predict([e for e, _ in pts]), [y for _, y in pts], atol=1e-3 * (b + c))


@given(st.floats(-2, -0.1), st.floats(0.5, 20), st.floats(0, 5), st.floats(0.01, 0.99), st.floats(0.1, 10))
def test_speedup_scale_equivariant(a, b, c, frac, k):
    fit = PowerLawFit(a, b, c, 0.0)
    target = c + frac * (fit.predict(10) - c)
    scaled = PowerLawFit(a, k * b, k * c, 0.0)
    assert np.isclose(effective_speedup(fit, 10, target), effective_speedup(scaled, 10, k * target), rtol=1e-7)


@given(st.dictionaries(st.text(min_size=1, max_size=8), arrays(np.float32, st.integers(0, 4),
                                                               elements=st.floats(-1e3, 1e3, width=32)),
                       max_size=4))
def test_archive_roundtrip(tensors):
    buf = io.BytesIO()
    archive.write_tensors(buf, tensors)
    buf.seek(0)
    back = archive.read_tensors(buf)
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


@given(st.floats(0.1, 30), st.floats(0, 0.99), st.integers(1, 4096), st.floats(0.1, 50))
def test_config_roundtrip(lr, momentum, batch, epochs):
    cfg = Config(hp=HyperParams(lr=lr, momentum=momentum, batch_size=batch, train_epochs=epochs))
    assert Config.from_tree(cfg.to_tree()) == cfg


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
def test_runstats_ci(accs):
    s = RunStats.from_accs(accs)
    assert np.isclose(s.ci95, 1.96 * np.std(accs, ddof=1) / np.sqrt(len(accs)))
    assert min(accs) - 1e-12 <= s.mean <= max(accs) + 1e-12
