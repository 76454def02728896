import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tcsr.data import bicubic_resize
from tcsr.io import decode_store, dump_config, encode_store, parse_config
from tcsr.model import ModelConfig
from tcsr.nn import ShiftSpec, pixelshuffle, spatial_shift
from tcsr.tensor import pad_zero, slice_, softmax_lastdim
from tcsr.train import TrainConfig, l1_loss

finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)
small_settings = settings(max_examples=40, deadline=None)


def images(c_mult=8):
    return st.tuples(st.integers(1, 2), st.integers(2, 7), st.integers(2, 7),
                     st.integers(1, 3)).flatmap(
        lambda s: arrays(np.float64, (s[0], s[1], s[2], c_mult * s[3]), elements=finite))


@small_settings
@given(images(), images(), st.floats(-3, 3), st.floats(-3, 3))
def test_shift_linear(x, y, a, b):
    if x.shape != y.shape:
        y = np.resize(y, x.shape)
    lhs = spatial_shift(a * x + b * y)
    rhs = a * spatial_shift(x) + b * spatial_shift(y)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@small_settings
@given(images())
def test_shift_linear_exact_on_sums(x):
    np.testing.assert_array_equal(spatial_shift(x + x), spatial_shift(x) + spatial_shift(x))


@small_settings
@given(images())
def test_shift_mass_bound(x):
    assert np.abs(spatial_shift(x)).sum() <= np.abs(x).sum()


@small_settings
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_shift_mass_kept_in_interior(s, extra, seed):
    x = np.zeros((1, 2 * s + 3 + extra, 2 * s + 4, 8))
    x[0, s:-s, s:-s] = np.random.default_rng(seed).standard_normal(x[0, s:-s, s:-s].shape)
    y = spatial_shift(x, ShiftSpec(stride=s))
    np.testing.assert_array_equal(np.sort(y[y != 0]), np.sort(x[x != 0]))


@small_settings
@given(st.integers(1, 3).flatmap(lambda r: st.tuples(st.just(r), arrays(
    np.float64, st.tuples(st.integers(1, 2), st.integers(1, 4), st.integers(1, 4),
                          st.integers(1, 2).map(lambda c: c * r * r)), elements=finite))))
def test_pixelshuffle_permutes_values(args):
    r, x = args
    np.testing.assert_array_equal(np.sort(pixelshuffle(x, r).ravel()), np.sort(x.ravel()))


@small_settings
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite),
       st.integers(0, 3))
def test_pad_then_slice(x, p):
    y = pad_zero(x, p)
    np.testing.assert_array_equal(slice_(y, [(p, p + n) for n in x.shape]), x)


@small_settings
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=finite),
       st.floats(-100, 100))
def test_softmax_sum_and_shift(x, c):
    s = softmax_lastdim(x)
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax_lastdim(x + c), s, atol=1e-6)


@small_settings
@given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite),
       arrays(np.float64, 12, elements=finite))
def test_l1_metric(a, b, c):
    assert abs(l1_loss(a, b) - l1_loss(b, a)) <= 1e-6
    assert l1_loss(a, c) <= l1_loss(a, b) + l1_loss(b, c) + 1e-6


@small_settings
@given(st.floats(0, 1), st.integers(1, 30), st.integers(1, 30))
def test_bicubic_constant(v, oh, ow):
    y = bicubic_resize(np.full((9, 13, 3), v), oh, ow)
    np.testing.assert_allclose(y, v, rtol=0, atol=1e-14)


@small_settings
@given(st.builds(ModelConfig, channels=st.sampled_from([8, 16, 32]), blocks=st.integers(0, 40),
                 kernel=st.sampled_from([1, 3, 5, 7, 11]), heads=st.sampled_from([1, 2, 4, 8]),
                 ffn_ratio=st.integers(1, 4), use_shift=st.booleans(), scale=st.integers(2, 4),
                 variant=st.sampled_from(["custom", "x"])),
       st.builds(TrainConfig, patch=st.integers(8, 128), batch=st.integers(1, 64),
                 lr=st.floats(1e-6, 1e-2), steps=st.integers(0, 10 ** 6),
                 seed=st.integers(0, 2 ** 32), augment=st.booleans()))
def test_config_round_trip(mc, tc):
    assert parse_config(dump_config(mc, tc)) == (mc, tc)


@small_settings
@given(st.dictionaries(st.text(min_size=1, max_size=12),
                       st.sampled_from([np.float32, np.float64, np.int64, np.uint8]).flatmap(
                           lambda dt: arrays(dt, st.lists(st.integers(0, 4), max_size=3).map(tuple))),
                       max_size=5))
def test_checkpoint_round_trip(store):
    back = decode_store(encode_store(store))
    assert list(back) == list(store)
    for k, v in store.items():
        assert back[k].dtype == v.dtype
        np.testing.assert_array_equal(back[k], v)
