"""Both DTW backends against brute-force dynamic programming and against each other."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from sigkin.kernels import dtw

compiled = dtw.njit_always(dtw._dtw_loops)
BACKENDS = {"numba": compiled, "numpy": dtw.dtw_numpy}
FULL = 1e9


def _pair(rng, max_len=30, cols=3):
    a = rng.normal(size=(rng.integers(1, max_len + 1), cols))
    b = rng.normal(size=(rng.integers(1, max_len + 1), cols))
    return a, b


@pytest.mark.parametrize("name", BACKENDS)
def test_full_band_equals_reference_dp(name, rng):
    kernel = BACKENDS[name]
    for _ in range(500):
        a, b = _pair(rng)
        assert kernel(a, b, FULL) == oracles.dtw_full(a.tolist(), b.tolist())


@pytest.mark.parametrize("name", BACKENDS)
def test_reference_dp_is_true_minimum(name, rng):
    for _ in range(30):
        a, b = _pair(rng, max_len=6, cols=2)
        d, _ = BACKENDS[name](a, b, FULL)
        assert d == pytest.approx(oracles.dtw_paths_min(a, b), rel=1e-12)


def test_backends_bit_identical_with_band(rng):
    for _ in range(300):
        a, b = _pair(rng, max_len=80, cols=4)
        w = float(dtw.band_halfwidth(len(a), len(b)))
        assert compiled(a, b, w) == dtw.dtw_numpy(a, b, w)


@pytest.mark.parametrize("name", BACKENDS)
def test_band_never_below_unconstrained(name, rng):
    for _ in range(200):
        a, b = _pair(rng, max_len=60)
        w = float(dtw.band_halfwidth(len(a), len(b)))
        assert BACKENDS[name](a, b, w)[0] >= BACKENDS[name](a, b, FULL)[0]


@pytest.mark.parametrize("name", BACKENDS)
def test_identity_diagonal(name, rng):
    a = rng.normal(size=(40, 5))
    assert BACKENDS[name](a, a, float(dtw.band_halfwidth(40, 40))) == (0.0, 40)


def test_band_halfwidth():
    assert dtw.band_halfwidth(100, 100) == 10
    assert dtw.band_halfwidth(101, 100) == 11
    assert dtw.band_halfwidth(100, 130) == 31
    assert dtw.band_halfwidth(1, 1) == 1


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)),
              elements=st.floats(-100, 100)),
       arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)),
              elements=st.floats(-100, 100)))
def test_property_backends_agree(a, b):
    w = float(dtw.band_halfwidth(len(a), len(b)))
    assert compiled(a, b, w) == dtw.dtw_numpy(a, b, w)
    d, n = compiled(a, b, FULL)
    assert (d, n) == oracles.dtw_full(a.tolist(), b.tolist())
    assert max(len(a), len(b)) <= n <= len(a) + len(b) - 1
