import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sigsurrogate.featurize import encode, encode_many


@pytest.mark.parametrize("offset,pair", [(0, (1, 0)), (30, (0, 1)), (60, (-1, 0)), (90, (0, -1))])
def test_cardinal_offsets(offset, pair):
    assert np.allclose(encode([offset]), pair, atol=1e-12, rtol=0)


def test_shape():
    assert encode(np.zeros(21, dtype=int)).shape == (42,)
    assert encode_many(np.zeros((5, 21), dtype=int)).shape == (5, 42)


def test_pairs_in_input_order():
    f = encode([0, 30, 60])
    assert np.allclose(f, [1, 0, 0, 1, -1, 0], atol=1e-12)


def test_unit_circle_and_injectivity():
    f = encode_many(np.arange(120)[:, None])
    assert np.allclose(f[:, 0] ** 2 + f[:, 1] ** 2, 1.0, atol=1e-9, rtol=0)
    assert len({tuple(np.round(r, 9)) for r in f}) == 120


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=30))
@settings(max_examples=100, deadline=None)
def test_periodicity(lifted):
    x = np.array(lifted)
    assert np.array_equal(encode(x), encode(x % 120))
