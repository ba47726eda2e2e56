import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergobound.rng import RandomStream, as_stream, map_batches, mean_and_stderr


def test_spawn_is_deterministic_and_distinct():
    s = RandomStream(123)
    a = s.spawn("x").generator().standard_normal(4)
    b = s.spawn("x").generator().standard_normal(4)
    c = s.spawn("y").generator().standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_as_stream():
    assert as_stream(5) == RandomStream(5)
    s = RandomStream(1, (2,))
    assert as_stream(s) is s
    assert as_stream(None) == RandomStream(0)
    with pytest.raises(TypeError):
        as_stream("seed")


@given(n=st.integers(1, 3000), bs=st.integers(1, 700))
@settings(max_examples=30, deadline=None)
def test_batches_cover_range(n, bs):
    spans = [(start, count) for start, count, _ in RandomStream(0).batches(n, bs)]
    assert spans[0][0] == 0
    assert sum(c for _, c in spans) == n
    assert all(s1 + c1 == s2 for (s1, c1), (s2, _) in zip(spans, spans[1:]))


@given(workers=st.integers(1, 6))
@settings(max_examples=6, deadline=None)
def test_map_batches_worker_invariance(workers):
    fn = lambda start, count, gen: gen.standard_normal(count)
    ref = np.concatenate(map_batches(fn, RandomStream(7), 1000, 64, 1))
    out = np.concatenate(map_batches(fn, RandomStream(7), 1000, 64, workers))
    np.testing.assert_array_equal(ref, out)


def test_mean_and_stderr():
    m, s = mean_and_stderr(np.array([1.0, 3.0]))
    assert m == 2.0 and s == pytest.approx(1.0)
    assert mean_and_stderr(np.array([4.0])) == (4.0, 0.0)
    with pytest.raises(ValueError):
        mean_and_stderr(np.array([]))
