import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subbit import kernels


def test_backend_selection():
    assert kernels.BACKEND in kernels.available_backends()
    assert "python" in kernels.available_backends()


def test_pack_bits_msb_first(backend):
    assert kernels.pack_bits([1, 0, 1], 1, backend=backend) == b"\xa0"
    assert kernels.pack_bits([5], 3, backend=backend) == b"\xa0"
    assert kernels.pack_bits([0xF, 0x0, 0xA], 4, backend=backend) == b"\xf0\xa0"
    assert kernels.pack_bits([], 3, backend=backend) == b""


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 16).flatmap(
    lambda w: st.tuples(st.just(w), st.lists(st.integers(0, (1 << w) - 1), max_size=64))))
def test_pack_unpack_roundtrip(case):
    width, values = case
    for name in kernels.available_backends():
        blob = kernels.pack_bits(values, width, backend=name)
        assert len(blob) == (len(values) * width + 7) // 8
        back = kernels.unpack_bits(blob, len(values), width, backend=name)
        assert back.tolist() == values


def test_unpack_rejects_short_stream():
    with pytest.raises(ValueError):
        kernels.unpack_bits(b"\x00", 3, 3)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    rows, cols = rng.integers(1, 12), rng.integers(1, 24)
    absw = np.abs(rng.standard_normal((rows, cols)))
    support = rng.random((rows, cols)) < 0.7
    return absw, support


@pytest.mark.parametrize("seed", range(20))
def test_backends_agree_on_trisection(seed):
    absw, support = _random_case(seed)
    top = absw.max()
    p1s = np.linspace(0.1, 0.45, 17) * top
    p2s = 2 * p1s
    results = [kernels.trisection_errors(absw, support, p1s, p2s, backend=b)
               for b in kernels.available_backends()]
    for r in results[1:]:
        np.testing.assert_allclose(r, results[0], rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_backends_agree_on_prefix(seed):
    absw, support = _random_case(seed)
    order = np.random.default_rng(seed).permutation(absw.shape[1])
    k = absw.shape[1]
    results = [kernels.prefix_errors(absw, support, order, k, backend=b)
               for b in kernels.available_backends()]
    for r in results[1:]:
        np.testing.assert_allclose(r, results[0], rtol=1e-12, atol=1e-14)


def test_trisection_kernel_against_direct_sum(backend):
    absw = np.array([[0.1, 0.5, 1.0, 2.0]])
    support = np.ones_like(absw, dtype=bool)
    err = kernels.trisection_errors(absw, support, [0.3], [0.6], backend=backend)
    # groups {2.0, 1.0} and {0.5} and {0.1}: only the first contributes
    assert err[0] == pytest.approx(0.5, abs=1e-15)
