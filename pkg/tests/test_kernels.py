import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kldisac import _kernels_py, kernels
from kldisac.scenario import build_constellation, complex_normal

try:
    from kldisac import _ckernels
except ImportError:  # pragma: no cover - build without a compiler
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _hermitian(rng, B, N):
    A = complex_normal(rng, (B, N, N))
    return A + np.conj(np.swapaxes(A, 1, 2))


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(_ckernels, marks=needs_c)])
def test_quadform_oracle(impl):
    rng = np.random.default_rng(0)
    Y = complex_normal(rng, (4, 5, 7))
    A = _hermitian(rng, 4, 5)
    brute = [np.mean([np.vdot(Y[b, :, l], A[b] @ Y[b, :, l]).real for l in range(7)]) for b in range(4)]
    np.testing.assert_allclose(impl.quadform_mean(Y, A), brute, rtol=1e-12)


@needs_c
@given(B=st.integers(1, 4), N=st.integers(1, 6), L=st.integers(1, 9), seed=st.integers(0, 2**16))
def test_quadform_backends_agree(B, N, L, seed):
    rng = np.random.default_rng(seed)
    Y = complex_normal(rng, (B, N, L))
    A = _hermitian(rng, B, N)
    np.testing.assert_allclose(_ckernels.quadform_mean(Y, A), _kernels_py.quadform_mean(Y, A), rtol=1e-10, atol=1e-12)


@needs_c
def test_quadform_accepts_readonly_broadcast():
    rng = np.random.default_rng(1)
    Y = complex_normal(rng, (3, 4, 5))
    A = np.broadcast_to(np.eye(4, dtype=complex), (3, 4, 4))
    np.testing.assert_allclose(_ckernels.quadform_mean(Y, A), np.sum(np.abs(Y) ** 2, axis=(1, 2)) / 5)


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(_ckernels, marks=needs_c)])
@pytest.mark.parametrize("M", [2, 4, 8])
def test_psk_noiseless_is_error_free(impl, M):
    con = build_constellation(M)
    rng = np.random.default_rng(M)
    tx = rng.integers(0, M, size=(3, 200))
    z = con.symbols[tx]
    off = float(np.angle(con.symbols[0]))
    assert impl.psk_bit_errors(z, tx, M, off, con.labels).tolist() == [0, 0, 0]


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(_ckernels, marks=needs_c)])
def test_psk_counts_gray_bits(impl):
    con = build_constellation(4)
    off = float(np.angle(con.symbols[0]))
    tx = np.zeros((1, 3), dtype=np.int64)
    # received as neighbour 1, neighbour 3 and opposite point 2
    z = con.symbols[[1, 3, 2]][None]
    assert impl.psk_bit_errors(z, tx, 4, off, con.labels).tolist() == [1 + 1 + 2]


@needs_c
@given(M=st.sampled_from([2, 4, 8, 16]), seed=st.integers(0, 2**16))
def test_psk_backends_agree(M, seed):
    con = build_constellation(M)
    rng = np.random.default_rng(seed)
    tx = rng.integers(0, M, size=(3, 300))
    z = con.symbols[tx] + complex_normal(rng, (3, 300), 0.5)
    off = float(np.angle(con.symbols[0]))
    np.testing.assert_array_equal(
        _ckernels.psk_bit_errors(z, tx, M, off, con.labels), _kernels_py.psk_bit_errors(z, tx, M, off, con.labels)
    )
