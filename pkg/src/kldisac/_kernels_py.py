"""NumPy implementations of the Monte Carlo hot kernels."""

from __future__ import annotations

import numpy as np


def quadform_mean(Y: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Snapshot-averaged Hermitian quadratic forms.

    Parameters
    ----------
    Y : ndarray, shape (B, N, L)
        Snapshot matrices, one per batch entry.
    A : ndarray, shape (B, N, N)
        Hermitian weight matrices.

    Returns
    -------
    ndarray, shape (B,)
        ``(1/L) * sum_l Re(y_l^H A y_l)``.
    """
    Y = np.ascontiguousarray(Y, dtype=np.complex128)
    A = np.ascontiguousarray(A, dtype=np.complex128)
    AY = A @ Y
    return np.einsum("bnl,bnl->b", Y.conj(), AY).real / Y.shape[2]


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.int64)
    count = np.zeros_like(x)
    while np.any(x):
        count += x & 1
        x >>= 1
    return count


def psk_bit_errors(
    z: np.ndarray, tx_index: np.ndarray, M: int, offset: float, labels: np.ndarray
) -> np.ndarray:
    """Minimum-distance PSK decisions and per-row bit error counts.

    Parameters
    ----------
    z : ndarray, shape (K, n)
        Equalised soft symbols.
    tx_index : ndarray, shape (K, n)
        Transmitted constellation indices.
    M : int
        PSK order.
    offset : float
        Phase of constellation point 0.
    labels : ndarray, shape (M,)
        Bit label of each constellation index.

    Returns
    -------
    ndarray, shape (K,)
        Bit errors per row.
    """
    z = np.asarray(z, dtype=np.complex128)
    phase = np.angle(z) - offset
    idx = np.rint(phase * (M / (2 * np.pi))).astype(np.int64) % M
    labels = np.asarray(labels, dtype=np.int64)
    diff = labels[idx] ^ labels[np.asarray(tx_index, dtype=np.int64)]
    table = _popcount(np.arange(M))
    return table[diff].sum(axis=1).astype(np.int64)
