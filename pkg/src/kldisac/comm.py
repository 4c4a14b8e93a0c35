"""Downlink communication: ZF precoding, KLD measures and BER simulation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InsufficientTrials, SingularChannel
from .scenario import ChannelSet, Constellation, ScenarioConfig, build_constellation, noise_variance

LN2 = math.log(2.0)
COND_LIMIT = 1e12


@dataclass(frozen=True)
class CommPrecoder:
    W: np.ndarray
    p: np.ndarray


def zf_directions(H: np.ndarray) -> np.ndarray:
    """Unnormalised ZF matrix ``conj(H) (H^T conj(H))^-1`` so that ``H^T W = I``."""
    gram = H.T @ H.conj()
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > COND_LIMIT:
        raise SingularChannel("channel Gram matrix is singular or ill-conditioned")
    return H.conj() @ np.linalg.inv(gram)


def zf_precoder(H: np.ndarray, p, P_c: float | None = None, normalization: str = "column") -> CommPrecoder:
    """Zero-forcing precoder with per-user power weights.

    Parameters
    ----------
    H : ndarray, shape (N, K)
        Downlink channel, column ``k`` is ``h_k``.
    p : array_like, shape (K,)
        Power weights; ``sum(p)`` is the total precoder power.
    P_c : float, optional
        Budget used only to rescale when ``sum(p)`` exceeds it.
    normalization : {"column", "frobenius"}
        ``"column"`` gives every beam unit norm before weighting, so
        ``||w_k||**2 = p_k``. ``"frobenius"`` scales the whole weighted ZF
        matrix to total power ``sum(p)``.
    """
    p = np.asarray(p, dtype=float)
    Wt = zf_directions(H)
    if normalization == "column":
        W = Wt / np.linalg.norm(Wt, axis=0) * np.sqrt(p)
    elif normalization == "frobenius":
        Ws = Wt * np.sqrt(p)
        W = Ws * math.sqrt(p.sum()) / np.linalg.norm(Ws)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if P_c is not None:
        power = np.vdot(W, W).real
        if power > P_c * (1 + 1e-12):
            W = W * math.sqrt(P_c / power)
    return CommPrecoder(W=W, p=p)


def interference_variance(
    cfg: ScenarioConfig, k: int, radar_power: float | None = None, sigma_n2: float | None = None
) -> float:
    """Radar-interference-plus-noise variance ``d_k**-zeta P_r sigma_h2 + sigma_n2``."""
    P = cfg.P_r if radar_power is None else radar_power
    s2 = noise_variance(cfg) if sigma_n2 is None else sigma_n2
    return float(cfg.d_c[k] ** (-cfg.zeta) * P * cfg.sigma_h2 + s2)


def kld_zf_closed_form(
    cfg: ScenarioConfig,
    k: int,
    sigma_eta2: float | None = None,
    constellation: Constellation | None = None,
) -> float:
    """Channel-averaged comm KLD (bits) of UE ``k`` under ZF precoding."""
    con = constellation or build_constellation(cfg.M)
    s2 = interference_variance(cfg, k) if sigma_eta2 is None else sigma_eta2
    gain = cfg.d_c[k] ** (-cfg.zeta)
    return float(con.kld_scale * gain * cfg.powers[k] * (cfg.N - cfg.K) / (s2 * LN2))


def kld_conditional_all(
    W_c: np.ndarray, H: np.ndarray, gains, sigma_eta2, constellation: Constellation
) -> np.ndarray:
    """Per-UE comm KLD (bits) for a given precoder and channel realisation.

    ``gains`` are the power pathlosses ``d_k**-zeta``; ``sigma_eta2`` may be
    scalar or per-UE.
    """
    U = H.T @ W_c
    P = np.abs(U) ** 2
    own = np.diag(P)
    iui = P.sum(axis=1) - own
    g = np.asarray(gains, dtype=float)
    return constellation.kld_scale * g * own / (g * iui + np.asarray(sigma_eta2, dtype=float)) / LN2


def kld_conditional(
    W_c: np.ndarray,
    H: np.ndarray,
    k: int,
    sigma_eta2: float,
    path_gain: float = 1.0,
    constellation: Constellation | None = None,
) -> float:
    """Comm KLD (bits) of UE ``k`` for a given precoder and channel."""
    con = constellation or build_constellation(4)
    K = H.shape[1]
    gains = np.full(K, path_gain)
    return float(kld_conditional_all(W_c, H, gains, sigma_eta2, con)[k])


def pairwise_kld_bits(mu_n: complex, mu_m: complex, variance: float) -> float:
    """KLD in bits between ``CN(mu_n, v)`` and ``CN(mu_m, v)``."""
    return abs(mu_n - mu_m) ** 2 / variance / LN2


# --------------------------------------------------------------------------
# BER simulation


@dataclass(frozen=True)
class BerResult:
    ber: np.ndarray
    errors: np.ndarray
    bits: int


def _constellation_offset(con: Constellation) -> float:
    return float(np.angle(con.symbols[0]))


def simulate_ber(
    cfg: ScenarioConfig,
    W_c: np.ndarray,
    Wr: np.ndarray | None,
    channels: ChannelSet,
    n_symbols: int,
    rng: np.random.Generator,
    sigma_n2: float | None = None,
    constellation: Constellation | None = None,
    chunk_frames: int = 200,
) -> BerResult:
    """Monte Carlo bit error rate per UE.

    Frames of ``L`` snapshots are simulated. Each frame carries fresh
    comm symbols and noise, and the radar waveform snapshots ``W_{r,l}``
    modulated by a random unit-modulus phase per target that stays fixed
    over the frame. Each UE equalises by its own effective scalar gain and
    makes a minimum-distance decision.
    """
    con = constellation or build_constellation(cfg.M)
    s2 = noise_variance(cfg) if sigma_n2 is None else sigma_n2
    K, L = W_c.shape[1], cfg.L
    if n_symbols < 1000:
        warnings.warn(f"BER run with only {n_symbols} symbols", InsufficientTrials, stacklevel=2)
    H = channels.H
    amp = channels.pathloss_amp
    Hc = amp[:, None] * (H.T @ W_c)
    eff = np.diag(Hc).copy()
    if Wr is not None:
        Hr = amp[:, None, None] * np.einsum("nk,nlt->klt", H, Wr)
    n_frames = -(-int(n_symbols) // L)
    errors = np.zeros(K, dtype=np.int64)
    offset = _constellation_offset(con)
    noise_scale = math.sqrt(s2 / 2)
    done = 0
    while done < n_frames:
        F = min(chunk_frames, n_frames - done)
        tx = rng.integers(0, con.M, size=(F, K, L))
        S = con.symbols[tx]
        y = np.einsum("ki,fil->fkl", Hc, S)
        if Wr is not None:
            phase = np.exp(2j * np.pi * rng.random((F, Wr.shape[2])))
            y = y + np.einsum("klt,ft->fkl", Hr, phase)
        y = y + noise_scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
        with np.errstate(divide="ignore", invalid="ignore"):
            z = y / eff[None, :, None]
        z = np.where(np.isfinite(z), z, 0.0)
        zk = np.ascontiguousarray(z.transpose(1, 0, 2).reshape(K, F * L))
        txk = np.ascontiguousarray(tx.transpose(1, 0, 2).reshape(K, F * L))
        errors += kernels.psk_bit_errors(zk, txk, con.M, offset, con.labels)
        done += F
    bits = n_frames * L * con.bits_per_symbol
    ber = errors / bits
    if np.any(errors < 10):
        warnings.warn("fewer than 10 bit errors for some UE; BER estimate is coarse", InsufficientTrials, stacklevel=2)
    return BerResult(ber=ber, errors=errors, bits=bits)
