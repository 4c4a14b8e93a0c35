"""Radar subsystem: beam covariances, KLD, LS estimation and GLRT detection.

Returns are modelled at the post-matched-filter level as
``y_l = G_t x_{t,l} + n_l`` with ``G_t = radar_amp[t] * H_t`` and
``x_{t,l} = w_{r,t,l} + W_c s_l``. Under the no-target hypothesis only the
noise remains.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InsufficientTrials, NumericalSingularity
from .scenario import Constellation, complex_normal

LN2 = math.log(2.0)
RCOND = 1e-10
SPREAD_LIMIT = 1e14


def beam_covariance(Wr: np.ndarray, W_c: np.ndarray | None, t: int) -> np.ndarray:
    """``(1/L) W_{r,t} W_{r,t}^H + W_c W_c^H`` for beam ``t``."""
    W = Wr[:, :, t]
    R = W @ W.conj().T / W.shape[1]
    if W_c is not None:
        R = R + W_c @ W_c.conj().T
    return 0.5 * (R + R.conj().T)


def whitened_spectrum(G: np.ndarray, R: np.ndarray, sigma_n2: float) -> np.ndarray:
    """Eigenvalues of ``G R G^H / sigma_n2`` clipped at zero."""
    if not sigma_n2 > 0 or not np.isfinite(sigma_n2):
        raise NumericalSingularity(f"noise variance must be positive, got {sigma_n2}")
    A = G @ R @ G.conj().T
    s = np.linalg.eigvalsh(0.5 * (A + A.conj().T)) / sigma_n2
    if not np.all(np.isfinite(s)) or s.max(initial=0.0) > SPREAD_LIMIT:
        raise NumericalSingularity("receive covariance is too ill-conditioned")
    return np.clip(s, 0.0, None)


def kld_from_spectrum(s: np.ndarray, reverse: bool = False) -> float:
    """Divergence in bits from whitened eigenvalues.

    ``reverse=False`` gives the no-target to target direction
    ``sum(log(1+s) - s/(1+s))``; ``reverse=True`` gives
    ``sum(s - log(1+s))``.
    """
    if reverse:
        return float(np.sum(s - np.log1p(s)) / LN2)
    return float(np.sum(np.log1p(s) - s / (1.0 + s)) / LN2)


def radar_kld(
    H_t: np.ndarray, R_t: np.ndarray, sigma_n2: float, radar_amp: float = 1.0, reverse: bool = False
) -> float:
    """Radar KLD (bits) between noise-only and target-present returns.

    Evaluates ``(ln det R2 + sigma_n2 tr R2^-1 - N (1 + ln sigma_n2)) / ln 2``
    with ``R2 = a**2 H R H^H + sigma_n2 I`` through the whitened spectrum,
    which stays accurate when the target term is tiny next to the noise.
    ``reverse=True`` returns the opposite direction as a diagnostic.
    """
    s = whitened_spectrum(radar_amp * np.asarray(H_t), R_t, sigma_n2)
    return kld_from_spectrum(s, reverse=reverse)


# --------------------------------------------------------------------------
# estimation and detection


def estimate_response(Y: np.ndarray, X: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Least-squares response ``(Y X^H)(X X^H)^+``.

    Works on single (N, L) inputs or batches (B, N, L). The pseudo-inverse
    drops singular values below ``rcond`` times the largest.
    """
    Xh = np.conj(np.swapaxes(X, -1, -2))
    gram = X @ Xh
    pinv = np.linalg.pinv(gram, rcond=rcond, hermitian=True)
    return (Y @ Xh) @ pinv


def glrt_statistic(
    Y: np.ndarray, G_hat: np.ndarray, R_s: np.ndarray, sigma_n2: float
) -> np.ndarray | float:
    """Snapshot-averaged GLRT value ``(1/L) sum_l y_l^H (I + R1^-1) y_l``.

    ``R1 = G_hat R_s G_hat^H + sigma_n2 I``. Accepts a single (N, L) block or
    a batch (B, N, L) with matching batched ``G_hat`` and ``R_s``.
    """
    single = Y.ndim == 2
    Y3 = Y[None] if single else Y
    G3 = G_hat[None] if G_hat.ndim == 2 else G_hat
    R3 = R_s[None] if R_s.ndim == 2 else R_s
    N = Y3.shape[1]
    eye = np.eye(N)
    R1 = G3 @ R3 @ np.conj(np.swapaxes(G3, -1, -2)) + sigma_n2 * eye
    R1 = 0.5 * (R1 + np.conj(np.swapaxes(R1, -1, -2)))
    try:
        inv = np.linalg.inv(R1)
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularity("estimated receive covariance is singular") from exc
    A = eye + 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))
    A = np.broadcast_to(A, (Y3.shape[0], N, N))
    stat = kernels.quadform_mean(Y3, A)
    if not np.all(np.isfinite(stat)):
        raise NumericalSingularity("non-finite GLRT statistic")
    return float(stat[0]) if single else stat


@dataclass
class TrialBatch:
    """Per-trial records for one target beam under one hypothesis."""

    statistic: np.ndarray
    sq_error: np.ndarray
    est_energy: np.ndarray


def _frames(
    W_t: np.ndarray,
    W_c: np.ndarray | None,
    G: np.ndarray | None,
    sigma_n2: float,
    B: int,
    rng: np.random.Generator,
    constellation: Constellation | None,
):
    N, L = W_t.shape
    if W_c is not None and constellation is not None:
        idx = rng.integers(0, constellation.M, size=(B, W_c.shape[1], L))
        X = W_t[None] + W_c @ constellation.symbols[idx]
    else:
        X = np.broadcast_to(W_t, (B, N, L))
    noise = complex_normal(rng, (B, N, L), sigma_n2)
    Y = noise if G is None else G @ X + noise
    return X, Y


def simulate_trials(
    W_t: np.ndarray,
    W_c: np.ndarray | None,
    G: np.ndarray | None,
    sigma_n2: float,
    trials: int,
    rng: np.random.Generator,
    constellation: Constellation | None = None,
    batch: int = 500,
) -> TrialBatch:
    """Run the estimator and GLRT on ``trials`` independent frames.

    ``G=None`` simulates the no-target hypothesis. Comm symbols are redrawn
    per frame when ``W_c`` and ``constellation`` are given.
    """
    stats, errs, energy = [], [], []
    done = 0
    while done < trials:
        B = min(batch, trials - done)
        X, Y = _frames(W_t, W_c, G, sigma_n2, B, rng, constellation)
        G_hat = estimate_response(Y, X)
        R_s = X @ np.conj(np.swapaxes(X, -1, -2)) / X.shape[-1]
        stats.append(glrt_statistic(Y, G_hat, R_s, sigma_n2))
        truth = 0.0 if G is None else G
        errs.append(np.sum(np.abs(G_hat - truth) ** 2, axis=(1, 2)))
        energy.append(np.sum(np.abs(G_hat) ** 2, axis=(1, 2)))
        done += B
    return TrialBatch(np.concatenate(stats), np.concatenate(errs), np.concatenate(energy))


def calibrate_threshold(
    h0_statistics: np.ndarray, P_FA: float
) -> float:
    """Neyman-Pearson threshold: empirical ``1 - P_FA`` quantile of H0 values."""
    h0 = np.asarray(h0_statistics, dtype=float)
    if h0.size * P_FA < 100:
        warnings.warn(
            f"{h0.size} calibration trials give fewer than 100 expected exceedances at P_FA={P_FA}",
            InsufficientTrials,
            stacklevel=2,
        )
    return float(np.quantile(h0, 1.0 - P_FA))


def calibrate_thresholds(
    Wr: np.ndarray,
    W_c: np.ndarray | None,
    sigma_n2: float,
    P_FA: float,
    trials: int,
    rngs,
    constellation: Constellation | None = None,
) -> np.ndarray:
    """Per-beam thresholds from noise-only Monte Carlo with the estimator in the loop.

    ``rngs`` supplies one generator per target beam.
    """
    T = Wr.shape[2]
    taus = np.empty(T)
    for t in range(T):
        h0 = simulate_trials(Wr[:, :, t], W_c, None, sigma_n2, trials, rngs[t], constellation)
        taus[t] = calibrate_threshold(h0.statistic, P_FA)
    return taus


@dataclass
class DetectionResult:
    """Detection counts and estimator errors per target beam."""

    detections: np.ndarray
    h1_trials: int
    false_alarms: np.ndarray
    h0_trials: int
    mse_hit: list = field(default_factory=list)
    mse_miss: list = field(default_factory=list)
    mse_fa: list = field(default_factory=list)

    @property
    def p_d(self) -> np.ndarray:
        return self.detections / self.h1_trials

    @property
    def p_fa(self) -> np.ndarray:
        return self.false_alarms / self.h0_trials


def run_detection(
    Wr: np.ndarray,
    W_c: np.ndarray | None,
    G: np.ndarray,
    present: np.ndarray,
    sigma_n2: float,
    taus: np.ndarray,
    trials: int,
    rngs,
    constellation: Constellation | None = None,
    h0_trials: int | None = None,
) -> DetectionResult:
    """Monte Carlo detection and false-alarm rates for every target beam.

    Each beam gets ``trials`` target-present frames (when ``present[t]``)
    and ``h0_trials`` noise-only frames. ``rngs[t]`` is a pair of generators
    for the two hypotheses.
    """
    T = Wr.shape[2]
    h0_trials = trials if h0_trials is None else h0_trials
    det = np.zeros(T, dtype=np.int64)
    fa = np.zeros(T, dtype=np.int64)
    hit, miss, fal = [], [], []
    for t in range(T):
        rng1, rng0 = rngs[t]
        if present[t]:
            h1 = simulate_trials(Wr[:, :, t], W_c, G[t], sigma_n2, trials, rng1, constellation)
            d = h1.statistic > taus[t]
            det[t] = int(d.sum())
            hit.append(h1.sq_error[d])
            miss.append(np.full(int((~d).sum()), np.sum(np.abs(G[t]) ** 2)))
        else:
            hit.append(np.empty(0))
            miss.append(np.empty(0))
        h0 = simulate_trials(Wr[:, :, t], W_c, None, sigma_n2, h0_trials, rng0, constellation)
        f = h0.statistic > taus[t]
        fa[t] = int(f.sum())
        fal.append(h0.est_energy[f])
    return DetectionResult(det, trials, fa, h0_trials, hit, miss, fal)


@dataclass(frozen=True)
class MseReport:
    mse_11: float
    mse_10: float
    mse_01: float
    p_d: float
    p_fa: float
    overall: float
    analytic_11: float
    analytic_01: float
    ls_reference_11: float


def overall_mse(p_d: float, p_fa: float, mse_11: float, mse_10: float, mse_01: float, p_h1: float = 0.5) -> float:
    """Unconditional MSE combining hit, miss and false-alarm errors."""
    return p_h1 * ((1 - p_d) * mse_01 + p_d * mse_11) + (1 - p_h1) * p_fa * mse_10


def _mean_or_nan(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.mean()) if x.size else float("nan")


def mse_report(
    sigma_n2: float,
    N: int,
    P_r: float,
    p_d: float,
    p_fa: float,
    hit_errors,
    miss_errors,
    fa_energy,
    X: np.ndarray | None = None,
) -> MseReport:
    """Conditional and overall MSE of the response estimate.

    Empirical conditional MSEs are sample means; an empty class contributes
    zero weight to ``overall`` when its probability is zero. Analytic
    references ``sigma_n2 N / P_r`` and ``N**2 sigma_n2`` are returned with
    the exact LS error ``sigma_n2 N tr((X X^H)^-1)`` when ``X`` is given.
    """
    m11, m10, m01 = (_mean_or_nan(v) for v in (hit_errors, fa_energy, miss_errors))
    terms = {
        "m11": m11 if p_d > 0 else 0.0,
        "m01": m01 if p_d < 1 else 0.0,
        "m10": m10 if p_fa > 0 else 0.0,
    }
    terms = {k: (0.0 if math.isnan(v) else v) for k, v in terms.items()}
    overall = overall_mse(p_d, p_fa, terms["m11"], terms["m10"], terms["m01"])
    ls_ref = float("nan")
    if X is not None:
        ls_ref = float(sigma_n2 * N * np.trace(np.linalg.pinv(X @ X.conj().T, hermitian=True)).real)
    return MseReport(
        mse_11=m11,
        mse_10=m10,
        mse_01=m01,
        p_d=p_d,
        p_fa=p_fa,
        overall=overall,
        analytic_11=sigma_n2 * N / P_r if P_r > 0 else float("inf"),
        analytic_01=N**2 * sigma_n2,
        ls_reference_11=ls_ref,
    )
