"""Scenario configuration, random draws, constellations and shared constants.

Every stochastic helper takes an explicit :class:`numpy.random.Generator`.
Generators are derived from a root seed plus an integer key path through
:func:`stream`, so any draw can be reproduced in isolation regardless of the
order in which work is scheduled.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ConfigParseError,
    DegenerateGeometry,
    NonPositiveDistance,
    PowerSplitViolation,
    UnsupportedOrder,
)

POWER_TOL = 1e-9

# Integer tags for the purpose component of a stream key.
PURPOSES = {
    "channel": 1,
    "target": 2,
    "cic": 3,
    "h0": 4,
    "h1": 5,
    "ber": 6,
    "calibration": 7,
    "init": 8,
    "validation": 9,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and algorithmic parameters of one ISAC scenario.

    Powers are normalised so that ``P_r + P_c == P_T``. ``snr_db`` is the
    radar power-to-noise sweep value; see :func:`noise_variance` for how it
    maps to the receiver noise variance.
    """

    N: int = 20
    K: int = 3
    T: int = 3
    L: int = 100
    P_T: float = 1.0
    P_r: float = 0.5
    P_c: float = 0.5
    zeta: float = 3.0
    d_c: tuple[float, ...] = (150.0, 210.0, 100.0)
    d_r: tuple[float, ...] = (100.0, 115.0, 95.0)
    sigma_h2: float = 1.0
    snr_db: float = 10.0
    M: int = 4
    P_FA: float = 1e-2
    A_t: tuple[float, ...] = (10.0, 10.0, 10.0)
    B_k: tuple[float, ...] = (10.0, 10.0, 10.0)
    seed: int = 0
    trials: int = 2000
    radar_pathloss_sign: int = -1
    snr_ref_distance: float = 50.0
    p_k: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("d_c", "d_r", "A_t", "B_k", "p_k"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(value)))

    def replace(self, **changes) -> "ScenarioConfig":
        """Return a copy with ``changes`` applied (not validated)."""
        return dataclasses.replace(self, **changes)

    @property
    def powers(self) -> np.ndarray:
        """Per-UE power weights, defaulting to an equal split of ``P_c``."""
        if self.p_k is None:
            return np.full(self.K, self.P_c / self.K)
        return np.asarray(self.p_k, dtype=float)

    @property
    def comm_gain(self) -> np.ndarray:
        """Per-UE power pathloss ``d_c**-zeta``."""
        return np.asarray(self.d_c, dtype=float) ** (-self.zeta)

    @property
    def radar_amp(self) -> np.ndarray:
        """Per-target amplitude factor ``d_r**(sign * zeta / 2)``."""
        return np.asarray(self.d_r, dtype=float) ** (self.radar_pathloss_sign * self.zeta / 2)

    @property
    def sigma_n2(self) -> float:
        return noise_variance(self)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for key, value in out.items():
            if isinstance(value, tuple):
                out[key] = list(value)
        return out


CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _is_power_of_two(m: int) -> bool:
    return m >= 2 and (m & (m - 1)) == 0


def validate_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check every invariant of ``cfg`` and return it unchanged.

    Raises
    ------
    DegenerateGeometry
        If ``N <= K`` or a count is non-positive.
    PowerSplitViolation
        If ``P_r + P_c`` differs from ``P_T`` or a power is negative.
    NonPositiveDistance
        If any distance is not strictly positive.
    UnsupportedOrder
        If ``M`` is not a power of two.
    """
    if cfg.K < 1 or cfg.N <= cfg.K:
        raise DegenerateGeometry(f"need N > K >= 1, got N={cfg.N}, K={cfg.K}")
    if cfg.T < 1 or cfg.L < 1:
        raise DegenerateGeometry(f"need T >= 1 and L >= 1, got T={cfg.T}, L={cfg.L}")
    if min(cfg.P_r, cfg.P_c) < 0 or abs(cfg.P_r + cfg.P_c - cfg.P_T) > POWER_TOL * max(1.0, cfg.P_T):
        raise PowerSplitViolation(f"P_r + P_c must equal P_T: {cfg.P_r} + {cfg.P_c} != {cfg.P_T}")
    if len(cfg.d_c) != cfg.K or len(cfg.B_k) != cfg.K:
        raise ConfigError(f"d_c and B_k need K={cfg.K} entries")
    if len(cfg.d_r) != cfg.T or len(cfg.A_t) != cfg.T:
        raise ConfigError(f"d_r and A_t need T={cfg.T} entries")
    if min(cfg.d_c) <= 0 or min(cfg.d_r) <= 0 or cfg.snr_ref_distance <= 0:
        raise NonPositiveDistance("all distances must be > 0")
    if not _is_power_of_two(int(cfg.M)):
        raise UnsupportedOrder(f"constellation order {cfg.M} is not a supported PSK order")
    if cfg.radar_pathloss_sign not in (-1, 1):
        raise ConfigError("radar_pathloss_sign must be +1 or -1")
    if cfg.sigma_h2 < 0:
        raise ConfigError("sigma_h2 must be >= 0")
    if not 0 < cfg.P_FA < 1:
        raise ConfigError("P_FA must lie in (0, 1)")
    if cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    if cfg.p_k is not None:
        if len(cfg.p_k) != cfg.K or min(cfg.p_k) < 0:
            raise ConfigError("p_k needs K non-negative entries")
        if sum(cfg.p_k) > cfg.P_c * (1 + POWER_TOL) + POWER_TOL:
            raise PowerSplitViolation("sum(p_k) exceeds P_c")
    return cfg


def noise_variance(cfg: ScenarioConfig, snr_db: float | None = None) -> float:
    """Receiver noise variance for a sweep value.

    ``sigma_n2 = P_r * d_ref**-zeta * 10**(-snr_db / 10)``, i.e. the sweep
    value is the radar power over noise after pathloss at the reference
    distance ``snr_ref_distance``. Setting the reference distance to 1
    recovers the bare ``P_r / sigma_n2`` axis.
    """
    snr = cfg.snr_db if snr_db is None else snr_db
    return float(cfg.P_r * cfg.snr_ref_distance ** (-cfg.zeta) * 10.0 ** (-snr / 10.0))


# --------------------------------------------------------------------------
# config files

def _coerce(name: str, value: Any) -> Any:
    f = CONFIG_FIELDS[name]
    default = f.default
    if name == "p_k":
        return None if value is None else tuple(float(v) for v in np.atleast_1d(value))
    if isinstance(default, tuple):
        return tuple(float(v) for v in np.atleast_1d(value))
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigParseError(f"{name} must be an integer, got {value}")
        return int(value)
    return float(value)


def config_from_dict(data: dict[str, Any], base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build a config from a flat mapping, rejecting unknown keys."""
    unknown = sorted(set(data) - set(CONFIG_FIELDS))
    if unknown:
        raise ConfigParseError(f"unknown config keys: {', '.join(unknown)}")
    base = base or ScenarioConfig()
    try:
        changes = {k: _coerce(k, v) for k, v in data.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigParseError(str(exc)) from exc
    return dataclasses.replace(base, **changes)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a JSON scenario file. Errors carry the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigParseError("top level must be an object", line=1)
    return config_from_dict(data)


def dump_config(cfg: ScenarioConfig, path: str | Path | None = None) -> str:
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# --------------------------------------------------------------------------
# random streams and draws

def stream(seed: int, *key: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``.

    String components are mapped through :data:`PURPOSES`; everything else
    must be a non-negative integer.
    """
    spawn_key = tuple(PURPOSES[k] if isinstance(k, str) else int(k) for k in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class ChannelSet:
    """Downlink channel ``H`` (N x K) and per-UE amplitude pathloss."""

    H: np.ndarray
    pathloss_amp: np.ndarray

    @property
    def gain(self) -> np.ndarray:
        return self.pathloss_amp**2


@dataclass(frozen=True)
class TargetSet:
    """Per-target response matrices ``H_t`` stacked as (T, N, N)."""

    H: np.ndarray
    present: np.ndarray
    radar_amp: np.ndarray

    @property
    def G(self) -> np.ndarray:
        """Effective responses ``radar_amp[t] * H_t``."""
        return self.radar_amp[:, None, None] * self.H


def draw_channels(cfg: ScenarioConfig, rng: np.random.Generator) -> ChannelSet:
    H = complex_normal(rng, (cfg.N, cfg.K), cfg.sigma_h2)
    return ChannelSet(H=H, pathloss_amp=np.asarray(cfg.d_c, dtype=float) ** (-cfg.zeta / 2))


def draw_targets(
    cfg: ScenarioConfig, rng: np.random.Generator, presence: Sequence[int] | None = None
) -> TargetSet:
    """Draw unit-variance Rayleigh responses for every target slot.

    Matrices are drawn even for absent targets so that the random stream
    consumption does not depend on ``presence``.
    """
    present = np.ones(cfg.T, dtype=int) if presence is None else np.asarray(presence, dtype=int)
    H = complex_normal(rng, (len(present), cfg.N, cfg.N))
    amp = np.asarray(cfg.d_r, dtype=float)[: len(present)] ** (cfg.radar_pathloss_sign * cfg.zeta / 2)
    return TargetSet(H=H, present=present, radar_amp=amp)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy PSK constellation with Gray bit labels."""

    symbols: np.ndarray
    labels: np.ndarray
    lam: float = field(default=0.0)

    @property
    def M(self) -> int:
        return len(self.symbols)

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.M)))

    @property
    def kld_scale(self) -> float:
        """``lam / (M (M - 1))``, the mean squared distance over ordered pairs."""
        return self.lam / (self.M * (self.M - 1))


def pairwise_lambda(symbols: np.ndarray) -> float:
    """Sum of ``|s_n - s_m|**2`` over ordered pairs with ``n != m``."""
    diff = symbols[:, None] - symbols[None, :]
    return float(np.sum(np.abs(diff) ** 2))


def build_constellation(M: int) -> Constellation:
    """PSK constellation of order ``M`` (QPSK uses the pi/4-rotated set)."""
    M = int(M)
    if not _is_power_of_two(M):
        raise UnsupportedOrder(f"unsupported constellation order {M}")
    offset = math.pi / 4 if M == 4 else 0.0
    idx = np.arange(M)
    symbols = np.exp(1j * (2 * np.pi * idx / M + offset))
    symbols = np.where(np.abs(symbols.real) < 1e-15, 1j * symbols.imag, symbols)
    symbols = np.where(np.abs(symbols.imag) < 1e-15, symbols.real + 0j, symbols)
    labels = idx ^ (idx >> 1)
    return Constellation(symbols=symbols, labels=labels, lam=pairwise_lambda(symbols))


def cic_waveform(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Identity-covariance radar waveform tensor of shape (N, L, T).

    Each slice is ``sqrt(P_r L / (N T)) * Q_t`` with ``Q_t Q_t^H = I`` so the
    per-beam sample covariance is ``P_r / (N T) * I``. When ``L < N`` an
    orthonormal row set is impossible and a Gaussian slice rescaled to the
    same power is used instead.
    """
    N, L, T = cfg.N, cfg.L, cfg.T
    Wr = np.empty((N, L, T), dtype=complex)
    scale = math.sqrt(cfg.P_r * L / (N * T))
    for t in range(T):
        G = complex_normal(rng, (L, N))
        if L >= N:
            Q, _ = np.linalg.qr(G)
            Wr[:, :, t] = scale * Q.conj().T
        else:
            S = G.T
            Wr[:, :, t] = S * math.sqrt(cfg.P_r * L / T) / np.linalg.norm(S)
    return Wr


def radar_power(Wr: np.ndarray) -> float:
    """``sum_t (1/L) ||W_{r,t}||_F**2`` for a (N, L, T) tensor."""
    return float(np.vdot(Wr, Wr).real / Wr.shape[1])
