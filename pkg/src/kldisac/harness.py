"""Monte Carlo sweeps, technique comparisons, aggregation and runtime profiles.

Every random draw is keyed by ``(seed, purpose, redraw[, target])`` and never
by SNR or technique, so records at different SNR points and for different
techniques share channels, targets and noise streams (paired seeds).
Results are reduced in a fixed order, which makes every record independent
of the worker count.
"""

from __future__ import annotations

import os
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import comm, radar
from .errors import ConfigError, EmptyInput, InsufficientTrials
from .gradients import IsacProblem, evaluate
from .optimizers import OptimizerParams, run_kcop, run_kiop, run_krop
from .scenario import (
    ScenarioConfig,
    build_constellation,
    cic_waveform,
    draw_channels,
    draw_targets,
    noise_variance,
    stream,
    validate_config,
)

TECHNIQUES = ("baseline", "krop", "kcop", "kiop")
Z95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class SweepSpec:
    """What to simulate at every SNR point.

    ``trials_per_point`` target-present frames per target are split evenly
    over ``channel_redraws`` channel/target draws; the same number of
    held-out noise-only frames estimates the false-alarm rate, and
    ``calibration_trials`` noise-only frames per redraw and beam set the
    threshold. ``ber_symbols`` symbols per UE and redraw feed the BER.
    """

    snr_points_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    technique: str = "baseline"
    trials_per_point: int = 2000
    channel_redraws: int = 10
    seed: int = 0
    ber_symbols: int = 100_000
    calibration_trials: int = 2000
    p_fa: float = 1e-2
    optimizer: OptimizerParams = field(default_factory=OptimizerParams)

    def __post_init__(self):
        object.__setattr__(self, "snr_points_db", tuple(float(s) for s in self.snr_points_db))
        pts = self.snr_points_db
        if not pts or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigError("snr_points_db must be non-empty and strictly ascending")
        if self.technique not in TECHNIQUES:
            raise ConfigError(f"technique must be one of {TECHNIQUES}")
        if self.trials_per_point < 1 or self.channel_redraws < 1:
            raise ConfigError("trials_per_point and channel_redraws must be at least 1")
        if self.ber_symbols < 1 or self.calibration_trials < 1:
            raise ConfigError("ber_symbols and calibration_trials must be at least 1")
        if not 0 < self.p_fa < 1:
            raise ConfigError("p_fa must lie in (0, 1)")

    @property
    def trials_per_redraw(self) -> int:
        return -(-self.trials_per_point // self.channel_redraws)

    def replace(self, **kw) -> "SweepSpec":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SweepSpec(**d)


@dataclass
class Estimate:
    """Point estimate with a 95% interval; arrays for per-entity metrics."""

    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n: np.ndarray

    def half_width(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))


@dataclass
class RedrawResult:
    """Raw outcome of one channel/target redraw at one SNR point."""

    redraw: int
    kld_r: np.ndarray
    kld_c: np.ndarray
    detections: np.ndarray
    h1_trials: int
    false_alarms: np.ndarray
    h0_trials: int
    bit_errors: np.ndarray
    bits: int
    mse: np.ndarray
    present: np.ndarray
    timings: dict
    trace: dict | None = None
    flags: tuple = ()


@dataclass
class MetricsRecord:
    """Aggregated metrics at one SNR point for one technique."""

    snr_db: float
    technique: str
    kld_r: Estimate
    p_d: Estimate
    p_fa: Estimate
    kld_c: Estimate
    ber: Estimate
    mse: Estimate
    mse_overall: Estimate
    kld_isac: Estimate
    redraws: int
    wallclock: dict
    per_redraw: dict
    flags: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    traces: list = field(default_factory=list)


# --------------------------------------------------------------------------
# interval helpers


def wilson_interval(successes, n, z: float = Z95):
    """Wilson score interval for binomial proportions (vectorised)."""
    k = np.asarray(successes, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = k / n
        den = 1.0 + z**2 / n
        centre = (p + z**2 / (2 * n)) / den
        half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    return p, np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


def proportion_estimate(successes, n) -> Estimate:
    p, lo, hi = wilson_interval(successes, n)
    return Estimate(p, lo, hi, np.broadcast_to(np.asarray(n), np.shape(p)).copy())


def mean_estimate(values, axis: int = 0) -> Estimate:
    """Mean with a normal standard-error interval along ``axis``.

    Non-finite entries are ignored. A single sample yields a zero-width
    interval.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInput("no samples to aggregate")
    mask = np.isfinite(v)
    n = mask.sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(mask, v, 0.0)
        mean = s.sum(axis=axis) / n
        dev = np.where(mask, v - np.expand_dims(mean, axis), 0.0)
        var = (dev**2).sum(axis=axis) / np.maximum(n - 1, 1)
        se = np.sqrt(var / n)
    se = np.where(n > 1, se, 0.0)
    return Estimate(mean, mean - Z95 * se, mean + Z95 * se, n)


def spearman(x, y) -> float:
    """Spearman rank correlation, nan when either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(stats.spearmanr(x, y).statistic)


# --------------------------------------------------------------------------
# one redraw


def design_waveforms(technique: str, prob: IsacProblem, Wr0: np.ndarray, Wc0: np.ndarray, params: OptimizerParams):
    """Return ``(Wr, Wc, trace)`` for a technique from the CIC/ZF baseline pair."""
    if technique == "baseline":
        return Wr0, Wc0, None
    if technique == "krop":
        res = run_krop(prob, Wc0, Wr0, params)
        return res.Wr, Wc0, res.trace
    if technique == "kcop":
        res = run_kcop(prob, Wr0, 0.9 * Wc0, params)
        return Wr0, res.Wc, res.trace
    if technique == "kiop":
        res = run_kiop(prob, Wr0, Wc0, params)
        return res.Wr, res.Wc, res.trace
    raise ConfigError(f"unknown technique {technique!r}")


def simulate_redraw(cfg: ScenarioConfig, spec: SweepSpec, snr_db: float, redraw: int) -> RedrawResult:
    """Design waveforms and run every Monte Carlo estimate for one redraw."""
    seed = spec.seed
    con = build_constellation(cfg.M)
    s2 = noise_variance(cfg, snr_db)
    timings = {}
    flags = []
    t0 = time.perf_counter()
    channels = draw_channels(cfg, stream(seed, "channel", redraw))
    targets = draw_targets(cfg, stream(seed, "target", redraw))
    Wc0 = comm.zf_precoder(channels.H, cfg.powers).W
    Wr0 = cic_waveform(cfg, stream(seed, "cic", redraw))
    prob = IsacProblem.from_scenario(cfg, channels, targets, s2, con)
    t1 = time.perf_counter()
    Wr, Wc, trace = design_waveforms(spec.technique, prob, Wr0, Wc0, spec.optimizer)
    t2 = time.perf_counter()
    if trace is not None:
        flags.extend(trace.flags)
        if trace.exit_reason != "converged":
            flags.append(trace.exit_reason)
    ev = evaluate(prob, Wr, Wc, comm="conditional", grad=False)
    T = cfg.T
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientTrials)
        taus = radar.calibrate_thresholds(
            Wr, Wc, s2, spec.p_fa, spec.calibration_trials,
            [stream(seed, "calibration", redraw, t) for t in range(T)], con,
        )
        t3 = time.perf_counter()
        det = radar.run_detection(
            Wr, Wc, targets.G, targets.present, s2, taus, spec.trials_per_redraw,
            [(stream(seed, "h1", redraw, t), stream(seed, "h0", redraw, t)) for t in range(T)], con,
        )
        t4 = time.perf_counter()
        ber = comm.simulate_ber(
            cfg, Wc, Wr, channels, spec.ber_symbols, stream(seed, "ber", redraw), sigma_n2=s2, constellation=con
        )
        t5 = time.perf_counter()
    for w in caught:
        if issubclass(w.category, InsufficientTrials):
            tag = "coarse_calibration" if "calibration" in str(w.message) else "coarse_ber"
            if tag not in flags:
                flags.append(tag)
    mse = np.empty(T)
    for t in range(T):
        rep = radar.mse_report(
            s2, cfg.N, cfg.P_r, float(det.p_d[t]), float(det.p_fa[t]), det.mse_hit[t], det.mse_miss[t], det.mse_fa[t]
        )
        mse[t] = rep.overall
    timings.update(setup=t1 - t0, optimize=t2 - t1, calibrate=t3 - t2, detect=t4 - t3, ber=t5 - t4)
    return RedrawResult(
        redraw=redraw,
        kld_r=ev.kld_r,
        kld_c=ev.kld_c,
        detections=det.detections,
        h1_trials=det.h1_trials,
        false_alarms=det.false_alarms,
        h0_trials=det.h0_trials,
        bit_errors=ber.errors,
        bits=ber.bits,
        mse=mse,
        present=np.asarray(targets.present, dtype=bool),
        timings=timings,
        trace=None if trace is None else trace.to_dict(),
        flags=tuple(flags),
    )


# --------------------------------------------------------------------------
# aggregation


def aggregate_metrics(snr_db: float, technique: str, results, failures=()) -> MetricsRecord:
    """Fold redraw results into one record in redraw-index order.

    Proportions (P_D, P_FA, BER) pool counts over redraws and get Wilson
    intervals; KLDs and MSE get standard-error intervals across redraws.
    """
    results = sorted(results, key=lambda r: r.redraw)
    if not results:
        raise EmptyInput("no successful redraws to aggregate")
    kld_r = np.stack([r.kld_r for r in results])
    kld_c = np.stack([r.kld_c for r in results])
    present = np.stack([r.present for r in results])
    det = np.stack([r.detections for r in results])
    h1 = np.stack([np.where(r.present, r.h1_trials, 0) for r in results])
    fa = np.stack([r.false_alarms for r in results])
    h0 = np.array([r.h0_trials for r in results])
    errs = np.stack([r.bit_errors for r in results])
    bits = np.array([r.bits for r in results])
    mse = np.stack([r.mse for r in results])
    isac = kld_r.mean(axis=1) + kld_c.mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_d_redraw = np.where(present, det / np.maximum(h1, 1), np.nan)
    wall = {}
    for r in results:
        for k, v in r.timings.items():
            wall[k] = wall.get(k, 0.0) + v
    flags = sorted({f for r in results for f in r.flags})
    return MetricsRecord(
        snr_db=float(snr_db),
        technique=technique,
        kld_r=mean_estimate(kld_r),
        p_d=proportion_estimate(det.sum(axis=0), h1.sum(axis=0)),
        p_fa=proportion_estimate(fa.sum(axis=0), np.full(fa.shape[1], h0.sum())),
        kld_c=mean_estimate(kld_c),
        ber=proportion_estimate(errs.sum(axis=0), np.full(errs.shape[1], bits.sum())),
        mse=mean_estimate(mse),
        mse_overall=mean_estimate(mse.mean(axis=1)),
        kld_isac=mean_estimate(isac),
        redraws=len(results),
        wallclock=wall,
        per_redraw={
            "redraw": [r.redraw for r in results],
            "kld_r": kld_r,
            "kld_c": kld_c,
            "kld_isac": isac,
            "p_d": p_d_redraw,
            "mse": mse,
        },
        flags=flags,
        failures=list(failures),
        traces=[r.trace for r in results if r.trace is not None],
    )


def failed_record(snr_db: float, technique: str, cfg: ScenarioConfig, failures) -> MetricsRecord:
    nan_t = Estimate(*(np.full(cfg.T, np.nan) for _ in range(3)), np.zeros(cfg.T))
    nan_k = Estimate(*(np.full(cfg.K, np.nan) for _ in range(3)), np.zeros(cfg.K))
    nan_1 = Estimate(*(np.array(np.nan) for _ in range(3)), np.array(0))
    return MetricsRecord(
        snr_db=float(snr_db), technique=technique, kld_r=nan_t, p_d=nan_t, p_fa=nan_t, kld_c=nan_k, ber=nan_k,
        mse=nan_t, mse_overall=nan_1, kld_isac=nan_1, redraws=0, wallclock={}, per_redraw={},
        flags=["point_failed"], failures=list(failures),
    )


# --------------------------------------------------------------------------
# sweeps


def _task(args):
    cfg, spec, snr, r = args
    try:
        return snr, r, simulate_redraw(cfg, spec, snr, r), None
    except Exception as exc:  # isolated per redraw; recorded in the record
        return snr, r, None, f"redraw {r}: {type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def worker_count() -> int:
    raw = os.environ.get("KLDISAC_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"KLDISAC_WORKERS must be an integer, got {raw!r}") from exc
    return max(1, n)


def _run_sweep(cfg: ScenarioConfig, spec: SweepSpec, workers: int | None = None) -> list:
    validate_config(cfg)
    workers = worker_count() if workers is None else max(1, int(workers))
    tasks = [(cfg, spec, snr, r) for snr in spec.snr_points_db for r in range(spec.channel_redraws)]
    if workers == 1:
        outs = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_task, tasks))
    records = []
    for snr in spec.snr_points_db:
        ok = [res for s, _, res, err in outs if s == snr and res is not None]
        bad = [err for s, _, res, err in outs if s == snr and err is not None]
        if ok:
            rec = aggregate_metrics(snr, spec.technique, ok, bad)
            if bad:
                rec.flags.append("redraw_failed")
        else:
            rec = failed_record(snr, spec.technique, cfg, bad)
        records.append(rec)
    return records


def run_baseline_sweep(cfg: ScenarioConfig, spec: SweepSpec, workers: int | None = None) -> list:
    """CIC radar waveform with the ZF precoder at every SNR point."""
    return _run_sweep(cfg, spec.replace(technique="baseline"), workers)


def run_technique_sweep(cfg: ScenarioConfig, spec: SweepSpec, workers: int | None = None) -> list:
    """Same pipeline with an optimizer designing the waveforms per redraw."""
    if spec.technique == "baseline":
        raise ConfigError("run_technique_sweep needs an optimizer technique; use run_baseline_sweep")
    return _run_sweep(cfg, spec, workers)


def run_sweep(cfg: ScenarioConfig, spec: SweepSpec, workers: int | None = None) -> list:
    return _run_sweep(cfg, spec, workers)


def comonotonicity(records) -> dict:
    """Rank correlations between KLDs and their operational metrics across a sweep.

    Radar: mean KLD_r against mean P_D over all (point, target) pairs.
    Comm: mean KLD_c against -log BER over all (point, UE) pairs.
    """
    recs = [r for r in records if r.redraws > 0]
    kr = np.concatenate([np.ravel(r.kld_r.mean) for r in recs]) if recs else np.empty(0)
    pd = np.concatenate([np.ravel(r.p_d.mean) for r in recs]) if recs else np.empty(0)
    kc = np.concatenate([np.ravel(r.kld_c.mean) for r in recs]) if recs else np.empty(0)
    ber = np.concatenate([np.ravel(r.ber.mean) for r in recs]) if recs else np.empty(0)
    keep = np.isfinite(pd)
    with np.errstate(divide="ignore"):
        nlb = -np.log(ber)
    return {"radar": spearman(kr[keep], pd[keep]), "comm": spearman(kc, nlb)}


# --------------------------------------------------------------------------
# runtime profile


@dataclass
class ProfileRow:
    N: int
    technique: str
    median_run: float
    iterations: int
    per_iteration: float
    overhead: float
    growth: float = float("nan")
    cubic_ratio: float = float("nan")


def profile_runtime(
    cfg: ScenarioConfig,
    N_list,
    techniques=("krop", "kcop", "kiop"),
    iterations: int = 10,
    repeats: int = 3,
    snr_db: float = 10.0,
    seed: int = 0,
    params: OptimizerParams | None = None,
) -> list:
    """Median wall-clock per optimizer run at fixed iteration caps.

    Every run executes exactly ``iterations`` outer iterations (the
    tolerance is set below machine precision) so the three methods are
    compared at matched settings. ``overhead`` is the median time of a
    zero-iteration call. ``growth`` is the per-iteration time ratio to the
    previous ``N`` and ``cubic_ratio`` that ratio divided by the cubic
    model's prediction.
    """
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ConfigError("N_list must be strictly ascending")
    if isinstance(techniques, str):
        techniques = (techniques,)
    base = (params or OptimizerParams()).replace(max_iter=iterations, eps=1e-300)
    zero = base.replace(max_iter=0)
    rows = []
    con = build_constellation(cfg.M)
    for tech in techniques:
        prev = None
        for N in N_list:
            c = cfg.replace(N=N)
            validate_config(c)
            s2 = noise_variance(c, snr_db)
            channels = draw_channels(c, stream(seed, "channel", 0))
            targets = draw_targets(c, stream(seed, "target", 0))
            Wc0 = comm.zf_precoder(channels.H, c.powers).W
            Wr0 = cic_waveform(c, stream(seed, "cic", 0))
            prob = IsacProblem.from_scenario(c, channels, targets, s2, con)
            runs, iters, over = [], 0, []
            for _ in range(repeats):
                t0 = time.perf_counter()
                design_waveforms(tech, prob, Wr0, Wc0, zero)
                over.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
                _, _, trace = design_waveforms(tech, prob, Wr0, Wc0, base)
                runs.append(time.perf_counter() - t0)
                iters = len(trace)
            med = float(np.median(runs))
            row = ProfileRow(N, tech, med, iters, med / max(iters, 1), float(np.median(over)))
            if prev is not None:
                row.growth = row.per_iteration / prev.per_iteration
                row.cubic_ratio = row.growth / (N / prev.N) ** 3
            rows.append(row)
            prev = row
    return rows
