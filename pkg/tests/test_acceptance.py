"""Acceptance criteria, one test each, at desk scale.

Every test prints a single ``criterion N: PASS|FAIL | ...`` line and then
asserts the same condition. Long sweeps run once and are shared across tests.
"""

import math
import time
import warnings

import numpy as np
import pytest

from kldisac.comm import kld_conditional_all, kld_zf_closed_form, pairwise_kld_bits, zf_directions, zf_precoder
from kldisac.gradients import IsacProblem, certify_gradients, joint_power, radar_power, random_instance
from kldisac.harness import SweepSpec, comonotonicity, profile_runtime, run_sweep, wilson_interval
from kldisac.optimizers import OptimizerParams, run_kcop, run_kiop, run_krop
from kldisac.radar import calibrate_thresholds, radar_kld, simulate_trials
from kldisac.scenario import (
    ScenarioConfig,
    build_constellation,
    cic_waveform,
    complex_normal,
    draw_channels,
    draw_targets,
    noise_variance,
    stream,
)

pytestmark = pytest.mark.slow

CFG = ScenarioConfig()
DESK = OptimizerParams(max_iter=300)
SPEC = SweepSpec(trials_per_point=2000, channel_redraws=10, optimizer=DESK)
MID_SNR = 10.0
TOP_SNR = 30.0


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


def gaussian_kl_bits(S0, S1):
    N = S0.shape[0]
    _, ld0 = np.linalg.slogdet(S0)
    _, ld1 = np.linalg.slogdet(S1)
    return float((np.trace(np.linalg.solve(S1, S0)).real - N + ld1 - ld0) / math.log(2))


_SWEEPS = {}


def sweep(technique):
    if technique not in _SWEEPS:
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            recs = run_sweep(CFG, SPEC.replace(technique=technique))
        _SWEEPS[technique] = (recs, time.perf_counter() - t0)
    return _SWEEPS[technique]


def at(records, snr):
    return next(r for r in records if r.snr_db == snr)


def paired(records, key):
    """(points x redraws x ...) array of a per-redraw quantity."""
    return np.stack([np.asarray(r.per_redraw[key]) for r in records])


# --------------------------------------------------------------------------


def test_criterion_1_gradient_certification(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    worst_key = ""
    for i in range(20):
        rng = stream(0, "validation", i)
        N = int(rng.integers(3, 9))
        K = int(rng.integers(1, min(3, N - 1) + 1))
        T = int(rng.integers(1, 3))
        L = int(rng.integers(1, 5))
        for k, v in certify_gradients(*random_instance(rng, N=N, K=K, T=T, L=L)).items():
            if v > worst:
                worst, worst_key = v, k
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 60
    report(capsys, 1, ok, f"20 instances, worst rel err {worst:.2e} ({worst_key}), {elapsed:.1f}s")


def test_criterion_2_kld_oracles(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    rad_err = 0.0
    for _ in range(50):
        H = complex_normal(rng, (4, 4))
        A = complex_normal(rng, (4, 4))
        R = A @ A.conj().T
        s2 = float(rng.uniform(0.1, 2.0))
        oracle = gaussian_kl_bits(s2 * np.eye(4), H @ R @ H.conj().T + s2 * np.eye(4))
        rad_err = max(rad_err, abs(radar_kld(H, R, s2) - oracle) / oracle)
    con = build_constellation(4)
    v = 0.5
    mc_err = 0.0
    for n, m in ((0, 1), (0, 2), (3, 1)):
        mu_n, mu_m = con.symbols[n], con.symbols[m]
        z = mu_n + complex_normal(rng, 1_000_000, v)
        llr = (np.abs(z - mu_m) ** 2 - np.abs(z - mu_n) ** 2) / v
        est = llr.mean() / math.log(2)
        mc_err = max(mc_err, abs(est - pairwise_kld_bits(mu_n, mu_m, v)) / pairwise_kld_bits(mu_n, mu_m, v))
    elapsed = time.perf_counter() - t0
    ok = rad_err <= 1e-10 and mc_err <= 0.02 and elapsed < 120
    report(capsys, 2, ok, f"radar max rel err {rad_err:.1e}, pairwise MC max rel err {mc_err:.4f}, {elapsed:.1f}s")


def test_criterion_3_zf_closed_form(capsys):
    t0 = time.perf_counter()
    cfg = CFG
    con = build_constellation(cfg.M)
    s2 = noise_variance(cfg, MID_SNR)
    gains = np.asarray(cfg.d_c) ** (-cfg.zeta)
    rng = stream(3, "channel")
    n = 10_000
    klds = np.empty((n, cfg.K))
    inv_norm = np.empty((n, cfg.K))
    for i in range(n):
        H = complex_normal(rng, (cfg.N, cfg.K))
        W = zf_precoder(H, cfg.powers).W
        klds[i] = kld_conditional_all(W, H, gains, s2, con)
        inv_norm[i] = 1.0 / np.sum(np.abs(zf_directions(H)) ** 2, axis=0)
    closed = np.array([kld_zf_closed_form(cfg, k, sigma_eta2=s2, constellation=con) for k in range(cfg.K)])
    ratio = klds.mean(axis=0) / closed
    m = inv_norm.mean()
    se = inv_norm.std(ddof=1) / math.sqrt(inv_norm.size)
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(np.abs(ratio - 1) <= 0.10)) and 17 - 3 * se <= m <= 18 + 3 * se and elapsed < 120
    report(
        capsys, 3, ok,
        f"mean/closed per UE {np.round(ratio, 4).tolist()}, E[1/||w~||^2]={m:.3f} (3 SE {3 * se:.3f}), {elapsed:.1f}s",
    )


def test_criterion_4_detector_calibration(capsys):
    t0 = time.perf_counter()
    con = build_constellation(CFG.M)
    s2 = noise_variance(CFG, MID_SNR)
    ch = draw_channels(CFG, stream(4, "channel", 0))
    Wc = zf_precoder(ch.H, CFG.powers).W
    Wr = cic_waveform(CFG, stream(4, "cic", 0))
    n = 100_000
    tau = calibrate_thresholds(Wr[:, :, :1], Wc, s2, 1e-2, n, [stream(4, "calibration")], con)[0]
    held = simulate_trials(Wr[:, :, 0], Wc, None, s2, n, stream(4, "h0"), con).statistic
    rate = float(np.mean(held > tau))
    _, lo, hi = wilson_interval(1e-2 * n, n)
    elapsed = time.perf_counter() - t0
    ok = lo <= rate <= hi and elapsed < 300
    report(capsys, 4, ok, f"held-out P_FA {rate:.5f}, Wilson 95% [{lo:.5f}, {hi:.5f}], {elapsed:.1f}s")


def test_criterion_5_estimator_mse(capsys):
    # unit noise and unit-variance responses without pathloss, one beam, no comm symbols
    cfg = ScenarioConfig(T=1, d_r=(100.0,), A_t=(10.0,))
    s2 = 1.0
    n = 1000
    Wr = cic_waveform(cfg, stream(5, "cic"))[:, :, 0]
    rng = stream(5, "target")
    hit = np.empty(n)
    miss = np.empty(n)
    for i in range(n):
        G = complex_normal(rng, (cfg.N, cfg.N))
        hit[i] = simulate_trials(Wr, None, G, s2, 1, rng).sq_error[0]
        miss[i] = np.sum(np.abs(G) ** 2)
    ref_11 = s2 * cfg.N / cfg.P_r
    ref_01 = cfg.N**2 * s2
    ls_exact = s2 * cfg.N * np.trace(np.linalg.inv(Wr @ Wr.conj().T)).real
    e11 = abs(hit.mean() / ref_11 - 1)
    e01 = abs(miss.mean() / ref_01 - 1)
    ok = e11 <= 0.10 and e01 <= 0.10
    report(
        capsys, 5, ok,
        f"MSE_11 {hit.mean():.2f} vs {ref_11:.1f} (rel {e11:.3f}; exact LS {ls_exact:.1f}), "
        f"MSE_01 {miss.mean():.1f} vs {ref_01:.0f} (rel {e01:.3f})",
    )


def test_criterion_6_baseline_trends(capsys):
    recs, elapsed = sweep("baseline")
    pd_lo = np.stack([r.p_d.lo for r in recs])
    pd_hi = np.stack([r.p_d.hi for r in recs])
    kr = np.stack([r.kld_r.mean for r in recs])
    mono_pd = bool(np.all(pd_hi[1:] >= pd_lo[:-1]))
    mono_kr = bool(np.all(np.diff(kr, axis=0) >= 0))
    # T3 >= T1 >= T2 within CI at every point
    order = bool(np.all(pd_hi[:, 2] >= pd_lo[:, 0]) and np.all(pd_hi[:, 0] >= pd_lo[:, 1]))
    floor = np.asarray(at(recs, TOP_SNR).ber.mean)
    floor_ok = bool(np.all((floor >= 8e-3 / 1.5) & (floor <= 8e-3 * 1.5)))
    rho = comonotonicity(recs)
    corr_ok = rho["radar"] >= 0.95 and rho["comm"] >= 0.95
    ok = mono_pd and mono_kr and order and floor_ok and corr_ok and elapsed < 1800
    report(
        capsys, 6, ok,
        f"(a) P_D mono {mono_pd}, KLD_r mono {mono_kr}; (b) T3>=T1>=T2 {order}; "
        f"(c) BER at {TOP_SNR:g} dB {np.array2string(floor, precision=4)} floor ok {floor_ok}; "
        f"(d) spearman radar {rho['radar']:.3f} comm {rho['comm']:.3f}; {elapsed:.0f}s",
    )


def test_criterion_7_krop_effect(capsys):
    base, tb = sweep("baseline")
    krop, tk = sweep("krop")
    gain = float(np.mean(at(krop, MID_SNR).p_d.mean - at(base, MID_SNR).p_d.mean))
    ber_k = np.asarray(at(krop, TOP_SNR).ber.mean)
    ber_b = np.asarray(at(base, TOP_SNR).ber.mean)
    floor_removed = bool(np.all(ber_k < 1e-4))
    floor_persists = bool(np.all(ber_b >= 1e-3))
    ok = gain >= 0.20 and floor_removed and floor_persists and tb + tk < 3600
    report(
        capsys, 7, ok,
        f"P_D at {MID_SNR:g} dB krop {np.round(at(krop, MID_SNR).p_d.mean, 3).tolist()} vs base "
        f"{np.round(at(base, MID_SNR).p_d.mean, 3).tolist()} (mean gain {100 * gain:+.1f} pp); "
        f"BER at {TOP_SNR:g} dB krop {np.array2string(ber_k, precision=2)} base {np.array2string(ber_b, precision=2)}; "
        f"{tb + tk:.0f}s",
    )


def test_criterion_8_kcop_effect(capsys):
    base, _ = sweep("baseline")
    kcop, _ = sweep("kcop")
    gc = paired(kcop, "kld_c").mean(axis=-1) - paired(base, "kld_c").mean(axis=-1)
    gr = paired(kcop, "kld_r").mean(axis=-1) - paired(base, "kld_r").mean(axis=-1)
    both = float(np.mean((gc > 0) & (gr > 0)))
    ok = gc.mean() > gr.mean() and both >= 0.8
    report(
        capsys, 8, ok,
        f"mean comm KLD gain {gc.mean():+.3f} bits, radar {gr.mean():+.4f} bits; "
        f"both positive on {100 * both:.0f}% of {gc.size} paired (SNR, seed) pairs; "
        f"comm gain at {MID_SNR:g} dB {gc[list(SPEC.snr_points_db).index(MID_SNR)].mean():+.3f}",
    )


def test_criterion_9_kiop_dominance(capsys):
    krop, _ = sweep("krop")
    kcop, _ = sweep("kcop")
    kiop, _ = sweep("kiop")
    isac = {name: paired(recs, "kld_isac") for name, recs in (("krop", krop), ("kcop", kcop), ("kiop", kiop))}
    dom = float(np.mean(isac["kiop"] >= np.maximum(isac["krop"], isac["kcop"])))
    mse_ok = []
    for a, b, c in zip(kiop, krop, kcop):
        lo = float(a.mse_overall.lo)
        mse_ok.append(lo <= float(b.mse_overall.hi) and lo <= float(c.mse_overall.hi))
    mse_line = ", ".join(
        f"{a.snr_db:g}:{float(a.mse_overall.mean):.3g}/{float(b.mse_overall.mean):.3g}/{float(c.mse_overall.mean):.3g}"
        for a, b, c in zip(kiop, krop, kcop)
    )
    ok = dom >= 0.8 and all(mse_ok)
    report(
        capsys, 9, ok,
        f"KLD_ISAC dominance on {100 * dom:.0f}% of pairs; MSE within CI at every point {all(mse_ok)} "
        f"(snr: kiop/krop/kcop {mse_line})",
    )


def test_criterion_10_optimizer_contracts(capsys):
    con = build_constellation(CFG.M)
    s2 = noise_variance(CFG, MID_SNR)
    ch = draw_channels(CFG, stream(0, "channel", 0))
    tg = draw_targets(CFG, stream(0, "target", 0))
    Wc0 = zf_precoder(ch.H, CFG.powers).W
    Wr0 = cic_waveform(CFG, stream(0, "cic", 0))
    prob = IsacProblem.from_scenario(CFG, ch, tg, s2, con)
    kr = run_krop(prob, Wc0, Wr0, DESK)
    monotone = all(a >= b for a, b in zip(kr.trace.merit_after, kr.trace.merit_before))
    kc = run_kcop(prob, Wr0, 0.9 * Wc0, OptimizerParams(max_iter=30))
    log = []
    ki = run_kiop(prob, Wr0, Wc0, OptimizerParams(max_iter=50), callback=log.append)
    powers = {
        "krop": radar_power(kr.Wr) - CFG.P_r,
        "kcop": float(np.vdot(kc.Wc, kc.Wc).real) - CFG.P_c,
        "kiop": joint_power(ki.Wr, ki.Wc) - CFG.P_T,
    }
    power_ok = all(v <= 1e-10 for v in powers.values())
    dual_ok = all(
        np.array_equal(s["Ur_new"], s["Ur"] + s["rho"] * (s["Wr"] - s["Zr"]))
        and np.array_equal(s["Uc_new"], s["Uc"] + s["rho"] * (s["Wc"] - s["Zc"]))
        for s in log
    )
    small = SweepSpec(
        snr_points_db=(MID_SNR,), trials_per_point=40, channel_redraws=2, ber_symbols=2000,
        calibration_trials=200, optimizer=OptimizerParams(max_iter=20),
    )
    repro = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for tech in ("baseline", "krop", "kcop", "kiop"):
            a = run_sweep(CFG, small.replace(technique=tech), workers=1)[0]
            b = run_sweep(CFG, small.replace(technique=tech), workers=2)[0]
            for key in ("kld_r", "kld_c", "p_d", "p_fa", "ber", "mse"):
                repro &= np.array_equal(getattr(a, key).mean, getattr(b, key).mean)
            repro &= a.traces == b.traces
    ok = monotone and power_ok and dual_ok and repro
    report(
        capsys, 10, ok,
        f"krop merit monotone over {len(kr.trace)} steps {monotone}; power excess "
        f"{ {k: f'{v:.1e}' for k, v in powers.items()} }; dual identity over {len(log)} iterations {dual_ok}; "
        f"workers 1 vs 2 identical {repro}",
    )


def test_criterion_11_runtime_profile(capsys):
    rows = profile_runtime(CFG, [10, 20, 50], iterations=10, repeats=3, params=DESK)
    table = {(r.technique, r.N): r.median_run for r in rows}
    order = all(table[("krop", N)] < table[("kcop", N)] < table[("kiop", N)] for N in (10, 20, 50))
    detail = "; ".join(
        f"N={N}: " + "/".join(f"{table[(t, N)]:.3f}" for t in ("krop", "kcop", "kiop")) for N in (10, 20, 50)
    )
    report(capsys, 11, order, f"median run seconds krop/kcop/kiop at 10 iterations, {detail}")
