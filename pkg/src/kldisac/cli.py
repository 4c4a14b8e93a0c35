"""Command-line front end.

Usage::

    kldisac VERB [--config FILE] [--out DIR] [--technique T] [--seed N] [KEY=VALUE ...]

Verbs: validate, baseline, optimize, sweep, gradcheck, calibrate, profile.
Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import platform
import sys
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, comm, kernels, radar
from .errors import ConfigParseError, KldIsacError, UsageError
from .gradients import IsacProblem, certify_gradients, evaluate, random_instance
from .harness import TECHNIQUES, SweepSpec, design_waveforms, profile_runtime, run_sweep, wilson_interval
from .optimizers import OptimizerParams
from .scenario import (
    CONFIG_FIELDS,
    ScenarioConfig,
    build_constellation,
    cic_waveform,
    config_from_dict,
    draw_channels,
    draw_targets,
    noise_variance,
    stream,
    validate_config,
)

VERBS = ("validate", "baseline", "optimize", "sweep", "gradcheck", "calibrate", "profile")
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CHECK = 0, 1, 2, 3

OPTIMIZER_KEYS = {f.name for f in dataclasses.fields(OptimizerParams)}
SWEEP_KEYS = {"snr_points_db", "channel_redraws", "ber_symbols", "calibration_trials"}
RUN_KEYS = {"N_list", "profile_iterations", "gradcheck_instances", "gradcheck_tol"}
CSV_HEADER = ("snr_db", "entity_id", "metric", "mean", "ci_lo", "ci_hi", "trials")


@dataclass
class Command:
    verb: str
    config: ScenarioConfig
    optimizer: OptimizerParams
    sweep: SweepSpec
    out: Path
    technique: str
    seed: int
    extra: dict = field(default_factory=dict)
    config_path: str | None = None
    overrides: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kldisac", description="KLD-based ISAC waveform design and Monte Carlo evaluation")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON file with flat configuration keys")
    p.add_argument("--out", default="kldisac_out", help="output directory")
    p.add_argument("--technique", choices=TECHNIQUES, help="design technique for sweep/optimize/profile")
    p.add_argument("--seed", type=int, help="root seed override")
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE")
    return p


def _key_line(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if "," in raw:
            return [_parse_value(x) for x in raw.split(",")]
        return raw


def _split(data: dict, text: str | None = None):
    known = set(CONFIG_FIELDS) | OPTIMIZER_KEYS | SWEEP_KEYS | RUN_KEYS
    for key in data:
        if key not in known:
            raise ConfigParseError(f"unknown config key {key!r}", line=_key_line(text, key) if text else None)
    scen = {k: v for k, v in data.items() if k in CONFIG_FIELDS}
    opt = {k: v for k, v in data.items() if k in OPTIMIZER_KEYS}
    swp = {k: v for k, v in data.items() if k in SWEEP_KEYS}
    run = {k: v for k, v in data.items() if k in RUN_KEYS}
    return scen, opt, swp, run


def parse_invocation(argv) -> Command:
    """Resolve argv into a :class:`Command`; file values first, then ``KEY=VALUE`` overrides."""
    args = _parser().parse_intermixed_args(list(argv))
    data: dict = {}
    text = None
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(exc.msg, line=exc.lineno) from exc
        if not isinstance(data, dict):
            raise ConfigParseError("top level must be an object", line=1)
    file_parts = _split(data, text)
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v.strip())
    over_parts = _split(overrides)
    scen = {**file_parts[0], **over_parts[0]}
    if args.seed is not None:
        scen["seed"] = args.seed
    cfg = config_from_dict(scen)
    try:
        opt = OptimizerParams(**{**{"max_iter": 300}, **file_parts[1], **over_parts[1]})
    except TypeError as exc:
        raise ConfigParseError(str(exc)) from exc
    swp = {**file_parts[2], **over_parts[2]}
    technique = args.technique or "baseline"
    if args.verb == "baseline":
        technique = "baseline"
    sweep = SweepSpec(
        technique=technique,
        trials_per_point=cfg.trials,
        seed=cfg.seed,
        p_fa=cfg.P_FA,
        optimizer=opt,
        **swp,
    )
    return Command(
        verb=args.verb,
        config=cfg,
        optimizer=opt,
        sweep=sweep,
        out=Path(args.out),
        technique=technique,
        seed=cfg.seed,
        extra={**file_parts[3], **over_parts[3]},
        config_path=args.config,
        overrides=overrides,
    )


# --------------------------------------------------------------------------
# outputs


def _atomic_write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _num(x) -> str:
    x = float(x)
    return repr(x) if np.isfinite(x) else ("nan" if np.isnan(x) else ("inf" if x > 0 else "-inf"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def record_rows(records):
    """Split records into radar, comm and summary CSV rows."""
    radar_rows, comm_rows, summary_rows = [], [], []
    for rec in records:
        snr = _num(rec.snr_db)
        for name, est in (("kld_r", rec.kld_r), ("p_d", rec.p_d), ("p_fa", rec.p_fa), ("mse", rec.mse)):
            for t in range(np.size(est.mean)):
                radar_rows.append(
                    (snr, f"T{t + 1}", name, _num(est.mean[t]), _num(est.lo[t]), _num(est.hi[t]), int(est.n[t]))
                )
        for name, est in (("kld_c", rec.kld_c), ("ber", rec.ber)):
            for k in range(np.size(est.mean)):
                comm_rows.append(
                    (snr, f"UE{k + 1}", name, _num(est.mean[k]), _num(est.lo[k]), _num(est.hi[k]), int(est.n[k]))
                )
        for name, est in (("kld_isac", rec.kld_isac), ("mse_overall", rec.mse_overall)):
            summary_rows.append((snr, "all", name, _num(est.mean), _num(est.lo), _num(est.hi), int(est.n)))
    return radar_rows, comm_rows, summary_rows


def write_outputs(records, out_dir, manifest: dict | None = None, prefix: str = "") -> list:
    """Write CSVs, trace JSONs and the run manifest; returns the written paths.

    Every file is written to a temporary name and renamed into place.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if records:
        for name, rows in zip(("radar", "comm", "summary"), record_rows(records)):
            files.append(_atomic_write(out / f"{prefix}{name}.csv", _csv_text(rows)))
        for rec in records:
            for i, tr in enumerate(rec.traces):
                p = out / "traces" / f"{prefix}{rec.technique}_snr{rec.snr_db:g}_redraw{i}.json"
                files.append(_atomic_write(p, json.dumps(_jsonable(tr), sort_keys=True) + "\n"))
    man = dict(manifest or {})
    man["files"] = sorted(str(f.relative_to(out)) for f in files) + ["manifest.json"]
    if records:
        man["points"] = [
            {"snr_db": r.snr_db, "technique": r.technique, "redraws": r.redraws, "flags": r.flags,
             "failures": r.failures, "wallclock": r.wallclock}
            for r in records
        ]
    files.append(_atomic_write(out / "manifest.json", json.dumps(_jsonable(man), indent=2, sort_keys=True) + "\n"))
    return files


def _manifest(cmd: Command) -> dict:
    import scipy

    return {
        "verb": cmd.verb,
        "version": __version__,
        "config": cmd.config.to_dict(),
        "optimizer": dataclasses.asdict(cmd.optimizer),
        "sweep": {k: v for k, v in dataclasses.asdict(cmd.sweep).items() if k != "optimizer"},
        "technique": cmd.technique,
        "seed": cmd.seed,
        "config_path": cmd.config_path,
        "overrides": cmd.overrides,
        "extra": cmd.extra,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernels": kernels.BACKEND,
        },
        "workers": os.environ.get("KLDISAC_WORKERS", "1"),
    }


# --------------------------------------------------------------------------
# verbs


def _instance(cmd: Command):
    cfg = cmd.config
    con = build_constellation(cfg.M)
    s2 = noise_variance(cfg)
    channels = draw_channels(cfg, stream(cmd.seed, "channel", 0))
    targets = draw_targets(cfg, stream(cmd.seed, "target", 0))
    Wc0 = comm.zf_precoder(channels.H, cfg.powers).W
    Wr0 = cic_waveform(cfg, stream(cmd.seed, "cic", 0))
    return cfg, con, s2, channels, targets, Wc0, Wr0, IsacProblem.from_scenario(cfg, channels, targets, s2, con)


def _do_validate(cmd: Command, man: dict) -> int:
    validate_config(cmd.config)
    print(json.dumps(cmd.config.to_dict(), indent=2, sort_keys=True))
    write_outputs([], cmd.out, man)
    return EXIT_OK


def _do_sweep(cmd: Command, man: dict) -> int:
    validate_config(cmd.config)
    t0 = time.perf_counter()
    records = run_sweep(cmd.config, cmd.sweep)
    man["elapsed_s"] = time.perf_counter() - t0
    write_outputs(records, cmd.out, man, prefix=f"{cmd.sweep.technique}_")
    for r in records:
        print(
            f"snr={r.snr_db:g} dB  P_D={np.round(r.p_d.mean, 3)}  KLD_r={np.round(r.kld_r.mean, 2)}  "
            f"BER={np.array2string(np.asarray(r.ber.mean), precision=2)}  KLD_c={np.round(r.kld_c.mean, 2)}"
        )
    return EXIT_RUNTIME if any("point_failed" in r.flags for r in records) else EXIT_OK


def _do_optimize(cmd: Command, man: dict) -> int:
    cfg, con, s2, channels, targets, Wc0, Wr0, prob = _instance(cmd)
    validate_config(cfg)
    tech = cmd.technique if cmd.technique != "baseline" else "kiop"
    before = evaluate(prob, Wr0, Wc0, grad=False)
    t0 = time.perf_counter()
    Wr, Wc, trace = design_waveforms(tech, prob, Wr0, Wc0, cmd.optimizer)
    elapsed = time.perf_counter() - t0
    after = evaluate(prob, Wr, Wc, grad=False)
    summary = {
        "technique": tech,
        "snr_db": cfg.snr_db,
        "elapsed_s": elapsed,
        "exit_reason": trace.exit_reason,
        "iterations": len(trace),
        "kld_r_before": before.kld_r,
        "kld_r_after": after.kld_r,
        "kld_c_before": before.kld_c,
        "kld_c_after": after.kld_c,
        "radar_power": float(np.vdot(Wr, Wr).real / cfg.L),
        "comm_power": float(np.vdot(Wc, Wc).real),
    }
    out = Path(cmd.out)
    _atomic_write(out / f"{tech}_trace.json", json.dumps(_jsonable(trace.to_dict()), sort_keys=True) + "\n")
    _atomic_write(out / f"{tech}_summary.json", json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    man["summary"] = summary
    write_outputs([], out, man)
    print(json.dumps(_jsonable(summary), indent=2))
    return EXIT_OK


def _do_gradcheck(cmd: Command, man: dict) -> int:
    n = int(cmd.extra.get("gradcheck_instances", 20))
    tol = float(cmd.extra.get("gradcheck_tol", 1e-5))
    worst = {}
    for i in range(n):
        rng = stream(cmd.seed, "validation", i)
        N = int(rng.integers(3, 9))
        K = int(rng.integers(1, min(3, N - 1) + 1))
        T = int(rng.integers(1, 3))
        L = int(rng.integers(1, 5))
        res = certify_gradients(*random_instance(rng, N=N, K=K, T=T, L=L))
        for k, v in res.items():
            base = k.split("[")[0] + k[k.index("/"):] if "[" in k else k
            worst[base] = max(worst.get(base, 0.0), v)
    ok = all(v <= tol for v in worst.values())
    for k, v in sorted(worst.items()):
        print(f"{'PASS' if v <= tol else 'FAIL'}  {k:32s} max rel err {v:.2e}")
    man["gradcheck"] = {"instances": n, "tolerance": tol, "max_rel_err": worst, "passed": ok}
    write_outputs([], cmd.out, man)
    return EXIT_OK if ok else EXIT_CHECK


def _do_calibrate(cmd: Command, man: dict) -> int:
    cfg, con, s2, channels, targets, Wc0, Wr0, prob = _instance(cmd)
    validate_config(cfg)
    Wr, Wc, _ = design_waveforms(cmd.technique, prob, Wr0, Wc0, cmd.optimizer)
    n = int(cmd.sweep.calibration_trials)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        taus = radar.calibrate_thresholds(
            Wr, Wc, s2, cfg.P_FA, n, [stream(cmd.seed, "calibration", 0, t) for t in range(cfg.T)], con
        )
    rows = []
    for t in range(cfg.T):
        h0 = radar.simulate_trials(Wr[:, :, t], Wc, None, s2, n, stream(cmd.seed, "h0", 0, t), con)
        k = int(np.sum(h0.statistic > taus[t]))
        p, lo, hi = wilson_interval(k, n)
        _, elo, ehi = wilson_interval(cfg.P_FA * n, n)
        rows.append({"target": t + 1, "threshold": taus[t], "held_out_p_fa": float(p), "ci": [float(lo), float(hi)],
                     "inside_nominal_interval": bool(elo <= p <= ehi)})
        print(f"T{t + 1}: tau={taus[t]:.6g}  held-out P_FA={float(p):.4f} [{float(lo):.4f}, {float(hi):.4f}]")
    man["calibration"] = rows
    write_outputs([], cmd.out, man)
    return EXIT_OK


def _do_profile(cmd: Command, man: dict) -> int:
    N_list = cmd.extra.get("N_list", [10, 20, 50])
    N_list = [int(x) for x in np.atleast_1d(N_list)]
    iters = int(cmd.extra.get("profile_iterations", 10))
    techs = ("krop", "kcop", "kiop") if cmd.technique == "baseline" else (cmd.technique,)
    rows = profile_runtime(cmd.config, N_list, techs, iterations=iters, seed=cmd.seed, params=cmd.optimizer)
    header = ("N", "technique", "median_run_s", "iterations", "per_iteration_s", "overhead_s", "growth", "cubic_ratio")
    lines = [header] + [
        (r.N, r.technique, _num(r.median_run), r.iterations, _num(r.per_iteration), _num(r.overhead),
         _num(r.growth), _num(r.cubic_ratio))
        for r in rows
    ]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(lines)
    out = Path(cmd.out)
    _atomic_write(out / "profile.csv", buf.getvalue())
    for r in rows:
        print(f"N={r.N:3d} {r.technique:5s} run={r.median_run:.4f}s per-iter={r.per_iteration:.5f}s")
    man["profile"] = [dataclasses.asdict(r) for r in rows]
    write_outputs([], out, man)
    return EXIT_OK


HANDLERS = {
    "validate": _do_validate,
    "baseline": _do_sweep,
    "sweep": _do_sweep,
    "optimize": _do_optimize,
    "gradcheck": _do_gradcheck,
    "calibrate": _do_calibrate,
    "profile": _do_profile,
}


def execute(cmd: Command) -> int:
    """Run a parsed command; on failure leave a ``FAILED`` marker in the output dir."""
    man = _manifest(cmd)
    try:
        return HANDLERS[cmd.verb](cmd, man)
    except (KldIsacError, ArithmeticError, ValueError, OSError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
        print(msg, file=sys.stderr)
        try:
            man["error"] = msg
            write_outputs([], cmd.out, man)
            _atomic_write(Path(cmd.out) / "FAILED", msg + "\n")
        except OSError:
            pass
        return EXIT_RUNTIME


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_invocation(argv)
    except (UsageError, ConfigParseError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KldIsacError as exc:
        print(f"usage error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(main())
