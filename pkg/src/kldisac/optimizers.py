"""K-ROP, K-COP and K-IOP waveform optimizers.

All three maximise KLD-based objectives built in :mod:`kldisac.gradients`.
They are deterministic given the problem, the initial point and the
parameters, and never raise on unattainable KLD thresholds: constraint
margins are recorded in the trace instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BarrierDivergence, ConfigError, InfeasibleStart, NonFiniteObjective
from .gradients import (
    IsacProblem,
    admm_value,
    admm_value_and_grad,
    evaluate,
    joint_power,
    penalty_from,
    penalty_grads,
    project_joint,
    project_power,
    radar_power,
)

EXIT_REASONS = ("converged", "max_iter", "line_search_failed")


@dataclass(frozen=True)
class OptimizerParams:
    """Iteration caps, tolerances and schedules shared by the three optimizers."""

    max_iter: int = 1000
    eps: float = 1e-6
    alpha0: float = 0.1
    rho0: float = 1.0
    gamma: float = 1.5
    beta: float = 0.5
    c: float = 1e-4
    mu0: float = 1.0
    gamma_barrier: float = 0.1
    rho_admm: float = 1.0
    inner_iter: int = 20
    alpha_min: float = 1e-12
    rho_max: float = 1e10
    stagnation_window: int = 100

    def __post_init__(self):
        validate_params(self)

    def replace(self, **kw) -> "OptimizerParams":
        return OptimizerParams(**{**asdict(self), **kw})


def validate_params(p: OptimizerParams) -> None:
    if not (isinstance(p.max_iter, (int, np.integer)) and p.max_iter >= 0):
        raise ConfigError("max_iter must be a non-negative integer")
    if not p.eps > 0:
        raise ConfigError("eps must be positive")
    if not p.alpha0 > 0 or not p.rho0 > 0 or not p.mu0 > 0 or not p.rho_admm > 0:
        raise ConfigError("alpha0, rho0, mu0 and rho_admm must be positive")
    if not p.gamma > 1:
        raise ConfigError("gamma must exceed 1")
    for name in ("beta", "c", "gamma_barrier"):
        if not 0 < getattr(p, name) < 1:
            raise ConfigError(f"{name} must lie in (0, 1)")
    if p.inner_iter < 1 or p.stagnation_window < 1:
        raise ConfigError("inner_iter and stagnation_window must be at least 1")


@dataclass
class OptimizerTrace:
    """Per-iteration history of one optimizer run.

    ``objective`` is the value of the design objective after the step,
    ``merit_before``/``merit_after`` the line-searched merit function at
    the same schedule parameter, ``margins`` the KLD constraint margins
    (bits, radar targets then UEs; negative means violated).
    """

    method: str
    objective: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    merit_before: list = field(default_factory=list)
    merit_after: list = field(default_factory=list)
    step: list = field(default_factory=list)
    change: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    residual_r: list = field(default_factory=list)
    residual_c: list = field(default_factory=list)
    schedule: list = field(default_factory=list)
    exit_reason: str = "max_iter"
    flags: list = field(default_factory=list)
    inner_iterations: int = 0

    def __len__(self) -> int:
        return len(self.objective)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, list) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=True)


@dataclass
class KropResult:
    Wr: np.ndarray
    trace: OptimizerTrace


@dataclass
class KcopResult:
    Wc: np.ndarray
    trace: OptimizerTrace


@dataclass
class KiopResult:
    Wr: np.ndarray
    Wc: np.ndarray
    trace: OptimizerTrace


def _margins(ev, prob: IsacProblem) -> list:
    return [float(x) for x in np.concatenate([ev.kld_r - prob.A, ev.kld_c - prob.B])]


def _inner(a, b) -> float:
    return float(np.vdot(a, b).real)


# --------------------------------------------------------------------------
# K-ROP


def run_krop(prob: IsacProblem, Wc: np.ndarray, init: np.ndarray, params: OptimizerParams | None = None) -> KropResult:
    """Projected gradient with a growing quadratic penalty on the radar waveform.

    Maximises the mean radar KLD minus ``rho`` times the squared-hinge
    penalty on all KLD thresholds, with the UEs scored by the ZF closed
    form. The precoder ``Wc`` stays fixed. Steps are chosen by Armijo
    backtracking on the projected arc, starting from the previous step
    divided by ``beta``; ``rho`` grows by ``gamma`` while the penalty is
    positive.
    """
    params = params or OptimizerParams()
    trace = OptimizerTrace(method="krop")
    W = project_power(np.asarray(init, dtype=complex), prob.P_r, prob.L)
    rho = params.rho0
    alpha = params.alpha0 * params.beta
    for _ in range(params.max_iter):
        ev = evaluate(prob, W, Wc, comm="closed", grad=True)
        f = float(ev.kld_r.mean())
        p = penalty_from(ev, prob.A, prob.B)
        phi = f - rho * p
        gp, _ = penalty_grads(ev, prob.A, prob.B, W)
        G = ev.dr_Wr / prob.T - rho * gp
        a = alpha / params.beta
        while True:
            Wn = project_power(W + a * G, prob.P_r, prob.L)
            evn = evaluate(prob, Wn, Wc, comm="closed", grad=False)
            fn = float(evn.kld_r.mean())
            pn = penalty_from(evn, prob.A, prob.B)
            phin = fn - rho * pn
            if phin >= phi + params.c * _inner(G, Wn - W):
                break
            a *= params.beta
            if a < params.alpha_min:
                trace.exit_reason = "line_search_failed"
                trace.flags.append("line_search_failed")
                return KropResult(W, trace)
        change = float(np.linalg.norm(Wn - W))
        trace.objective.append(fn)
        trace.penalty.append(pn)
        trace.merit_before.append(phi)
        trace.merit_after.append(phin)
        trace.step.append(a)
        trace.change.append(change)
        trace.margins.append(_margins(evn, prob))
        trace.schedule.append(rho)
        W, alpha = Wn, a
        if pn > 0:
            rho = min(rho * params.gamma, params.rho_max)
        if change < params.eps:
            trace.exit_reason = "converged"
            break
    return KropResult(W, trace)


# --------------------------------------------------------------------------
# K-COP


def _kcop_parts(prob: IsacProblem, Wr, Wc, grad: bool):
    ev = evaluate(prob, Wr, Wc, comm="conditional", grad=grad)
    pw = prob.P_c - float(np.vdot(Wc, Wc).real)
    cons = np.concatenate([ev.kld_r - prob.A, ev.kld_c - prob.B, [pw]])
    return ev, cons


def _kcop_merit(ev, cons, barrier, mu):
    inside = cons[barrier]
    if np.any(inside <= 0):
        return -math.inf
    return float(ev.kld_c.mean()) + mu * float(np.sum(np.log(inside)))


def _barrier_direction(G, W, slack, mu):
    # Precondition by I + Hessian of -mu log(P_c - ||W||^2), which is
    # (2 mu / slack) I + (4 mu / slack^2) w w^T in real coordinates.
    lam = 1.0 + 2.0 * mu / slack
    kap = 4.0 * mu / slack**2
    coef = kap * _inner(W, G) / (lam + kap * float(np.vdot(W, W).real))
    return (G - coef * W) / lam


def run_kcop(prob: IsacProblem, Wr: np.ndarray, init: np.ndarray, params: OptimizerParams | None = None) -> KcopResult:
    """Log-barrier gradient method on the precoder with the radar waveform fixed.

    Maximises the mean conditional comm KLD. Constraints strictly satisfied
    at the start (always the power budget) enter a log barrier with weight
    ``mu``. A KLD threshold violated at the start cannot carry a barrier; it
    is monitored and joins the barrier as soon as an iterate satisfies it
    strictly, and the run is flagged ``infeasible_thresholds`` if any
    threshold is still missed at exit. Every outer iteration takes up to
    ``inner_iter`` backtracking gradient steps on the merit function at
    fixed ``mu`` (centering), preconditioned by the exact Hessian of the
    power barrier so steps do not stall against the power sphere, then shrinks ``mu`` by ``gamma_barrier``.
    All accepted iterates stay strictly inside the power ball. The KKT
    residual recorded per iteration is the norm of the merit gradient at
    the centred point.
    """
    params = params or OptimizerParams()
    trace = OptimizerTrace(method="kcop")
    W = np.asarray(init, dtype=complex)
    ev, cons = _kcop_parts(prob, Wr, W, grad=True)
    if not cons[-1] > 0:
        raise InfeasibleStart("initial precoder must be strictly inside the power budget")
    barrier = cons > 0
    mu = params.mu0
    alpha = params.alpha0 * params.beta
    nkld = prob.T + prob.K

    def merit_grad(ev, cons, W):
        gcons = np.concatenate([ev.dr_Wc, ev.dc_Wc, (-2.0 * W)[None]], axis=0)
        coef = np.zeros(cons.shape)
        coef[barrier] = mu / cons[barrier]
        return ev.dc_Wc.mean(axis=0) + np.tensordot(coef, gcons, axes=1)

    for _ in range(params.max_iter):
        W0 = W
        merit0 = _kcop_merit(ev, cons, barrier, mu)
        steps = 0
        failed = False
        for _ in range(params.inner_iter):
            barrier |= cons > 0
            merit = _kcop_merit(ev, cons, barrier, mu)
            G = merit_grad(ev, cons, W)
            if not (np.isfinite(merit) and np.all(np.isfinite(G))):
                raise BarrierDivergence("barrier merit became non-finite")
            D = _barrier_direction(G, W, cons[-1], mu)
            slope = _inner(G, D)
            a = alpha / params.beta
            while True:
                Wn = W + a * D
                try:
                    evn, consn = _kcop_parts(prob, Wr, Wn, grad=True)
                    meritn = _kcop_merit(evn, consn, barrier, mu)
                except (NonFiniteObjective, ArithmeticError):
                    meritn = -math.inf
                if np.isfinite(meritn) and meritn >= merit + params.c * a * slope:
                    break
                a *= params.beta
                if a < params.alpha_min:
                    failed = True
                    break
            if failed:
                break
            small = np.linalg.norm(Wn - W) < params.eps
            W, ev, cons, alpha = Wn, evn, consn, a
            steps += 1
            if small:
                break
        kkt = float(np.linalg.norm(merit_grad(ev, cons, W)))
        change = float(np.linalg.norm(W - W0))
        trace.objective.append(float(ev.kld_c.mean()))
        trace.penalty.append(float(np.sum(np.minimum(cons[:nkld], 0.0) ** 2)))
        trace.merit_before.append(merit0)
        trace.merit_after.append(_kcop_merit(ev, cons, barrier, mu))
        trace.step.append(alpha)
        trace.change.append(change)
        trace.margins.append([float(x) for x in cons[:nkld]])
        trace.residual_r.append(kkt)
        trace.schedule.append(mu)
        trace.inner_iterations += steps
        if failed and steps == 0:
            trace.exit_reason = "line_search_failed"
            trace.flags.append("line_search_failed")
            break
        mu *= params.gamma_barrier
        if kkt < params.eps or change < params.eps:
            trace.exit_reason = "converged"
            break
    if np.any(cons[:nkld] < 0):
        trace.flags.append("infeasible_thresholds")
    return KcopResult(W, trace)


# --------------------------------------------------------------------------
# K-IOP


@dataclass
class SubproblemResult:
    Zr: np.ndarray
    Zc: np.ndarray
    values: list
    iterations: int


def admm_z_subproblem(
    Vr: np.ndarray,
    Vc: np.ndarray,
    rho: float,
    prob: IsacProblem,
    params: OptimizerParams | None = None,
    rho_pen: float = 0.0,
    weight: float = 1.0,
) -> SubproblemResult:
    """Approximate auxiliary update by projected gradient with backtracking.

    Minimises ``-w (f - rho_pen p) + rho/2 ||Z - V||**2`` over the joint
    power ball, starting from the projection of ``V`` and running at most
    ``params.inner_iter`` steps. ``values`` holds the minimised objective
    after every accepted step, so it is non-increasing.
    """
    if not rho > 0:
        raise ConfigError("ADMM penalty must be positive")
    params = params or OptimizerParams()
    Zr, Zc = project_joint(Vr, Vc, prob.P_T)
    value = admm_value(Zr, Zc, Vr, Vc, rho, prob, rho_pen, weight)
    values = [-value]
    alpha = params.alpha0 * params.beta
    it = 0
    for it in range(1, params.inner_iter + 1):
        value, gr, gc, _ = admm_value_and_grad(Zr, Zc, Vr, Vc, rho, prob, rho_pen, weight)
        a = alpha / params.beta
        accepted = False
        while a >= params.alpha_min:
            Nr, Nc = project_joint(Zr + a * gr, Zc + a * gc, prob.P_T)
            vn = admm_value(Nr, Nc, Vr, Vc, rho, prob, rho_pen, weight)
            if vn >= value + params.c * (_inner(gr, Nr - Zr) + _inner(gc, Nc - Zc)):
                accepted = True
                break
            a *= params.beta
        if not accepted:
            it -= 1
            break
        change = math.sqrt(np.linalg.norm(Nr - Zr) ** 2 + np.linalg.norm(Nc - Zc) ** 2)
        Zr, Zc, alpha = Nr, Nc, a
        values.append(-vn)
        if change < params.eps:
            break
    return SubproblemResult(Zr, Zc, values, it)


def run_kiop(
    prob: IsacProblem,
    init_r: np.ndarray,
    init_c: np.ndarray,
    params: OptimizerParams | None = None,
    callback=None,
) -> KiopResult:
    """ADMM on the joint radar waveform and precoder.

    Each outer iteration sets ``W = Z - U/rho``, solves the auxiliary
    subproblem around ``V = W + U/rho``, and updates the scaled duals with
    ``U += rho (W - Z)``. The objective is the mean radar KLD plus the mean
    conditional comm KLD minus a squared-hinge penalty whose weight grows
    by ``gamma`` while any threshold is missed. The returned pair is the
    auxiliary iterate, which satisfies the joint power budget exactly.

    ``callback``, if given, is called after every outer iteration with a
    dict holding ``rho``, the primal ``Wr``/``Wc``, the new auxiliary
    ``Zr``/``Zc`` and the duals before (``Ur``/``Uc``) and after
    (``Ur_new``/``Uc_new``) the update.
    """
    params = params or OptimizerParams()
    trace = OptimizerTrace(method="kiop")
    rho = params.rho_admm
    Zr, Zc = project_joint(np.asarray(init_r, dtype=complex), np.asarray(init_c, dtype=complex), prob.P_T)
    Ur = np.zeros_like(Zr)
    Uc = np.zeros_like(Zc)
    rho_pen = params.rho0
    window = params.stagnation_window
    best = math.inf
    since_best = 0
    for _ in range(params.max_iter):
        Wr = Zr - Ur / rho
        Wc = Zc - Uc / rho
        Vr = Wr + Ur / rho
        Vc = Wc + Uc / rho
        sub = admm_z_subproblem(Vr, Vc, rho, prob, params, rho_pen)
        trace.inner_iterations += sub.iterations
        Ur_new = Ur + rho * (Wr - sub.Zr)
        Uc_new = Uc + rho * (Wc - sub.Zc)
        rr = float(np.linalg.norm(Wr - sub.Zr))
        rc = float(np.linalg.norm(Wc - sub.Zc))
        change = math.sqrt(np.linalg.norm(sub.Zr - Zr) ** 2 + np.linalg.norm(sub.Zc - Zc) ** 2)
        if callback is not None:
            callback({"rho": rho, "Wr": Wr, "Wc": Wc, "Zr": sub.Zr, "Zc": sub.Zc,
                      "Ur": Ur, "Uc": Uc, "Ur_new": Ur_new, "Uc_new": Uc_new})
        Zr, Zc, Ur, Uc = sub.Zr, sub.Zc, Ur_new, Uc_new
        ev = evaluate(prob, Zr, Zc, comm="conditional", grad=False)
        pen = penalty_from(ev, prob.A, prob.B)
        trace.objective.append(float(ev.kld_r.mean() + ev.kld_c.mean()))
        trace.penalty.append(pen)
        trace.merit_before.append(sub.values[0])
        trace.merit_after.append(sub.values[-1])
        trace.step.append(float(sub.iterations))
        trace.change.append(change)
        trace.margins.append(_margins(ev, prob))
        trace.residual_r.append(rr)
        trace.residual_c.append(rc)
        trace.schedule.append(rho_pen)
        if pen > 0:
            rho_pen = min(rho_pen * params.gamma, params.rho_max)
        res = max(rr, rc, change)
        if rr < params.eps and rc < params.eps and change < params.eps:
            trace.exit_reason = "converged"
            break
        if res < best * (1.0 - 1e-3):
            best, since_best = res, 0
        else:
            since_best += 1
            if since_best >= window and res > 10 * params.eps and "residual_stagnation" not in trace.flags:
                trace.flags.append("residual_stagnation")
    return KiopResult(Zr, Zc, trace)


def power_report(Wr: np.ndarray | None = None, Wc: np.ndarray | None = None) -> dict:
    out = {}
    if Wr is not None:
        out["radar_power"] = radar_power(Wr)
    if Wc is not None:
        out["comm_power"] = float(np.vdot(Wc, Wc).real)
    if Wr is not None and Wc is not None:
        out["joint_power"] = joint_power(Wr, Wc)
    return out
