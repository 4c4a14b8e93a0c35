"""Objectives, analytic gradients, power projections and a finite-difference oracle.

Gradient convention: for a real function ``f`` of a complex array ``W`` the
gradient is ``df/dRe(W) + 1j * df/dIm(W)`` (twice the Wirtinger derivative
with respect to ``conj(W)``). With this choice ``f(W + a g) ~ f(W) + a ||g||^2``
for small ``a``, so ``W + a g`` is an ascent step.

Radar waveform tensors have shape (N, L, T); slice ``Wr[:, :, t]`` is the beam
of target ``t``. Precoders have shape (N, K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteObjective, NumericalSingularity
from .radar import SPREAD_LIMIT, beam_covariance
from .scenario import (
    ChannelSet,
    Constellation,
    ScenarioConfig,
    TargetSet,
    build_constellation,
    noise_variance,
)

LN2 = math.log(2.0)
PROJECTION_SLACK = 1e-12


@dataclass(frozen=True)
class IsacProblem:
    """Everything the objectives need besides the waveforms themselves."""

    G: np.ndarray
    H: np.ndarray
    comm_gain: np.ndarray
    sigma_n2: float
    sigma_h2: float
    kappa: float
    p: np.ndarray
    A: np.ndarray
    B: np.ndarray
    L: int
    P_r: float
    P_c: float
    P_T: float
    radar_amp: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def T(self) -> int:
        return self.G.shape[0]

    @classmethod
    def from_scenario(
        cls,
        cfg: ScenarioConfig,
        channels: ChannelSet,
        targets: TargetSet,
        sigma_n2: float | None = None,
        constellation: Constellation | None = None,
    ) -> "IsacProblem":
        con = constellation or build_constellation(cfg.M)
        return cls(
            G=targets.G,
            H=channels.H,
            comm_gain=channels.gain,
            sigma_n2=noise_variance(cfg) if sigma_n2 is None else float(sigma_n2),
            sigma_h2=cfg.sigma_h2,
            kappa=con.kld_scale,
            p=cfg.powers,
            A=np.asarray(cfg.A_t, dtype=float),
            B=np.asarray(cfg.B_k, dtype=float),
            L=cfg.L,
            P_r=cfg.P_r,
            P_c=cfg.P_c,
            P_T=cfg.P_T,
            radar_amp=targets.radar_amp,
        )


@dataclass
class Evaluation:
    """KLDs of every target and UE with the pieces needed for gradients.

    ``dr_Wr[:, :, t]`` is the gradient of ``kld_r[t]`` with respect to beam
    ``t`` (other beams do not affect it); ``dr_Wc[t]`` its gradient with
    respect to the precoder. ``dc_Wc[k]`` is the gradient of ``kld_c[k]``
    with respect to the precoder and ``dc_Wr_coef[k] * Wr`` the one with
    respect to the radar tensor.
    """

    kld_r: np.ndarray
    kld_c: np.ndarray
    dr_Wr: np.ndarray | None = None
    dr_Wc: np.ndarray | None = None
    dc_Wc: np.ndarray | None = None
    dc_Wr_coef: np.ndarray | None = None


def radar_power(Wr: np.ndarray) -> float:
    return float(np.vdot(Wr, Wr).real / Wr.shape[1])


def _radar_parts(prob: IsacProblem, Wr, Wc, grad: bool):
    T, N = prob.T, prob.N
    s2 = prob.sigma_n2
    if not s2 > 0:
        raise NumericalSingularity("noise variance must be positive")
    kld = np.empty(T)
    Ms = np.empty((T, N, N), dtype=complex) if grad else None
    for t in range(T):
        G = prob.G[t]
        R = beam_covariance(Wr, Wc, t)
        A = G @ R @ G.conj().T
        A = 0.5 * (A + A.conj().T)
        if grad:
            a, U = np.linalg.eigh(A)
        else:
            a = np.linalg.eigvalsh(A)
        a = np.clip(a, 0.0, None)
        s = a / s2
        if not np.all(np.isfinite(s)) or s.max(initial=0.0) > SPREAD_LIMIT:
            raise NumericalSingularity("receive covariance is too ill-conditioned")
        kld[t] = np.sum(np.log1p(s) - s / (1.0 + s)) / LN2
        if grad:
            w = a / (a + s2) ** 2
            inner = (U * w) @ U.conj().T
            Ms[t] = G.conj().T @ inner @ G / LN2
    return kld, Ms


def _comm_power(prob: IsacProblem, Wr) -> float:
    return prob.P_r if Wr is None else radar_power(Wr)


def comm_interference(prob: IsacProblem, Wr) -> np.ndarray:
    """Per-UE ``sigma_eta2`` from the current radar power."""
    return prob.comm_gain * prob.sigma_h2 * _comm_power(prob, Wr) + prob.sigma_n2


def evaluate(
    prob: IsacProblem, Wr: np.ndarray, Wc: np.ndarray, comm: str = "conditional", grad: bool = True
) -> Evaluation:
    """Evaluate all KLDs (bits) and, optionally, their gradients.

    ``comm="closed"`` uses the channel-averaged ZF closed form for the UEs
    (depends on ``Wr`` only); ``comm="conditional"`` uses the realised
    precoder and channel.
    """
    kld_r, Ms = _radar_parts(prob, Wr, Wc, grad)
    g = prob.comm_gain
    seta = comm_interference(prob, Wr)
    out = Evaluation(kld_r=kld_r, kld_c=np.empty(prob.K))
    if grad:
        T = prob.T
        dr = np.zeros_like(Wr)
        for t in range(T):
            dr[:, :, t] = (2.0 / prob.L) * Ms[t] @ Wr[:, :, t]
        out.dr_Wr = dr
        out.dr_Wc = 2.0 * Ms @ Wc
    dseta = g * prob.sigma_h2 * 2.0 / prob.L
    if comm == "closed":
        c = prob.kappa * g * prob.p * (prob.N - prob.K) / LN2
        out.kld_c = c / seta
        if grad:
            out.dc_Wc = np.zeros((prob.K,) + Wc.shape, dtype=complex)
            out.dc_Wr_coef = -c / seta**2 * dseta
    elif comm == "conditional":
        U = prob.H.T @ Wc
        P = np.abs(U) ** 2
        own = np.diag(P).copy()
        b = g * (P.sum(axis=1) - own) + seta
        scale = prob.kappa * g / LN2
        out.kld_c = scale * own / b
        if grad:
            K = prob.K
            C = -(scale * g * own / b**2)[:, None] * 2.0 * U
            C[np.arange(K), np.arange(K)] = scale * 2.0 * np.diag(U) / b
            Hc = prob.H.conj()
            out.dc_Wc = Hc.T[:, :, None] * C[:, None, :]
            out.dc_Wr_coef = -out.kld_c / b * dseta
    else:
        raise ValueError(f"unknown comm model {comm!r}")
    if not (np.all(np.isfinite(out.kld_r)) and np.all(np.isfinite(out.kld_c))):
        raise NonFiniteObjective("non-finite KLD")
    return out


# --------------------------------------------------------------------------
# penalty


def penalty_from(ev: Evaluation, A, B) -> float:
    hr = np.maximum(0.0, np.asarray(A) - ev.kld_r)
    hc = np.maximum(0.0, np.asarray(B) - ev.kld_c)
    return float(np.sum(hr**2) + np.sum(hc**2))


def penalty_grads(ev: Evaluation, A, B, Wr: np.ndarray):
    """Gradients of the squared-hinge penalty with respect to ``Wr`` and ``Wc``."""
    hr = np.maximum(0.0, np.asarray(A) - ev.kld_r)
    hc = np.maximum(0.0, np.asarray(B) - ev.kld_c)
    g_r = -2.0 * ev.dr_Wr * hr[None, None, :] - 2.0 * np.dot(hc, ev.dc_Wr_coef) * Wr
    g_c = -2.0 * np.tensordot(hr, ev.dr_Wc, axes=1) - 2.0 * np.tensordot(hc, ev.dc_Wc, axes=1)
    return g_r, g_c


def penalty_value(Wr, W_c, prob: IsacProblem, A=None, B=None, comm: str = "closed") -> float:
    """``sum_t max(0, A_t - KLD_r,t)**2 + sum_k max(0, B_k - KLD_c,k)**2``."""
    ev = evaluate(prob, Wr, W_c, comm=comm, grad=False)
    return penalty_from(ev, prob.A if A is None else A, prob.B if B is None else B)


# --------------------------------------------------------------------------
# gradients by role


def radar_objective(Wr, W_c, prob: IsacProblem) -> float:
    """Mean radar KLD over targets (bits)."""
    return float(np.mean(_radar_parts(prob, Wr, W_c, False)[0]))


def grad_radar_objective(Wr, W_c, prob: IsacProblem, paper_printed: bool = False) -> np.ndarray:
    """Gradient of the mean radar KLD with respect to the radar tensor.

    ``paper_printed=True`` returns the variant whose second term lacks the
    left ``H^H`` factor; it is kept for comparison only.
    """
    if not paper_printed:
        kld, Ms = _radar_parts(prob, Wr, W_c, True)
        out = np.empty_like(Wr)
        for t in range(prob.T):
            out[:, :, t] = (2.0 / (prob.T * prob.L)) * Ms[t] @ Wr[:, :, t]
        return out
    out = np.empty_like(Wr)
    s2 = prob.sigma_n2
    for t in range(prob.T):
        G = prob.G[t]
        R2 = G @ beam_covariance(Wr, W_c, t) @ G.conj().T + s2 * np.eye(prob.N)
        R2i = np.linalg.inv(R2)
        GW = G @ Wr[:, :, t]
        amp = 1.0 if prob.radar_amp is None else prob.radar_amp[t]
        out[:, :, t] = (2.0 / (prob.T * prob.L * LN2)) * (
            G.conj().T @ R2i @ GW - amp * s2 * R2i @ R2i @ GW
        )
    return out


def grad_comm_kld_wrt_radar(Wr, prob: IsacProblem, k: int, paper_printed: bool = False) -> np.ndarray:
    """Gradient of the closed-form comm KLD of UE ``k`` with respect to ``Wr``.

    The exact derivative is ``-2 c_k g_k sigma_h2 / (L sigma_eta2**2) Wr`` with
    ``c_k = kappa g_k p_k (N - K) / ln 2``. ``paper_printed=True`` uses a
    single power of ``sigma_eta2`` and a single pathloss factor.
    """
    g = prob.comm_gain[k]
    seta = comm_interference(prob, Wr)[k]
    c = prob.kappa * prob.p[k] * (prob.N - prob.K) / LN2
    if paper_printed:
        return -2.0 * c * g * prob.sigma_h2 / (prob.L * seta) * Wr
    return -2.0 * c * g * g * prob.sigma_h2 / (prob.L * seta**2) * Wr


def grad_penalty_radar(Wr, W_c, prob: IsacProblem, comm: str = "closed") -> np.ndarray:
    """Gradient of the squared-hinge penalty with respect to ``Wr``."""
    ev = evaluate(prob, Wr, W_c, comm=comm, grad=True)
    return penalty_grads(ev, prob.A, prob.B, Wr)[0]


def comm_objective(W_c, prob: IsacProblem, Wr=None) -> float:
    """Mean conditional comm KLD over UEs (bits)."""
    ev = _comm_only(prob, W_c, Wr)
    return float(np.mean(ev[0]))


def _comm_only(prob: IsacProblem, W_c, Wr):
    g = prob.comm_gain
    seta = comm_interference(prob, Wr)
    U = prob.H.T @ W_c
    P = np.abs(U) ** 2
    own = np.diag(P).copy()
    b = g * (P.sum(axis=1) - own) + seta
    scale = prob.kappa * g / LN2
    return scale * own / b, U, own, b, scale


def grad_comm_objective(W_c, prob: IsacProblem, Wr=None) -> np.ndarray:
    """Gradient of the mean conditional comm KLD with respect to the precoder."""
    kld, U, own, b, scale = _comm_only(prob, W_c, Wr)
    K = prob.K
    g = prob.comm_gain
    C = -(scale * g * own / b**2)[:, None] * 2.0 * U
    C[np.arange(K), np.arange(K)] = scale * 2.0 * np.diag(U) / b
    return prob.H.conj() @ C / K


def grad_constraints_wrt_Wc(W_c, Wr, prob: IsacProblem, paper_printed: bool = False) -> dict:
    """Gradients of the power and radar-KLD constraint functions in ``W_c``.

    Returns ``{"g_power": 2 W_c, "g_radar": (T, N, K) array}``. The printed
    variant drops the trace-term contribution and the factor 2.
    """
    if not paper_printed:
        _, Ms = _radar_parts(prob, Wr, W_c, True)
        g_radar = 2.0 * Ms @ W_c
    else:
        g_radar = np.empty((prob.T,) + W_c.shape, dtype=complex)
        for t in range(prob.T):
            G = prob.G[t]
            R2 = G @ beam_covariance(Wr, W_c, t) @ G.conj().T + prob.sigma_n2 * np.eye(prob.N)
            g_radar[t] = G.conj().T @ np.linalg.solve(R2, G @ W_c) / LN2
    return {"g_power": 2.0 * W_c, "g_radar": g_radar}


# --------------------------------------------------------------------------
# integrated objective and the ADMM auxiliary subproblem


def isac_value(prob: IsacProblem, Zr, Zc) -> float:
    ev = evaluate(prob, Zr, Zc, comm="conditional", grad=False)
    return float(ev.kld_r.mean() + ev.kld_c.mean())


def admm_value(Zr, Zc, Vr, Vc, rho, prob: IsacProblem, rho_pen: float = 0.0, weight: float = 1.0) -> float:
    """Augmented objective ``w (f - rho_pen p) - rho/2 ||Z - V||**2`` (to be maximised)."""
    ev = evaluate(prob, Zr, Zc, comm="conditional", grad=False)
    f = ev.kld_r.mean() + ev.kld_c.mean()
    p = penalty_from(ev, prob.A, prob.B)
    prox = np.vdot(Zr - Vr, Zr - Vr).real + np.vdot(Zc - Vc, Zc - Vc).real
    return float(weight * (f - rho_pen * p) - 0.5 * rho * prox)


def admm_value_and_grad(Zr, Zc, Vr, Vc, rho, prob: IsacProblem, rho_pen: float = 0.0, weight: float = 1.0):
    ev = evaluate(prob, Zr, Zc, comm="conditional", grad=True)
    f = ev.kld_r.mean() + ev.kld_c.mean()
    p = penalty_from(ev, prob.A, prob.B)
    dRr, dRc = Zr - Vr, Zc - Vc
    value = weight * (f - rho_pen * p) - 0.5 * rho * (np.vdot(dRr, dRr).real + np.vdot(dRc, dRc).real)
    gf_r = ev.dr_Wr / prob.T + np.mean(ev.dc_Wr_coef) * Zr
    gf_c = ev.dr_Wc.mean(axis=0) + ev.dc_Wc.mean(axis=0)
    gp_r, gp_c = penalty_grads(ev, prob.A, prob.B, Zr)
    g_r = weight * (gf_r - rho_pen * gp_r) - rho * dRr
    g_c = weight * (gf_c - rho_pen * gp_c) - rho * dRc
    return float(value), g_r, g_c, ev


def grad_admm_z(
    Z_r, Z_c, V_r, V_c, rho, prob: IsacProblem, rho_pen: float = 0.0, weight: float = 1.0, paper_printed: bool = False
):
    """Ascent gradient of the augmented objective in the auxiliary variables.

    Returns ``(gZ_r, gZ_c)``. ``paper_printed=True`` returns the displayed
    closed forms instead (radar part ``2 (R^-1 - R^-1 R2 R^-1) Z_r,t``
    applied from the left, comm part without conjugation or pathloss in
    the interference sum); these do not match finite differences.
    """
    if not paper_printed:
        _, g_r, g_c, _ = admm_value_and_grad(Z_r, Z_c, V_r, V_c, rho, prob, rho_pen, weight)
        return g_r, g_c
    g_r = np.empty_like(Z_r)
    for t in range(prob.T):
        G = prob.G[t]
        R = beam_covariance(Z_r, Z_c, t)
        R2 = G @ R @ G.conj().T + prob.sigma_n2 * np.eye(prob.N)
        Ri = np.linalg.inv(R)
        g_r[:, :, t] = 2.0 * (Ri - Ri @ R2 @ Ri) @ Z_r[:, :, t] / prob.T
    g_r = g_r - rho * (Z_r - V_r)
    seta = comm_interference(prob, Z_r)
    g_c = np.zeros_like(Z_c)
    U = prob.H.T @ Z_c
    for k in range(prob.K):
        hk = prob.H[:, k]
        den = seta[k] + np.sum(np.abs(np.delete(U[k], k)) ** 2)
        coef = 2.0 * prob.kappa * prob.comm_gain[k] / LN2
        g_c[:, k] += coef * hk * U[k, k] / den / prob.K
        for i in range(prob.K):
            if i != k:
                g_c[:, i] -= coef * hk * U[k, i] / den**2 / prob.K
    g_c = g_c - rho * (Z_c - V_c)
    return g_r, g_c


# --------------------------------------------------------------------------
# projections and finite differences


def project_power(W: np.ndarray, budget: float, normalizer: float = 1.0) -> np.ndarray:
    """Radially scale ``W`` onto ``||W||_F**2 / normalizer <= budget``.

    The input is returned unchanged (same object) when already feasible. A
    relative slack of 1e-12 keeps the map idempotent in floating point.
    """
    power = np.vdot(W, W).real / normalizer
    if power > budget * (1.0 + PROJECTION_SLACK):
        return W * math.sqrt(budget / power)
    return W


def joint_power(Wr: np.ndarray, Wc: np.ndarray) -> float:
    return radar_power(Wr) + float(np.vdot(Wc, Wc).real)


def project_joint(Wr: np.ndarray, Wc: np.ndarray, budget: float):
    """Scale ``(Wr, Wc)`` together onto ``||Wc||**2 + ||Wr||**2 / L <= budget``."""
    power = joint_power(Wr, Wc)
    if power > budget * (1.0 + PROJECTION_SLACK):
        f = math.sqrt(budget / power)
        return Wr * f, Wc * f
    return Wr, Wc


def fd_oracle(scalar_fn, X: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a real function of a complex array.

    Real and imaginary parts of every entry are perturbed independently, so
    the result follows the package gradient convention. Truncation error is
    O(eps**2) for smooth functions.
    """
    X = np.asarray(X, dtype=complex)
    grad = np.empty_like(X)
    flat = grad.reshape(-1)
    base = X.reshape(-1)
    for i in range(base.size):
        parts = []
        for step in (eps, 1j * eps):
            Xp = base.copy()
            Xm = base.copy()
            Xp[i] += step
            Xm[i] -= step
            fp = scalar_fn(Xp.reshape(X.shape))
            fm = scalar_fn(Xm.reshape(X.shape))
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteObjective(f"objective not finite near entry {i}")
            parts.append((fp - fm) / (2 * eps))
        flat[i] = parts[0] + 1j * parts[1]
    return grad


# --------------------------------------------------------------------------
# certification against finite differences


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def random_instance(rng: np.random.Generator, N: int = 6, K: int = 3, T: int = 2, L: int = 4):
    """Small well-conditioned problem with random waveforms for gradient checks.

    Thresholds are set above the attainable KLDs so every hinge is active.
    Returns ``(prob, Wr, Wc, Vr, Vc)``.
    """
    from .scenario import complex_normal, draw_channels, draw_targets

    cfg = ScenarioConfig(
        N=N, K=K, T=T, L=L,
        d_c=tuple(float(x) for x in rng.uniform(0.8, 1.5, K)),
        d_r=tuple(float(x) for x in rng.uniform(0.8, 1.5, T)),
        A_t=(80.0,) * T, B_k=(80.0,) * K, snr_ref_distance=1.0,
    )
    prob = IsacProblem.from_scenario(
        cfg, draw_channels(cfg, rng), draw_targets(cfg, rng), sigma_n2=float(rng.uniform(0.1, 1.0))
    )
    Wr = complex_normal(rng, (N, L, T), 0.1)
    Wc = complex_normal(rng, (N, K), 0.1)
    Vr = complex_normal(rng, (N, L, T), 0.1)
    Vc = complex_normal(rng, (N, K), 0.1)
    return prob, Wr, Wc, Vr, Vc


def certify_gradients(prob: IsacProblem, Wr, Wc, Vr, Vc, rho: float = 1.3, rho_pen: float = 0.7) -> dict:
    """Relative error of every analytic gradient against :func:`fd_oracle`."""
    out = {}
    out["radar_objective/Wr"] = _rel(
        grad_radar_objective(Wr, Wc, prob), fd_oracle(lambda X: radar_objective(X, Wc, prob), Wr)
    )
    ev = evaluate(prob, Wr, Wc, comm="conditional", grad=True)
    for t in range(prob.T):
        out[f"radar_kld[{t}]/Wr"] = _rel(
            _beam_grad(ev, t, Wr), fd_oracle(lambda X: evaluate(prob, X, Wc, grad=False).kld_r[t], Wr)
        )
        out[f"radar_kld[{t}]/Wc"] = _rel(
            ev.dr_Wc[t], fd_oracle(lambda X: evaluate(prob, Wr, X, grad=False).kld_r[t], Wc)
        )
    for k in range(prob.K):
        out[f"comm_closed[{k}]/Wr"] = _rel(
            grad_comm_kld_wrt_radar(Wr, prob, k),
            fd_oracle(lambda X: evaluate(prob, X, Wc, comm="closed", grad=False).kld_c[k], Wr),
        )
        out[f"comm_conditional[{k}]/Wc"] = _rel(
            ev.dc_Wc[k], fd_oracle(lambda X: evaluate(prob, Wr, X, grad=False).kld_c[k], Wc)
        )
        out[f"comm_conditional[{k}]/Wr"] = _rel(
            ev.dc_Wr_coef[k] * Wr, fd_oracle(lambda X: evaluate(prob, X, Wc, grad=False).kld_c[k], Wr)
        )
    out["comm_objective/Wc"] = _rel(
        grad_comm_objective(Wc, prob, Wr), fd_oracle(lambda X: comm_objective(X, prob, Wr), Wc)
    )
    out["penalty_closed/Wr"] = _rel(
        grad_penalty_radar(Wr, Wc, prob), fd_oracle(lambda X: penalty_value(X, Wc, prob), Wr)
    )
    g_r, g_c = penalty_grads(ev, prob.A, prob.B, Wr)
    out["penalty_conditional/Wr"] = _rel(
        g_r, fd_oracle(lambda X: penalty_value(X, Wc, prob, comm="conditional"), Wr)
    )
    out["penalty_conditional/Wc"] = _rel(
        g_c, fd_oracle(lambda X: penalty_value(Wr, X, prob, comm="conditional"), Wc)
    )
    gp = grad_constraints_wrt_Wc(Wc, Wr, prob)["g_power"]
    out["power/Wc"] = _rel(gp, fd_oracle(lambda X: float(np.vdot(X, X).real), Wc))
    gr, gc = grad_admm_z(Wr, Wc, Vr, Vc, rho, prob, rho_pen=rho_pen)
    out["admm/Zr"] = _rel(gr, fd_oracle(lambda X: admm_value(X, Wc, Vr, Vc, rho, prob, rho_pen), Wr))
    out["admm/Zc"] = _rel(gc, fd_oracle(lambda X: admm_value(Wr, X, Vr, Vc, rho, prob, rho_pen), Wc))
    return out


def _beam_grad(ev: Evaluation, t: int, Wr) -> np.ndarray:
    g = np.zeros_like(Wr)
    g[:, :, t] = ev.dr_Wr[:, :, t]
    return g
