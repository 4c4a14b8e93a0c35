import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kldisac.errors import NonFiniteObjective
from kldisac.gradients import (
    certify_gradients,
    fd_oracle,
    grad_comm_kld_wrt_radar,
    grad_constraints_wrt_Wc,
    grad_radar_objective,
    joint_power,
    project_joint,
    project_power,
    radar_power,
    random_instance,
)
from kldisac.scenario import complex_normal


def test_fd_oracle_on_known_gradients():
    rng = np.random.default_rng(0)
    X = complex_normal(rng, (3, 2))
    c = complex_normal(rng, (3, 2))
    np.testing.assert_allclose(fd_oracle(lambda Z: float(np.vdot(Z, Z).real), X), 2 * X, atol=1e-8)
    np.testing.assert_allclose(fd_oracle(lambda Z: float(np.vdot(c, Z).real), X), c, atol=1e-8)


def test_fd_oracle_rejects_non_finite():
    with pytest.raises(NonFiniteObjective):
        fd_oracle(lambda Z: np.inf, np.ones(2, complex))


@pytest.mark.parametrize("seed", range(3))
def test_certification_small_instances(seed):
    rng = np.random.default_rng(seed)
    res = certify_gradients(*random_instance(rng, N=5, K=2, T=2, L=3))
    bad = {k: v for k, v in res.items() if v > 1e-5}
    assert not bad, bad


def test_certification_covers_every_role():
    res = certify_gradients(*random_instance(np.random.default_rng(9), N=4, K=2, T=1, L=2))
    roles = {k.split("[")[0].split("/")[0] for k in res}
    assert roles == {
        "radar_objective", "radar_kld", "comm_closed", "comm_conditional", "comm_objective",
        "penalty_closed", "penalty_conditional", "power", "admm",
    }


def test_printed_variants_differ_from_certified():
    rng = np.random.default_rng(1)
    prob, Wr, Wc, *_ = random_instance(rng, N=5, K=2, T=2, L=3)
    assert not np.allclose(grad_radar_objective(Wr, Wc, prob), grad_radar_objective(Wr, Wc, prob, paper_printed=True))
    assert not np.allclose(grad_comm_kld_wrt_radar(Wr, prob, 0), grad_comm_kld_wrt_radar(Wr, prob, 0, paper_printed=True))
    a = grad_constraints_wrt_Wc(Wc, Wr, prob)["g_radar"]
    b = grad_constraints_wrt_Wc(Wc, Wr, prob, paper_printed=True)["g_radar"]
    assert not np.allclose(a, b)


@given(seed=st.integers(0, 2**16), budget=st.floats(1e-3, 10.0), scale=st.floats(1e-3, 1e3))
def test_project_power_properties(seed, budget, scale):
    rng = np.random.default_rng(seed)
    W = complex_normal(rng, (4, 3), scale)
    P = project_power(W, budget, normalizer=3.0)
    assert np.vdot(P, P).real / 3.0 <= budget * (1 + 1e-10)
    Q = project_power(P, budget, normalizer=3.0)
    assert Q is P
    if np.vdot(W, W).real / 3.0 <= budget:
        assert P is W
    else:
        # radial: same direction
        assert abs(np.vdot(P, W)) == pytest.approx(np.linalg.norm(P) * np.linalg.norm(W), rel=1e-12)


@given(seed=st.integers(0, 2**16), budget=st.floats(1e-3, 10.0))
def test_project_joint_properties(seed, budget):
    rng = np.random.default_rng(seed)
    Wr = complex_normal(rng, (4, 5, 2), 2.0)
    Wc = complex_normal(rng, (4, 2), 2.0)
    Pr, Pc = project_joint(Wr, Wc, budget)
    assert joint_power(Pr, Pc) <= budget * (1 + 1e-10)
    Qr, Qc = project_joint(Pr, Pc, budget)
    assert Qr is Pr and Qc is Pc
    # one common factor for both blocks
    f = np.linalg.norm(Pr) / np.linalg.norm(Wr)
    assert np.linalg.norm(Pc) / np.linalg.norm(Wc) == pytest.approx(f, rel=1e-12)
    assert radar_power(Wr) == pytest.approx(np.vdot(Wr, Wr).real / 5)
