import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kldisac.errors import (
    ConfigParseError,
    DegenerateGeometry,
    NonPositiveDistance,
    PowerSplitViolation,
    UnsupportedOrder,
)
from kldisac.scenario import (
    ScenarioConfig,
    build_constellation,
    cic_waveform,
    config_from_dict,
    draw_channels,
    draw_targets,
    dump_config,
    load_config,
    noise_variance,
    pairwise_lambda,
    radar_power,
    stream,
    validate_config,
)


def test_defaults_validate(cfg):
    assert validate_config(cfg) is cfg
    assert cfg.N == 20 and cfg.K == 3 and cfg.T == 3 and cfg.L == 100
    np.testing.assert_allclose(cfg.powers, [1 / 6] * 3)


@pytest.mark.parametrize(
    "changes, err",
    [
        ({"P_r": 0.7}, PowerSplitViolation),
        ({"P_r": -0.5, "P_c": 1.5}, PowerSplitViolation),
        ({"N": 3}, DegenerateGeometry),
        ({"L": 0}, DegenerateGeometry),
        ({"d_c": (150.0, 0.0, 100.0)}, NonPositiveDistance),
        ({"M": 6}, UnsupportedOrder),
    ],
)
def test_invalid_configs(cfg, changes, err):
    with pytest.raises(err):
        validate_config(cfg.replace(**changes))


def test_noise_variance_axis(cfg):
    s2 = noise_variance(cfg, 10.0)
    assert s2 == pytest.approx(cfg.P_r * 50.0**-3 * 0.1)
    # 10 dB more SNR is 10x less noise
    assert noise_variance(cfg, 20.0) == pytest.approx(s2 / 10)
    assert noise_variance(cfg.replace(snr_ref_distance=1.0), 0.0) == pytest.approx(cfg.P_r)


def test_config_round_trip(tmp_path, cfg):
    c = cfg.replace(N=24, d_c=(10.0, 20.0, 30.0))
    path = tmp_path / "c.json"
    dump_config(c, path)
    back = load_config(path)
    assert back == c
    assert dump_config(back) == dump_config(c)


def test_config_unknown_key_and_line(tmp_path):
    with pytest.raises(ConfigParseError):
        config_from_dict({"N": 20, "nope": 1})
    path = tmp_path / "bad.json"
    path.write_text('{\n "N": 20,\n "K": 3,,\n}')
    with pytest.raises(ConfigParseError) as info:
        load_config(path)
    assert info.value.line == 3


def test_streams_are_keyed_and_reproducible():
    a = stream(3, "channel", 2).standard_normal(4)
    b = stream(3, "channel", 2).standard_normal(4)
    c = stream(3, "channel", 1).standard_normal(4)
    d = stream(3, "target", 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_draw_shapes_and_pathloss(cfg):
    ch = draw_channels(cfg, stream(0, "channel", 0))
    tg = draw_targets(cfg, stream(0, "target", 0))
    assert ch.H.shape == (20, 3) and tg.H.shape == (3, 20, 20)
    np.testing.assert_allclose(ch.gain, np.array(cfg.d_c) ** -3.0)
    np.testing.assert_allclose(tg.G[1], np.array(cfg.d_r)[1] ** -1.5 * tg.H[1])


def test_absent_targets_do_not_shift_streams(cfg):
    a = draw_targets(cfg, stream(0, "target", 0))
    b = draw_targets(cfg, stream(0, "target", 0), presence=[1, 0, 1])
    np.testing.assert_array_equal(a.H, b.H)
    assert list(b.present) == [1, 0, 1]


@pytest.mark.parametrize("M", [2, 4, 8, 16])
def test_constellation_unit_energy_and_gray(M):
    con = build_constellation(M)
    np.testing.assert_allclose(np.abs(con.symbols), 1.0)
    # adjacent points differ in exactly one bit
    for i in range(M):
        assert bin(int(con.labels[i] ^ con.labels[(i + 1) % M])).count("1") == 1
    # ordered-pair sum of squared distances is 2 M^2 for a zero-mean unit ring
    assert con.lam == pytest.approx(2 * M * M)


def test_qpsk_lambda_and_scale(qpsk):
    assert qpsk.lam == pytest.approx(32.0)
    assert qpsk.kld_scale == pytest.approx(8 / 3)
    np.testing.assert_allclose(qpsk.symbols[0], (1 + 1j) / math.sqrt(2))


def test_pairwise_lambda_oracle():
    s = np.array([1, 1j, -1, -1j])
    brute = sum(abs(a - b) ** 2 for a in s for b in s if a is not b)
    assert pairwise_lambda(s) == pytest.approx(brute)


def test_cic_identity_covariance(cfg):
    Wr = cic_waveform(cfg, stream(0, "cic", 0))
    assert Wr.shape == (20, 100, 3)
    for t in range(3):
        R = Wr[:, :, t] @ Wr[:, :, t].conj().T / cfg.L
        np.testing.assert_allclose(R, cfg.P_r / (cfg.N * cfg.T) * np.eye(cfg.N), atol=1e-12)
    assert radar_power(Wr) == pytest.approx(cfg.P_r)


@given(N=st.integers(2, 8), L=st.integers(1, 12), T=st.integers(1, 3), seed=st.integers(0, 2**16))
def test_cic_power_budget_any_shape(N, L, T, seed):
    cfg = ScenarioConfig(N=N, K=1, T=T, L=L, d_c=(100.0,), d_r=(100.0,) * T, A_t=(1.0,) * T, B_k=(1.0,))
    Wr = cic_waveform(cfg, stream(seed, "cic"))
    assert radar_power(Wr) == pytest.approx(cfg.P_r, rel=1e-10)


def test_to_dict_is_json(cfg):
    json.dumps(cfg.to_dict())
