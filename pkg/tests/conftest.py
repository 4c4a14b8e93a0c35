import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kldisac.comm import zf_precoder
from kldisac.gradients import IsacProblem
from kldisac.scenario import (
    ScenarioConfig,
    build_constellation,
    cic_waveform,
    draw_channels,
    draw_targets,
    noise_variance,
    stream,
)

settings.register_profile("default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def qpsk():
    return build_constellation(4)


def make_instance(cfg=None, snr_db=10.0, redraw=0, seed=0):
    """Desk-scale draw with the CIC/ZF baseline pair and its problem."""
    cfg = cfg or ScenarioConfig()
    con = build_constellation(cfg.M)
    s2 = noise_variance(cfg, snr_db)
    ch = draw_channels(cfg, stream(seed, "channel", redraw))
    tg = draw_targets(cfg, stream(seed, "target", redraw))
    Wc = zf_precoder(ch.H, cfg.powers).W
    Wr = cic_waveform(cfg, stream(seed, "cic", redraw))
    prob = IsacProblem.from_scenario(cfg, ch, tg, s2, con)
    return prob, Wr, Wc, ch, tg


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield
