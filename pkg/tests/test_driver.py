"""Driver profile generator tests; the coupled driver loop itself is
exercised in test_coupling with real workers."""

import math

import numpy as np
import pytest

from gmcf_mini.driver import DriverConfig, generate_profile
from gmcf_mini.errors import ConfigError


def cfg(**kw):
    base = dict(
        kp=6,
        u_star=0.5,
        z0=0.1,
        level_heights=0.1 * np.exp(np.arange(1, 7)),
        gust_amplitude=0.3,
        gust_period=600.0,
    )
    base.update(kw)
    return DriverConfig(**base)


def test_config_rejects_bad_levels():
    with pytest.raises(ConfigError, match="increasing"):
        cfg(level_heights=np.array([1.0, 3.0, 2.0, 4.0, 5.0, 6.0]))
    with pytest.raises(ConfigError, match="roughness"):
        cfg(level_heights=np.array([0.05, 1, 2, 3, 4, 5]))
    with pytest.raises(ConfigError, match="length"):
        cfg(level_heights=np.arange(1.0, 5.0))


def test_zero_gust_profile_is_time_independent():
    c = cfg(gust_amplitude=0.0)
    p0 = generate_profile(c, 0.0)
    p1 = generate_profile(c, 333.3)
    assert np.array_equal(p0.u, p1.u)
    assert np.all(p0.v == 0.0) and np.all(p0.w == 0.0)


def test_log_law_hand_value():
    # first level at z0 * e with u_star = 0.41: u = 1 * ln(e) * gust = 1
    c = cfg(u_star=0.41, gust_amplitude=0.0)
    p = generate_profile(c, 0.0)
    assert p.u[0] == pytest.approx(1.0, rel=1e-6)
    # sinusoidal factor scales the whole profile
    c2 = cfg(u_star=0.41, gust_amplitude=0.5, gust_period=600.0)
    p2 = generate_profile(c2, 150.0)  # quarter period: sin = 1
    assert p2.u[0] == pytest.approx(1.5, rel=1e-6)


def test_profile_is_periodic_bitwise():
    c = cfg()
    for t in (0.0, 17.25, 599.0):
        a = generate_profile(c, t)
        b = generate_profile(c, t + c.gust_period)
        assert np.array_equal(a.u, b.u)


def test_profile_monotone_nonnegative_for_small_gust():
    c = cfg(gust_amplitude=0.9)
    for t in np.linspace(0, 600, 13):
        p = generate_profile(c, float(t))
        assert np.all(p.u >= 0.0)
        assert np.all(np.diff(p.u) >= 0.0)


def test_profile_matches_analytic_law():
    c = cfg()
    t = 123.0
    gust = 1.0 + c.gust_amplitude * math.sin(2 * math.pi * (t % c.gust_period) / c.gust_period)
    want = (c.u_star / 0.41) * np.log(c.level_heights / c.z0) * gust
    got = generate_profile(c, t)
    assert np.allclose(got.u, want.astype(np.float32), rtol=1e-7)
