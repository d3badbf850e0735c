import numpy as np
import pytest

from reviewlab import ConfigError
from reviewlab.distributions import DistributionSpec, Marginal, parse_distribution


def test_normal_ppf_cdf_roundtrip():
    m = Marginal("normal", 1.5, 2.0)
    u = np.linspace(0.01, 0.99, 21)
    x = m.ppf(u)
    assert np.allclose(m.cdf(x), u, atol=1e-12)


def test_uniform_and_point():
    u = Marginal("uniform", -1.0, 3.0)
    assert u.ppf(0.5) == pytest.approx(1.0)
    assert u.cdf(3.0) == 1.0 and u.cdf(-1.0) == 0.0
    p = Marginal("point", 0.3)
    assert p.ppf(0.9) == 0.3
    assert p.sf_ge(0.3) == 1.0 and p.sf_ge(0.30001) == 0.0
    assert p.cdf_lt(0.3) == 0.0 and p.cdf_lt(0.31) == 1.0


def test_validation_errors():
    with pytest.raises(ConfigError):
        Marginal("normal", 0.0, 0.0)
    with pytest.raises(ConfigError):
        Marginal("uniform", 1.0, 1.0)
    with pytest.raises(ConfigError):
        parse_distribution("cauchy 0 1", 1)


def test_sample_consumes_d_uniforms_per_draw():
    # The same stream state must yield the same values regardless of marginal
    # kinds elsewhere; a (size, d) sample uses exactly size*d uniforms.
    spec = DistributionSpec((Marginal("normal", 0, 1), Marginal("point", 2.0)))
    rng1 = np.random.default_rng(1)
    a = spec.sample(rng1, 5)
    rng2 = np.random.default_rng(1)
    u = rng2.random((5, 2))
    assert np.array_equal(a, spec.ppf(u))
    assert np.all(a[:, 1] == 2.0)


def test_parse_broadcast_and_per_dim():
    d = parse_distribution("normal 0 1", 3)
    assert d.d == 3 and all(m.kind == "normal" for m in d.marginals)
    d2 = parse_distribution("normal 0 1, uniform 0 1, point 3", 3)
    assert [m.kind for m in d2.marginals] == ["normal", "uniform", "point"]
    with pytest.raises(ConfigError):
        parse_distribution("normal 0 1, uniform 0 1", 3)
