import numpy as np
from numba import njit
from scipy import stats

from cablegff import rng


def test_streams_are_pure_functions():
    a = rng.uniform_array(5, 3, rng.TAG_EDGE, 0, 100)
    b = rng.uniform_array(5, 3, rng.TAG_EDGE, 0, 100)
    c = rng.uniform_array(5, 4, rng.TAG_EDGE, 0, 100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniform_and_normal_laws():
    u = rng.uniform_array(1, 0, rng.TAG_EDGE, 0, 50000)
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    z = rng.normal_array(1, 0, rng.TAG_GFF_NOISE, 0, 50000)
    assert stats.kstest(z, "norm").pvalue > 1e-3


@njit
def _gamma_draws(n):
    key = rng.stream_key(2, 0, rng.TAG_POINT, 0, 0)
    out = np.empty(n)
    for i in range(n):
        out[i] = rng.gamma_half(key, i)
    return out


@njit
def _poisson_draws(n, lam):
    key = rng.stream_key(2, 0, rng.TAG_LOOP_COUNT, 0, 0)
    out = np.empty(n)
    for i in range(n):
        out[i] = rng.poisson(rng.sub_key(key, i), 0, lam)
    return out


def test_gamma_half_and_poisson():
    g = _gamma_draws(20000)
    assert stats.kstest(g, stats.gamma(0.5).cdf).pvalue > 1e-3
    for lam in (0.3, 4.0, 60.0):
        p = _poisson_draws(20000, lam)
        assert abs(p.mean() - lam) < 4 * np.sqrt(lam / len(p))
        assert abs(p.var() - lam) < 0.1 * lam


def test_numpy_generator_reproducible():
    g1 = rng.numpy_generator(7, 1, rng.TAG_BOOTSTRAP).integers(0, 1000, 10)
    g2 = rng.numpy_generator(7, 1, rng.TAG_BOOTSTRAP).integers(0, 1000, 10)
    assert np.array_equal(g1, g2)
