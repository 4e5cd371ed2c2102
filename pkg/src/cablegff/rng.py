"""Counter-based random numbers.

Every draw is a pure function of ``(master seed, replica, tag, key..., counter)``,
so results do not depend on evaluation order or on how replicas are spread over
workers.  The mixing function is the SplitMix64 finalizer; a stream key is built
by chaining it over the key words, and the ``i``-th value of a stream is the
finalizer applied to ``key + (i + 1) * GOLDEN``.

All kernels are numba-compiled so they can be called from other jitted code.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

RNG_CONTRACT_VERSION = "splitmix64-chain/1"

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream tags; one per kind of draw
TAG_GFF_NOISE = 1
TAG_EDGE = 2
TAG_BRIDGE = 3
TAG_LOOP_COUNT = 4
TAG_LOOP_ROOT = 5
TAG_LOOP_PATH = 6
TAG_HOLD = 7
TAG_POINT = 8
TAG_GLUE = 9
TAG_SIGN = 10
TAG_EXPLORE = 11
TAG_HEATBATH = 12
TAG_CHAINS = 13
TAG_BOOTSTRAP = 14


@njit(cache=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, replica, tag, a, b):
    """Key of the stream addressed by ``(seed, replica, tag, a, b)``."""
    h = mix64(np.uint64(seed) + GOLDEN)
    h = mix64(h ^ (np.uint64(replica) * GOLDEN + np.uint64(1)))
    h = mix64(h ^ (np.uint64(tag) * _M1 + np.uint64(2)))
    h = mix64(h ^ (np.uint64(a) * _M2 + np.uint64(3)))
    h = mix64(h ^ (np.uint64(b) * GOLDEN + np.uint64(5)))
    return h


@njit(cache=True)
def sub_key(key, a):
    return mix64(key ^ (np.uint64(a) * _M2 + np.uint64(7)))


@njit(cache=True)
def bits(key, counter):
    return mix64(key + (np.uint64(counter) + np.uint64(1)) * GOLDEN)


@njit(cache=True)
def uniform(key, counter):
    """Uniform on the open interval (0, 1)."""
    return (float(bits(key, counter) >> _S11) + 0.5) * _INV53


@njit(cache=True)
def normal(key, counter):
    """Standard normal from counters ``2c`` and ``2c + 1`` (Box-Muller)."""
    u1 = uniform(key, 2 * counter)
    u2 = uniform(key, 2 * counter + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def exponential(key, counter):
    return -math.log(uniform(key, counter))


@njit(cache=True)
def gamma_half(key, counter):
    """Gamma(shape 1/2, scale 1), i.e. half a chi-square with one degree of freedom."""
    z = normal(key, counter)
    return 0.5 * z * z


@njit(cache=True)
def poisson(key, counter, lam):
    """Poisson(lam) by sequential inversion; uses a single uniform.

    Large means are split into pieces of at most 500 drawn from derived keys so
    ``exp(-lam)`` never underflows.
    """
    if lam <= 0.0:
        return 0
    if lam > 500.0:
        pieces = int(math.ceil(lam / 500.0))
        part = lam / pieces
        total = 0
        for j in range(pieces):
            total += poisson(sub_key(key, counter * 1009 + j), 0, part)
        return total
    u = uniform(key, counter)
    p = math.exp(-lam)
    cdf = p
    k = 0
    while u > cdf:
        k += 1
        p *= lam / k
        cdf += p
        if p < 1e-300 and k > lam:
            break
    return k


@njit(cache=True)
def randint(key, counter, n):
    """Uniform integer in ``[0, n)``."""
    return min(int(uniform(key, counter) * n), n - 1)


@njit(cache=True)
def uniform_array(seed, replica, tag, a, n):
    key = stream_key(seed, replica, tag, a, 0)
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform(key, i)
    return out


@njit(cache=True)
def normal_array(seed, replica, tag, a, n):
    key = stream_key(seed, replica, tag, a, 0)
    out = np.empty(n)
    for i in range(n):
        out[i] = normal(key, i)
    return out


def numpy_generator(seed: int, replica: int, tag: int) -> np.random.Generator:
    """A numpy Philox generator keyed by ``(seed, replica, tag)``.

    For non-hot-path randomness (instance generation, bootstrap resampling)
    where a full ``Generator`` API is convenient.
    """
    ss = np.random.SeedSequence([int(seed) & (2**63 - 1), int(replica), int(tag)])
    return np.random.Generator(np.random.Philox(ss))
