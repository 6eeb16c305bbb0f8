"""Counter-based random substreams.

Every random draw in the package is a pure function of ``(seed, k, attempt)``:
the word is produced by chaining the SplitMix64 finalizer over the three
counters. Nothing depends on call order, so parallel pre-sampling and
resampling never perturb other particles' draws.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def splitmix64(z: int) -> int:
    """Reference (pure Python) SplitMix64 step; returns the mixed word."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64(seed: int, k: int, attempt: int = 0) -> int:
    h = splitmix64(seed & MASK64)
    h = splitmix64(h ^ (k & MASK64))
    return splitmix64(h ^ (attempt & MASK64))


def unit_float(word: int) -> float:
    """Top 53 bits of ``word`` as a float in [0, 1)."""
    return (word >> 11) * _INV_2_53


def substream_angle(seed: int, k: int, attempt: int = 0) -> float:
    return TWO_PI * unit_float(mix64(seed, k, attempt))


def substream_direction(seed: int, k: int, attempt: int = 0, dim: int = 2) -> np.ndarray:
    """Uniform unit vector for substream ``(seed, k, attempt)``.

    In 2D this is ``(cos t, sin t)`` with ``t = substream_angle(...)``; in 3D
    it is a normalized triple of standard normals (Box-Muller on words drawn
    from the same substream), which is exactly uniform on the sphere.
    """
    if dim == 2:
        return np.array(unit_dir2(substream_angle(seed, k, attempt)))
    return _sphere_direction(np.uint64(seed & MASK64), np.uint64(k & MASK64),
                             np.uint64(attempt & MASK64))


# -- numba versions (uint64 arithmetic wraps) --------------------------------

@njit(cache=True)
def unit_dir2(theta):
    """(cos theta, sin theta) after reduction by quarter turns, so that
    representable multiples of pi/2 give exact axis vectors."""
    q = math.floor(theta / _HALF_PI + 0.5)
    r = theta - q * _HALF_PI
    c = math.cos(r)
    s = math.sin(r)
    k = int(q) % 4
    if k == 0:
        return c, s
    if k == 1:
        return -s, c
    if k == 2:
        return -c, -s
    return s, -c


@njit(cache=True)
def unit_dirs2(thetas, out):
    for i in range(thetas.shape[0]):
        c, s = unit_dir2(thetas[i])
        out[i, 0] = c
        out[i, 1] = s



@njit(cache=True)
def _splitmix64_nb(z):
    z = z + np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _mix64_nb(seed, k, attempt):
    h = _splitmix64_nb(seed)
    h = _splitmix64_nb(h ^ k)
    return _splitmix64_nb(h ^ attempt)


@njit(cache=True)
def _unit_nb(word):
    return np.float64(word >> np.uint64(11)) * _INV_2_53


@njit(cache=True)
def _angle_nb(seed, k, attempt):
    return TWO_PI * _unit_nb(_mix64_nb(seed, k, attempt))


@njit(cache=True)
def _sphere_direction(seed, k, attempt):
    # four further words from the substream feed two Box-Muller pairs
    h = _mix64_nb(seed, k, attempt)
    u = np.empty(4)
    for j in range(4):
        h = _splitmix64_nb(h)
        u[j] = _unit_nb(h)
    r1 = math.sqrt(-2.0 * math.log(1.0 - u[0]))
    r2 = math.sqrt(-2.0 * math.log(1.0 - u[2]))
    v = np.empty(3)
    v[0] = r1 * math.cos(TWO_PI * u[1])
    v[1] = r1 * math.sin(TWO_PI * u[1])
    v[2] = r2 * math.cos(TWO_PI * u[3])
    nrm = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if nrm == 0.0:
        v[0] = 0.0
        v[1] = 0.0
        v[2] = 1.0
        return v
    return v / nrm


def angles(seed: int, ks: np.ndarray, attempt: int = 0) -> np.ndarray:
    """Vectorized :func:`substream_angle` over an array of counters."""
    return _angles_batch(np.uint64(seed & MASK64), np.asarray(ks, dtype=np.uint64),
                         np.uint64(attempt & MASK64))


@njit(cache=True)
def _angles_batch(seed, ks, attempt):
    out = np.empty(ks.shape[0])
    for i in range(ks.shape[0]):
        out[i] = _angle_nb(seed, ks[i], attempt)
    return out


def directions(seed: int, ks: np.ndarray, dim: int = 2, attempt: int = 0) -> np.ndarray:
    """Unit vectors for a batch of counters, shape ``(len(ks), dim)``."""
    ks = np.asarray(ks, dtype=np.uint64)
    if dim == 2:
        out = np.empty((ks.shape[0], 2))
        unit_dirs2(angles(seed, ks, attempt), out)
        return out
    return _sphere_batch(np.uint64(seed & MASK64), ks, np.uint64(attempt & MASK64))


@njit(cache=True)
def _sphere_batch(seed, ks, attempt):
    out = np.empty((ks.shape[0], 3))
    for i in range(ks.shape[0]):
        out[i] = _sphere_direction(seed, ks[i], attempt)
    return out
