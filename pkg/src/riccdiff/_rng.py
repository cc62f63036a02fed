"""Counter-based random streams for order-independent parallel determinism.

Every normal variate is a pure function of (stream key, path index, step,
slot), so path simulations can be chunked and threaded arbitrarily while
reproducing bit-identical output.  The mixing function is the splitmix64
finalizer applied along the counter chain; normals come from Box-Muller
pairs.  `_kernels.py` carries a scalar re-implementation of the same chain
for use inside compiled loops; `tests/test_rng.py` pins the two to bitwise
agreement.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SALT_U1 = np.uint64(0x243F6A8885A308D3)
_SALT_U2 = np.uint64(0x13198A2E03707344)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53
_TWO_PI = 6.283185307179586476925287

_u64 = np.uint64


def mix64(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer; full-avalanche bijection on uint64."""
    x = np.uint64(x) if np.isscalar(x) else x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        x ^= x >> _u64(30)
        x *= _M1
        x ^= x >> _u64(27)
        x *= _M2
        x ^= x >> _u64(31)
    return x


def stream_key(seed: int, tag: str) -> np.uint64:
    """Derive a stream key from a master seed and a purpose tag."""
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in tag.encode("utf-8"):
            h = (h ^ _u64(b)) * _FNV_PRIME
        base = mix64(_u64(seed & 0xFFFFFFFFFFFFFFFF)) + _GOLDEN * h
    return mix64(base)


def _counter(key, path, step, slot):
    with np.errstate(over="ignore"):
        k = mix64(key + _GOLDEN * path)
        k = mix64(k + _GOLDEN * step)
        k = mix64(k + _GOLDEN * slot)
    return k


def _to_unit(u):
    # top 53 bits -> (0, 1]; zero mapped to 2**-53 so log() stays finite
    f = (u >> _u64(11)) * _INV_2_53
    return np.maximum(f, _INV_2_53)


def normal_pairs(key, path, step, slot):
    """Return a Box-Muller pair (z_cos, z_sin) for each broadcast counter.

    All of path/step/slot may be integer arrays (broadcast together).
    """
    path = np.asarray(path, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    slot = np.asarray(slot, dtype=np.uint64)
    k = _counter(np.uint64(key), path, step, slot)
    u1 = _to_unit(mix64(k ^ _SALT_U1))
    u2 = _to_unit(mix64(k ^ _SALT_U2))
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    return rad * np.cos(ang), rad * np.sin(ang)


def normals(key, path, step, n: int):
    """n normals for one (path, step) cell, matching the kernel layout.

    Variate i is element i%2 of the Box-Muller pair at slot i//2.
    """
    slots = np.arange((n + 1) // 2, dtype=np.uint64)
    zc, zs = normal_pairs(key, path, step, slots)
    out = np.empty(2 * len(slots))
    out[0::2] = zc
    out[1::2] = zs
    return out[:n]


def normal_field(key, paths, step, n: int):
    """(len(paths), n) array of normals; row p uses counters of path paths[p]."""
    paths = np.asarray(paths, dtype=np.uint64)
    slots = np.arange((n + 1) // 2, dtype=np.uint64)
    zc, zs = normal_pairs(key, paths[:, None], np.uint64(step), slots[None, :])
    out = np.empty((len(paths), 2 * len(slots)))
    out[:, 0::2] = zc
    out[:, 1::2] = zs
    return out[:, :n]
