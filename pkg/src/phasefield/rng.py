"""Counter-based random numbers keyed on (seed, integer index).

Every random quantity in the package is a pure function of a 64-bit seed and
an integer site index. Cells are drawn from the Philox4x64 block whose counter
equals the site index, so a cell's value does not depend on the window that
was requested around it. Each block yields four independent 64-bit words,
used as four streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

_OFFSET = 1 << 63
_MASK = (1 << 64) - 1
_SCALE = 2.0 ** -53


def derive_seed(seed0: int, *labels: object) -> int:
    """Derive a child seed from a root seed and a tuple of labels.

    Parameters
    ----------
    seed0 : int
        Root seed.
    *labels : object
        Anything with a stable ``repr`` (strings, ints, floats).

    Returns
    -------
    int
        A 64-bit unsigned integer.
    """
    text = repr((int(seed0) & _MASK,) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def raw_blocks(seed: int, start: int, count: int, family: int = 0) -> np.ndarray:
    """Return Philox words for sites ``start, ..., start + count - 1``.

    Returns an array of shape ``(count, 4)``; column ``j`` is stream ``j``.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    key = np.array([int(seed) & _MASK, int(family) & _MASK], dtype=np.uint64)
    # block k after construction uses counter c + 1 + k
    c = (int(start) + _OFFSET - 1) & _MASK
    counter = np.array([c, 0, 0, 0], dtype=np.uint64)
    gen = np.random.Philox(counter=counter, key=key)
    return gen.random_raw(4 * count).reshape(count, 4)


def uniforms(seed: int, start: int, count: int, family: int = 0) -> np.ndarray:
    """Uniform doubles in [0, 1) for consecutive sites, shape ``(count, 4)``."""
    words = raw_blocks(seed, start, count, family)
    return (words >> np.uint64(11)).astype(np.float64) * _SCALE


def uniforms_at(seed: int, sites: np.ndarray, family: int = 0) -> np.ndarray:
    """Uniforms for an arbitrary (possibly unsorted) array of sites."""
    sites = np.asarray(sites, dtype=np.int64)
    if sites.size == 0:
        return np.zeros((0, 4))
    lo, hi = int(sites.min()), int(sites.max())
    block = uniforms(seed, lo, hi - lo + 1, family)
    return block[sites - lo]
