"""Synthetic genotype matrices with admixture blocks, signal and kinship.

The generator runs three stages on an ``m x n`` zero matrix:

1. ``r`` times, a random rectangular block (rows and columns each a random
   contiguous range) is set to one value drawn from {0, 1, 2}.
2. ``nsignal`` times, one uniformly chosen entry is set to a value drawn
   from {0, 1, 2}. Draws are with replacement.
3. ``round(rkins * m)`` times, a uniformly chosen row is overwritten by a
   copy of another uniformly chosen row. The destination index is drawn
   before the source index.

Index draws are 0-based here; ranges are inclusive ``(lo, hi)`` pairs.
All randomness comes from one ``numpy.random.Generator`` (PCG64) seeded by
``seed``. Bounded integer draws use numpy's rejection-based algorithm, so
every value in a range is exactly equally likely.
"""

from dataclasses import dataclass

import numpy as np

from .ingest import GenotypeMatrix

__all__ = ["ModelParams", "randrange", "model", "model_matrix"]

# signal entries are drawn in chunks to bound memory on large matrices
_SIGNAL_CHUNK = 1 << 20


@dataclass(frozen=True)
class ModelParams:
    """Inputs of the synthetic genotype model."""

    m: int
    n: int
    r: int = 10
    nsignal: int | None = None  # None means m * n
    rkins: float = 0.017
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        if self.r < 0:
            raise ValueError("r must be >= 0")
        if self.nsignal is not None and self.nsignal < 0:
            raise ValueError("nsignal must be >= 0")
        if not 0.0 <= self.rkins <= 1.0:
            raise ValueError("rkins must lie in [0, 1]")

    @property
    def n_signal(self):
        return self.m * self.n if self.nsignal is None else int(self.nsignal)

    @property
    def n_kinship(self):
        # Python's round() ties to even, like Julia's round(Int, x)
        return int(round(self.rkins * self.m))


def randrange(n, rng):
    """Random inclusive sub-range ``(lo, hi)`` of ``0..n-1``.

    Two uniform draws are always consumed, and the pair is ordered.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    i1 = int(rng.integers(0, n))
    i2 = int(rng.integers(0, n))
    return (i2, i1) if i1 > i2 else (i1, i2)


def model_matrix(params, rng=None):
    """Generate the synthetic matrix as a dense ``int8`` array."""
    p = params
    if rng is None:
        rng = np.random.default_rng(p.seed)
    A = np.zeros((p.m, p.n), dtype=np.int8, order="F")

    for _ in range(p.r):
        k = int(rng.integers(0, 3))
        r_lo, r_hi = randrange(p.m, rng)
        c_lo, c_hi = randrange(p.n, rng)
        A[r_lo : r_hi + 1, c_lo : c_hi + 1] = k

    # Each signal event draws (row, col, value) in that order. Within a chunk
    # the draws are interleaved through per-position bounds, and only the last
    # write to a repeated entry survives, as in sequential assignment.
    bounds = np.array([p.m, p.n, 3], dtype=np.int64)
    flat = A.reshape(-1, order="F")
    remaining = p.n_signal
    while remaining > 0:
        c = min(remaining, _SIGNAL_CHUNK)
        draws = rng.integers(0, np.tile(bounds, c)).reshape(c, 3)
        idx = draws[:, 0] + p.m * draws[:, 1]
        # last occurrence of each index wins
        rev_unique, rev_pos = np.unique(idx[::-1], return_index=True)
        last = c - 1 - rev_pos
        flat[rev_unique] = draws[last, 2]
        remaining -= c

    for _ in range(p.n_kinship):
        dest = int(rng.integers(0, p.m))
        src = int(rng.integers(0, p.m))
        A[dest, :] = A[src, :]
    return A


def model(params):
    """Generate a :class:`GenotypeMatrix` (marker-major, no missing entries)."""
    return GenotypeMatrix(model_matrix(params))
