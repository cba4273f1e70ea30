"""Cross-shaped 128-QAM with quasi-Gray labelling.

The 7-bit label splits into a 4-bit Gray index along I (16 odd levels
-15..15) and a 3-bit Gray index along Q (8 odd levels -7..7). The four
outer I columns (|I| in {13, 15}) are folded onto the rows |Q| in {9, 11}
by ``(I, Q) -> (Q, sign(I) (|I| - 4))``, which leaves the 12x12 grid minus
its 2x2 corners. Neighbours inside each folded region still differ in one
bit; across the fold seam they may differ in more.
"""

from __future__ import annotations

import numpy as np

BITS_PER_SYMBOL = 7
ORDER = 2**BITS_PER_SYMBOL


def _gray_levels(nbits: int) -> np.ndarray:
    """Level (odd integer) carried by each ``nbits`` label under Gray coding."""
    n = 2**nbits
    levels = np.empty(n, dtype=int)
    for pos in range(n):
        levels[pos ^ (pos >> 1)] = 2 * pos - n + 1
    return levels


def _build() -> np.ndarray:
    i_levels = _gray_levels(4)
    q_levels = _gray_levels(3)
    points = np.empty(ORDER, dtype=complex)
    for label in range(ORDER):
        i = i_levels[label >> 3]
        q = q_levels[label & 7]
        if abs(i) > 11:
            i, q = q, int(np.sign(i)) * (abs(i) - 4)
        points[label] = complex(i, q)
    return points


#: Integer-grid constellation indexed by label (bit 0 of the label is the last bit).
GRID = _build()
SCALE = float(np.sqrt(np.mean(np.abs(GRID) ** 2)))
CONSTELLATION = GRID / SCALE
_WEIGHTS = 1 << np.arange(BITS_PER_SYMBOL - 1, -1, -1)


def qam_map(bits) -> np.ndarray:
    """Map a bit array (length a multiple of 7, MSB first) to unit-power symbols."""
    b = np.asarray(bits, dtype=np.int64).ravel()
    if b.size % BITS_PER_SYMBOL:
        raise ValueError(f"bit count {b.size} is not a multiple of {BITS_PER_SYMBOL}")
    labels = b.reshape(-1, BITS_PER_SYMBOL) @ _WEIGHTS
    return CONSTELLATION[labels]


def qam_demap(symbols, chunk: int = 8192) -> np.ndarray:
    """Nearest-neighbour decision, returned as bits (uint8)."""
    s = np.asarray(symbols, dtype=complex).ravel()
    labels = np.empty(s.size, dtype=np.int64)
    for start in range(0, s.size, chunk):
        part = s[start : start + chunk]
        dist = np.abs(part[:, None] - CONSTELLATION[None, :])
        labels[start : start + chunk] = np.argmin(dist, axis=1)
    return ((labels[:, None] >> np.arange(BITS_PER_SYMBOL - 1, -1, -1)) & 1).astype(np.uint8).ravel()
