"""Seed derivation and serialization helpers shared across the package."""

import hashlib
import math
import random


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from an arbitrary label path.

    Children derived from distinct labels are independent streams; the same
    (root seed, labels) always yields the same child on any platform.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def child_rng(*parts) -> random.Random:
    """random.Random seeded from a derived label path."""
    return random.Random(derive_seed(*parts))


def fmt_float(value: float) -> str:
    """Floats in reports carry 9 significant digits."""
    return "%.9g" % value


def ceil_fraction(p: float, population: int) -> int:
    """ceil(p * population) robust to IEEE artifacts (0.01*100 == 1.0000...02)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"fraction out of range: {p}")
    return math.ceil(p * population - 1e-9) if p > 0 else 0
