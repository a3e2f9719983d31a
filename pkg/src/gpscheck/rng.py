"""Reproducible random number substreams.

All randomness in the package flows through ``numpy.random.Generator``
objects created here. Substreams are derived from integer key tuples via
``numpy.random.SeedSequence``, which hashes the keys into independent
streams. The scheme is documented where used:

* bootstrap draws use ``substream(seed, tag)`` with a fixed integer tag,
* simulation replicate r of design d at sample size n uses
  ``substream(master_seed, d, n, r)``.

Results therefore never depend on thread or process scheduling, only on
the key tuple.
"""

from __future__ import annotations

import secrets

import numpy as np

# Largest seed we hand out; keeps seeds exactly representable in JSON
# readers that parse integers as doubles.
_SEED_BITS = 53


def resolve_seed(seed: int | None) -> int:
    """Return ``seed`` unchanged, or a fresh entropy-derived seed if None."""
    if seed is None:
        return secrets.randbits(_SEED_BITS)
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return int(seed)


def substream(*key: int) -> np.random.Generator:
    """Deterministic generator for the given integer key tuple."""
    if not key:
        raise ValueError("substream requires at least one key component")
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def child_seeds(count: int, *key: int) -> list[int]:
    """Derive ``count`` integer seeds from a key tuple.

    Used to hand independent seeds to nested procedures (bootstraps inside
    simulation replicates) while keeping every stream reconstructible from
    the master seed alone.
    """
    ss = np.random.SeedSequence([int(k) for k in key])
    state = ss.generate_state(count, dtype=np.uint64)
    # shift into the JSON-safe range; collisions are irrelevant because
    # each child seed lives in its own namespace
    return [int(s >> (64 - _SEED_BITS)) for s in state]
