"""Named, independently reproducible random streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np
from scipy import special


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for ``name`` under ``seed``; ``extra`` ints select sub-sub-streams (e.g. epoch)."""
    return np.random.default_rng([int(seed), stream_key(name), *map(int, extra)])


def subseed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([int(seed), stream_key(name)]).generate_state(1)[0])


def stratified_normal(rng: np.random.Generator, n: int, rows: int | None = None) -> np.ndarray:
    """One standard-normal draw per equal-probability stratum, jittered within it.

    With ``rows`` set, each row gets its own independent set of ``n`` draws.
    """
    shape = (n,) if rows is None else (rows, n)
    u = (np.arange(n) + rng.random(shape)) / n
    # keep away from 0 and 1, where ndtri is infinite
    return special.ndtri(np.clip(u, 1e-300, 1.0 - 2.0**-53))
