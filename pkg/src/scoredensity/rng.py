"""Counter-based random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by Philox. Independent streams are addressed by ``(seed, tag, index)``
so results never depend on the order in which parallel tasks run.
"""

import zlib

import numpy as np

__all__ = ["stream", "child_streams", "as_generator", "draw_key"]

_KEY_BITS = 2**63


def _tag_id(tag):
    if tag is None:
        return 0
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def stream(seed, tag=None, *index):
    """Return the generator addressed by ``(seed, tag, *index)``.

    Parameters
    ----------
    seed : int
        Non-negative master seed (64-bit).
    tag : str or int, optional
        Experiment or component label; strings are hashed with CRC32.
    *index : int
        Task indices (trial number, point number, chunk number...).
    """
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a non-negative integer")
    key = (_tag_id(tag),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def draw_key(rng):
    """Consume one integer from ``rng`` to seed a family of sub-streams."""
    return int(rng.integers(0, _KEY_BITS))


def child_streams(rng, n):
    """Split ``n`` independent generators off ``rng`` deterministically.

    Only one draw is taken from ``rng``; child ``i`` is ``stream(key, None, i)``.
    """
    key = draw_key(rng)
    return [stream(key, None, i) for i in range(n)]


def as_generator(random_state=None):
    """Coerce ``None``/int/Generator into a Philox-backed generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None:
        return np.random.Generator(np.random.Philox())
    return stream(int(random_state))
