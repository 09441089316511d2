"""Counter-based random streams.

Every stream is a Philox generator keyed by (seed, chunk, stream), so the
numbers a chunk of work sees never depend on how chunks are scheduled over
threads.
"""
import numpy as np

STREAM_BITS = 20
MASK64 = (1 << 64) - 1


def stream(seed, chunk=0, stream_id=0):
    if not 0 <= stream_id < (1 << STREAM_BITS):
        raise ValueError("stream id out of range")
    key = np.array([int(seed) & MASK64, ((int(chunk) << STREAM_BITS) | stream_id) & MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def chunk_bounds(n, chunk_size):
    """[(start, stop), ...] covering range(n) in fixed-size chunks."""
    return [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]
