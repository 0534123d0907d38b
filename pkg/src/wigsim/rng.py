"""Deterministic random-number substreams.

A 64-bit master seed plus an integer stream id define an independent
Philox-backed generator.  The derivation is pure (same inputs, same
stream) and does not depend on how many workers consume the streams, so
a simulation seeded once is reproducible bit-for-bit at any thread
count.
"""

import numpy as np


def derive_substream(master_seed, stream_id):
    """Return an independent ``numpy.random.Generator`` for (seed, id)."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(seq))


class RngContract:
    """Substream factory bound to one master seed.

    Stream ids are allocated by convention, not by calling order:
    the simulation uses one stream per time step, table builders and
    initialisation use fixed negative offsets via ``tagged``.
    """

    # reserved tag bases, spaced far apart so step indices never collide
    INIT_STREAM = 2**40
    FIT_STREAM = 2**40 + 1

    def __init__(self, master_seed):
        self.master_seed = int(master_seed)

    def stream(self, stream_id):
        return derive_substream(self.master_seed, stream_id)

    def step_stream(self, step_index):
        return self.stream(int(step_index))

    def tagged(self, tag):
        return self.stream(int(tag))
