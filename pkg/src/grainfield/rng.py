"""Random number generation.

Every stochastic routine in the package takes a ``numpy.random.Generator``
argument; nothing draws from module-level state.  The generator is built on
the Philox counter-based bit generator so that a (seed, stream) pair fully
determines the draw sequence regardless of platform.
"""

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a deterministic counter-based generator.

    Parameters
    ----------
    seed : int
        User-facing seed recorded in run manifests.
    stream : int
        Independent substream index (replicate datasets, chain restarts).
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
