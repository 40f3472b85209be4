"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by a
tuple of integers (global seed plus role-specific indices). Results then
depend only on the key, never on call order or on how work is split.
"""

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

# Role tags keep streams for different purposes disjoint under the same seed.
ROLE_INITIAL = 1
ROLE_ORACLE = 2
ROLE_QUADRATURE = 3
ROLE_PERTURBATION = 4
ROLE_PROBE = 5
ROLE_FORWARD = 6


def philox(seed, *keys):
    """Return a Philox-backed generator keyed by ``(seed, *keys)``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def standard_normals(n, d, seed, *keys):
    """Draw an (n, d) block of standard normals from the keyed stream.

    Rows are generated in order, so row ``j`` depends only on the key, ``j`` and ``d``.
    """
    return philox(seed, *keys).standard_normal((n, d))


def sobol_normals(m, d, seed, *keys):
    """Scrambled-Sobol standard normals (randomized quasi-Monte Carlo).

    The point count is rounded up to a power of two so the Sobol net stays balanced.

    Returns:
        Array of shape (2**ceil(log2 m), d).
    """
    power = max(0, int(np.ceil(np.log2(max(int(m), 1)))))
    engine = qmc.Sobol(d, scramble=True, seed=philox(seed, *keys))
    u = engine.random_base2(power)
    u = np.clip(u, 1e-16, 1.0 - 1e-16)
    return ndtri(u)
