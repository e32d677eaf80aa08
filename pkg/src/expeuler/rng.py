"""Counter-based random streams keyed by (seed, domain, path, noise index).

Every draw in the package goes through :func:`stream`, so any single
(path, noise index) block can be regenerated in isolation and paths can be
produced in any order or in parallel without changing the result.
"""
import numpy as np

# domain tags keep the exact sampler and the fBm-increment sampler on
# disjoint streams for the same (seed, path, index)
EXACT = 1
FBM = 2


def stream(seed, domain, path, index):
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(int(domain), int(path), int(index)))
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(seed, domain, path_ids, m, size):
    """Array of shape (len(path_ids), m, size); row (p, i) has its own stream."""
    path_ids = list(path_ids)
    out = np.empty((len(path_ids), m, size))
    for row, p in enumerate(path_ids):
        for i in range(m):
            out[row, i] = stream(seed, domain, p, i).standard_normal(size)
    return out
