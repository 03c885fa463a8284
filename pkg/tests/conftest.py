import itertools
import math

import numpy as np
import pytest


def brute_mp(lam, p):
    """Normalized operator by explicit subset products (independent oracle)."""
    lam = [float(x) for x in lam]
    n = len(lam)
    sums = [sum(lam[i] for i in S) for S in itertools.combinations(range(n), p)]
    assert min(sums) > 0
    return math.exp(sum(math.log(s) for s in sums) / math.comb(n, p))


def fd_grad(fn, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
