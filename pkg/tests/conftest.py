import itertools

import numpy as np
import pytest

from poissonstein.algebra import symmetrize
from poissonstein.space import DiscreteSpace, Kernel


def random_space(rng, m):
    return DiscreteSpace(rng.uniform(0.2, 2.0, size=m))


def random_symmetric(rng, space, order):
    raw = Kernel(space, rng.normal(size=(space.cell_count,) * order))
    return symmetrize(raw)


def brute_symmetrize(values):
    p = values.ndim
    out = np.zeros_like(values)
    perms = list(itertools.permutations(range(p)))
    for idx in np.ndindex(values.shape):
        out[idx] = np.mean([values[tuple(idx[i] for i in perm)] for perm in perms])
    return out


def brute_contract(f, g, r, l):
    """Loop-level oracle for f star_r^l g with the package's argument order."""
    m, w = f.m, f.space.weights
    p, q = f.order, g.order
    shape = (m,) * (p + q - r - l)
    out = np.zeros(shape)
    for gamma in itertools.product(range(m), repeat=r - l):
        for t in itertools.product(range(m), repeat=p - r):
            for s in itertools.product(range(m), repeat=q - r):
                acc = 0.0
                for z in itertools.product(range(m), repeat=l):
                    wz = np.prod([w[i] for i in z]) if z else 1.0
                    acc += wz * f.values[z + gamma + t] * g.values[z + gamma + s]
                out[gamma + t + s] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
