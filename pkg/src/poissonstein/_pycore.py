"""Pure numpy fallback for the sampling kernels in ``_ccore``.

Uses the same hash, the same uniform construction and the same inversion
recurrence, so counts agree with the compiled backend bit for bit.
"""
import numpy as np

_U64 = np.uint64
GOLDEN = _U64(0x9E3779B97F4A7C15)
CELL_STEP = _U64(0xD1B54A32D192ED03)
SEED_SALT = _U64(0x5851F42D4C957F2D)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z):
    # uint64 arithmetic wraps modulo 2^64 on purpose
    with np.errstate(over="ignore"):
        z = np.asarray(z, dtype=np.uint64)
        z = (z ^ (z >> _U64(30))) * _M1
        z = (z ^ (z >> _U64(27))) * _M2
        return z ^ (z >> _U64(31))


def seed_key(seed):
    return int(mix64(_U64(seed) ^ SEED_SALT))


@np.errstate(over="ignore")
def _cell_keys(skey, reps, cells):
    rep_key = mix64(_U64(skey) + (reps.astype(np.uint64) + _U64(1)) * GOLDEN)
    return mix64(rep_key[:, None] + (cells.astype(np.uint64)[None, :] + _U64(1)) * CELL_STEP)


@np.errstate(over="ignore")
def _draw(keys, j):
    bits = mix64(keys + _U64(j + 1) * GOLDEN) >> _U64(11)
    return bits.astype(np.float64) * _INV_2_53


def uniforms(seed, rep, cell, n):
    keys = _cell_keys(seed_key(seed), np.array([rep]), np.array([cell]))
    return [float(_draw(keys, j)[0, 0]) for j in range(n)]


def poisson_block(rate, expneg, nchunk, seed, rep_start, out):
    nrep, ncell = out.shape
    keys = _cell_keys(seed_key(seed), np.arange(rep_start, rep_start + nrep), np.arange(ncell))
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), (nrep, ncell))
    expneg = np.broadcast_to(np.asarray(expneg, dtype=np.float64), (nrep, ncell))
    nchunk = np.asarray(nchunk)
    total = np.zeros((nrep, ncell), dtype=np.int64)
    for j in range(int(nchunk.max(initial=0))):
        cols = np.flatnonzero(nchunk > j)
        u = _draw(keys[:, cols], j)
        lam = rate[:, cols]
        p = expneg[:, cols].copy()
        cdf = p.copy()
        k = np.zeros_like(p)
        active = (u > cdf) & (p > 0.0)
        while active.any():
            k[active] = k[active] + 1.0
            p[active] = p[active] * lam[active] / k[active]
            cdf[active] = cdf[active] + p[active]
            active &= (u > cdf) & (p > 0.0)
        total[:, cols] += k.astype(np.int64)
    out[...] = total
