# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels.

Mirrors ``_pycore`` operation for operation so both backends return
identical counts: the only floating point work is multiply, divide, add and
compare on precomputed per-cell constants.
"""
from libc.stdint cimport uint64_t, int64_t, int32_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t CELL_STEP = 0xD1B54A32D192ED03ULL
cdef uint64_t SEED_SALT = 0x5851F42D4C957F2DULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t cell_key(uint64_t seed_key, uint64_t rep, uint64_t cell) noexcept nogil:
    cdef uint64_t rep_key = mix64(seed_key + (rep + 1) * GOLDEN)
    return mix64(rep_key + (cell + 1) * CELL_STEP)


cdef inline double draw(uint64_t key, uint64_t j) noexcept nogil:
    return <double>(mix64(key + (j + 1) * GOLDEN) >> 11) * INV_2_53


def seed_key(uint64_t seed):
    return mix64(seed ^ SEED_SALT)


def uniforms(uint64_t seed, uint64_t rep, uint64_t cell, Py_ssize_t n):
    """First ``n`` uniforms of the substream keyed by (seed, rep, cell)."""
    cdef uint64_t key = cell_key(mix64(seed ^ SEED_SALT), rep, cell)
    cdef Py_ssize_t j
    out = [0.0] * n
    for j in range(n):
        out[j] = draw(key, j)
    return out


def poisson_block(const double[:] rate, const double[:] expneg,
                  const int64_t[:] nchunk, uint64_t seed, int64_t rep_start,
                  int32_t[:, :] out):
    """Fill ``out[r, c]`` with Poisson counts for replications rep_start + r.

    Each cell's intensity is split into ``nchunk[c]`` equal pieces of size
    ``rate[c]`` (at most 10) and every piece is drawn by inversion.
    """
    cdef Py_ssize_t nrep = out.shape[0]
    cdef Py_ssize_t ncell = out.shape[1]
    cdef Py_ssize_t r, c
    cdef int64_t j, total
    cdef uint64_t skey = mix64(seed ^ SEED_SALT)
    cdef uint64_t key
    cdef double u, p, cdf, k, lam
    with nogil:
        for r in range(nrep):
            for c in range(ncell):
                key = cell_key(skey, <uint64_t>(rep_start + r), <uint64_t>c)
                lam = rate[c]
                total = 0
                for j in range(nchunk[c]):
                    u = draw(key, <uint64_t>j)
                    k = 0.0
                    p = expneg[c]
                    cdf = p
                    while u > cdf and p > 0.0:
                        k = k + 1.0
                        p = p * lam / k
                        cdf = cdf + p
                    total += <int64_t>k
                out[r, c] = <int32_t>total
