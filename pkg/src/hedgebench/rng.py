"""Counter-based deterministic random number generation.

Every random quantity in this package is a pure function of
``(seed, stream, draw index)``, so simulation output never depends on
evaluation order, chunking, or worker count, and golden files can be
regenerated from the recipe below by any implementation.

The generator is SplitMix64 used in counter mode:

    GOLDEN = 0x9E3779B97F4A7C15                          (all math mod 2**64)

    mix64(x):
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9
        x = (x ^ (x >> 27)) * 0x94D049BB133111EB
        return x ^ (x >> 31)

    stream_root(seed, i) = mix64(mix64(seed + GOLDEN) + (i + 1) * GOLDEN)
    raw(root, k)         = mix64(root + (k + 1) * GOLDEN)

Draw ``k`` from a stream is converted to a uniform on (0, 1] by taking the
top 53 bits: ``u = ((raw >> 11) + 1) * 2**-53``.  Standard normals come in
pairs via the basic Box-Muller transform; pair ``t`` consumes uniforms
``2t`` and ``2t + 1``:

    r  = sqrt(-2 ln u1)
    z1 = r cos(2 pi u2)
    z2 = r sin(2 pi u2)

Unrelated consumers of the same user-facing seed (weight init vs. batch
shuffling) are separated with ``derive_seed`` salts before streams are
split, so adding draws to one consumer never shifts another.
"""

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF

_U64_GOLDEN = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_NEG53 = 2.0 ** -53


def mix64(x):
    """SplitMix64 finalizer on uint64 arrays (vectorized, wraps mod 2**64)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _S30)) * _M1
        x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def mix64_int(x):
    """Reference scalar mix64 on Python ints (used to cross-check the array path)."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed, salt):
    """Domain-separated child seed, as a Python int."""
    return int(mix64_int((int(seed) ^ int(salt)) & _MASK))


# Salts for independent consumers of one user-facing seed.
INIT_SALT = 0x696E6974  # b"init"
SHUFFLE_SALT = 0x73687566  # b"shuf"


def stream_root(seed, stream):
    """Root state for stream ``stream`` of master ``seed``.

    ``stream`` may be an int or an integer array; the result has matching
    shape and dtype uint64.
    """
    base = mix64_int((int(seed) + GOLDEN) & _MASK)
    stream = np.asarray(stream, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = np.uint64(base) + (stream + _ONE) * _U64_GOLDEN
    return mix64(state)


def uniform_at(root, index):
    """Uniform draw(s) on (0, 1] at counter ``index`` (broadcasts)."""
    root = np.asarray(root, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = root + (index + _ONE) * _U64_GOLDEN
    raw = mix64(state)
    return ((raw >> _S11).astype(np.float64) + 1.0) * _TWO_NEG53


def normal_pair_at(root, pair_index):
    """Box-Muller pair ``pair_index`` of each stream in ``root``."""
    pair_index = np.asarray(pair_index, dtype=np.uint64)
    two = np.uint64(2)
    with np.errstate(over="ignore"):
        even = pair_index * two
        odd = even + _ONE
    u1 = uniform_at(root, even)
    u2 = uniform_at(root, odd)
    r = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * np.pi) * u2
    return r * np.cos(angle), r * np.sin(angle)


def uniforms(root, n):
    """First ``n`` uniform draws of a single stream, as a 1-d array."""
    return uniform_at(root, np.arange(n, dtype=np.uint64))


def normals(root, n):
    """First ``n`` standard normal draws of a single stream.

    Draws ceil(n / 2) Box-Muller pairs and truncates, so the k-th normal
    never depends on n.
    """
    n_pairs = (n + 1) // 2
    z1, z2 = normal_pair_at(root, np.arange(n_pairs, dtype=np.uint64))
    out = np.empty(2 * n_pairs)
    out[0::2] = z1
    out[1::2] = z2
    return out[:n]


def permutation(root, n):
    """Deterministic permutation of range(n) via backward Fisher-Yates.

    Step k (k = n-1 .. 1) consumes uniform draw ``n - 1 - k`` and swaps
    position k with ``j = min(floor(u * (k + 1)), k)``.
    """
    perm = np.arange(n)
    if n < 2:
        return perm
    u = uniforms(root, n - 1)
    for k in range(n - 1, 0, -1):
        j = int(u[n - 1 - k] * (k + 1))
        if j > k:
            j = k
        perm[k], perm[j] = perm[j], perm[k]
    return perm
