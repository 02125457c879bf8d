"""Binary mask families: random, separable MLS, and shifted MLS.

Separable MLS masks are outer products of two maximal-length +-1
sequences (length 2^n - 1), giving near-flat spectra. Shifted MLS
reproduces the single-mask-plus-cyclic-shift acquisition scheme used by
depth-sweep cameras.
"""

import numpy as np
from scipy.signal import max_len_seq

from .psf import MaskPattern, MaskSet

_MLS_NBITS = range(4, 11)


def mls_sequence(nbits, seed=0):
    """Maximal-length +-1 sequence of length 2^nbits - 1."""
    if nbits not in _MLS_NBITS:
        raise ValueError(f"nbits must be in {list(_MLS_NBITS)}")
    rng = np.random.default_rng(seed)
    state = rng.integers(0, 2, size=nbits)
    if not state.any():
        state[0] = 1
    bits, _ = max_len_seq(nbits, state=state)
    return 1.0 - 2.0 * bits


def _nbits_for(length):
    n = int(np.log2(length + 1))
    if 2 ** n - 1 != length or n not in _MLS_NBITS:
        raise ValueError(
            f"MLS mask side must be 2^n - 1 for n in {list(_MLS_NBITS)}, got {length}")
    return n


def random_masks(count, dims, seed=0):
    """K i.i.d. random +-1 masks."""
    rng = np.random.default_rng(seed)
    vals = rng.choice([-1.0, 1.0], size=(count,) + tuple(dims))
    return MaskSet(tuple(MaskPattern(v, is_binary=True) for v in vals))


def mls_masks(count, dims, seed=0):
    """K separable (rank-1) MLS masks from independent sequences."""
    rows, cols = dims
    n_r, n_c = _nbits_for(rows), _nbits_for(cols)
    pats = []
    for k in range(count):
        sr = mls_sequence(n_r, seed=2 * (seed + 1000 * k))
        sc = mls_sequence(n_c, seed=2 * (seed + 1000 * k) + 1)
        pats.append(MaskPattern(np.outer(sr, sc), is_binary=True))
    return MaskSet(tuple(pats))


def shifted_mls_masks(count, dims, seed=0, max_shift=48, offsets=None):
    """One separable MLS mask cyclically shifted by K offsets.

    Offsets default to an even integer spread over [0, max_shift],
    applied to both axes.
    """
    if offsets is None:
        if count > max_shift + 1:
            raise ValueError(
                f"only {max_shift + 1} distinct shifts in [0, {max_shift}]")
        offsets = np.unique(np.round(np.linspace(0, max_shift, count)).astype(int))
        if offsets.size < count:
            raise ValueError("requested more masks than distinct shifts")
    offsets = [int(o) for o in offsets]
    if len(offsets) != count:
        raise ValueError("need exactly one shift offset per mask")
    base = mls_masks(1, dims, seed=seed).patterns[0].values
    pats = tuple(
        MaskPattern(np.roll(base, (o, o), axis=(0, 1)), is_binary=True)
        for o in offsets)
    return MaskSet(pats)


def make_masks(kind, count, dims, seed=0, **kwargs):
    """Dispatch on mask family name."""
    makers = {"random": random_masks, "mls": mls_masks,
              "shifted_mls": shifted_mls_masks}
    if kind not in makers:
        raise ValueError(f"unknown mask kind {kind!r}; choose from {sorted(makers)}")
    return makers[kind](count, dims, seed=seed, **kwargs)
