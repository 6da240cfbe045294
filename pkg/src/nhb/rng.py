"""Counter-based Gaussian streams (Philox4x32-10).

Every Gaussian is a pure function of ``(seed, chain, step, node, coordinate)``, so
chains can be advanced in any order, or in parallel, with identical results.
Counter layout: ``[coordinate pair, step, node, chain]``; key: the two 32-bit
halves of the 64-bit seed.  ``node`` is 0 for the main increment of a step and
``k >= 1`` for the auxiliary draw that splits bridge node ``k`` into its
children ``2k`` and ``2k+1`` (heap numbering with the full step as node 1).
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["philox4x32", "uniforms", "gaussians", "bridge_gaussians"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 block function.

    Parameters
    ----------
    counter : array_like of uint32, shape (..., 4)
    key : array_like of uint32, shape (..., 2)

    Returns
    -------
    ndarray of uint32, shape (..., 4)
    """
    c = np.asarray(counter, dtype=np.uint32)
    k = np.asarray(key, dtype=np.uint32)
    c0, c1, c2, c3 = (c[..., i] for i in range(4))
    k0, k1 = k[..., 0], k[..., 1]
    with np.errstate(over="ignore"):
        for r in range(rounds):
            p0 = _M0 * c0.astype(np.uint64)
            p1 = _M1 * c2.astype(np.uint64)
            hi0 = (p0 >> _S32).astype(np.uint32)
            lo0 = (p0 & _LO).astype(np.uint32)
            hi1 = (p1 >> _S32).astype(np.uint32)
            lo1 = (p1 & _LO).astype(np.uint32)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            if r < rounds - 1:
                k0 = k0 + _W0
                k1 = k1 + _W1
    return np.stack([c0, c1, c2, c3], axis=-1)


def _key(seed: int) -> np.ndarray:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


def _counters(chains, step, node, n_pairs: int) -> np.ndarray:
    chains = np.asarray(chains, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64) & _LO
    shape = np.broadcast_shapes(chains.shape, step.shape)
    node = np.broadcast_to(np.asarray(node, dtype=np.uint64), shape)
    ctr = np.empty(shape + (n_pairs, 4), dtype=np.uint32)
    ctr[..., 0] = np.arange(n_pairs, dtype=np.uint32)
    ctr[..., 1] = np.broadcast_to(step, shape)[..., None].astype(np.uint32)
    ctr[..., 2] = node[..., None].astype(np.uint32)
    ctr[..., 3] = np.broadcast_to(chains, shape)[..., None].astype(np.uint32)
    return ctr


def uniforms(seed: int, chains, step, n: int, node=0) -> np.ndarray:
    """Uniforms on the open interval (0, 1), shape ``broadcast(chains, step).shape + (n,)``.

    Two 53-bit uniforms are produced per counter.  ``step`` may be an array,
    e.g. ``steps[:, None]`` against ``chains`` draws a block of steps at once.
    """
    n_pairs = (n + 1) // 2
    words = philox4x32(_counters(chains, step, node, n_pairs), _key(seed)).astype(np.uint64)
    u64 = np.stack([(words[..., 0] << _S32) | words[..., 1],
                    (words[..., 2] << _S32) | words[..., 3]], axis=-1)
    u = ((u64 >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    u = u.reshape(u.shape[:-2] + (2 * n_pairs,))
    return u[..., :n]


def gaussians(seed: int, chains, step, n: int, node=0) -> np.ndarray:
    """Standard normals for the main increment (``node=0``) or a bridge node."""
    return special.ndtri(uniforms(seed, chains, step, n, node))


def bridge_gaussians(seed: int, chains, step: int, n: int, node, z_parent) -> tuple:
    """Split the normalized increment of bridge node ``node`` into its two halves.

    With ``Y`` an independent normal drawn for ``node``, the children receive
    ``(Z + Y)/sqrt(2)`` and ``(Z - Y)/sqrt(2)``; both are standard normal and,
    scaled by ``sqrt(h/2)``, they sum to the parent increment ``sqrt(h) Z``.
    """
    y = gaussians(seed, chains, step, n, node)
    s = np.sqrt(0.5)
    return s * (z_parent + y), s * (z_parent - y)
