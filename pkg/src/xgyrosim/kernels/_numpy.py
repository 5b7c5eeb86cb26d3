"""Vectorized numpy kernels.

Each function keeps the reduction axis as an explicit Python loop so that
accumulation order matches the scalar loops in ``_numba`` exactly; numpy's
own ``sum``/``dot`` use pairwise or BLAS orderings and are avoided.
"""

import numpy as np

from ._constants import (
    GOLDEN,
    MIX1,
    MIX2,
    MOMENT_QUANTUM,
    MOMENT_SCALE,
    STREAM_CMAT,
    STREAM_DAMPING,
    STREAM_INIT,
    TO_UNIT,
)


def _mix(z):
    z = z + GOLDEN
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def _unit(h):
    return 2.0 * ((h >> np.uint64(11)).astype(np.float64) * TO_UNIT) - 1.0


def _axis(start, n, ndim, pos):
    shape = [1] * ndim
    shape[pos] = n
    return np.arange(start, start + n, dtype=np.uint64).reshape(shape)


def cmat_blocks(eps, seed, nv, ic0, nc_loc, it0, nt_loc):
    base = _mix(np.full((1, 1, 1, 1), seed, dtype=np.uint64) ^ STREAM_CMAT)
    h = _mix(base ^ _axis(ic0, nc_loc, 4, 0))
    h = _mix(h ^ _axis(it0, nt_loc, 4, 1))
    h = _mix(h ^ _axis(0, nv, 4, 2))
    h = _mix(h ^ _axis(0, nv, 4, 3))
    u = _unit(h)
    eye = np.eye(nv)
    return eye + (eps / nv) * u


def initial_state(seed, ic0, nc_l, iv0, nv_l, it0, nt_l):
    base = _mix(np.full((1, 1, 1), seed, dtype=np.uint64) ^ STREAM_INIT)
    h = _mix(base ^ _axis(ic0, nc_l, 3, 0))
    h = _mix(h ^ _axis(iv0, nv_l, 3, 1))
    h = _mix(h ^ _axis(it0, nt_l, 3, 2))
    return np.ascontiguousarray(_unit(h), dtype=np.float64)


def partial_moment(h, w):
    nc, nv, nt = h.shape
    acc = np.zeros((nc, nt))
    for v in range(nv):
        acc = acc + np.rint(w[v] * h[:, v, :] * MOMENT_SCALE) * MOMENT_QUANTUM
    return acc


def stream_step(h, field, upwind, drive, dt):
    hp = np.roll(h, -1, axis=0)
    hm = np.roll(h, 1, axis=0)
    f = field[:, None, :]
    u = np.abs(upwind)[:, None, :]
    rhs = drive * (hp - hm) * 0.5 + f - STREAM_DAMPING * u * h
    return h + dt * rhs


def collision_apply(blocks, h):
    nc, nv, nt = h.shape
    acc = np.zeros((nc, nv, nt))
    for c in range(nv):
        col = blocks[:, :, :, c].transpose(0, 2, 1)
        acc = acc + col * h[:, c, :][:, None, :]
    return acc


def ordered_sum(x):
    flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        return 0.0
    # accumulate is strictly sequential, unlike np.sum's pairwise scheme
    return float(np.add.accumulate(flat)[-1])
