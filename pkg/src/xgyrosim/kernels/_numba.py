"""Loop kernels compiled with numba (or run as plain Python without it)."""

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
from ._jit import njit

_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@njit
def _mix(z):
    z = z + GOLDEN
    z = (z ^ (z >> _S30)) * MIX1
    z = (z ^ (z >> _S27)) * MIX2
    return z ^ (z >> _S31)


@njit
def _unit(h):
    return 2.0 * (np.float64(h >> _S11) * TO_UNIT) - 1.0


@njit
def cmat_blocks(eps, seed, nv, ic0, nc_loc, it0, nt_loc):
    out = np.empty((nc_loc, nt_loc, nv, nv))
    scale = eps / nv
    base = _mix(np.uint64(seed) ^ STREAM_CMAT)
    for i in range(nc_loc):
        h_c = _mix(base ^ np.uint64(ic0 + i))
        for j in range(nt_loc):
            h_t = _mix(h_c ^ np.uint64(it0 + j))
            for r in range(nv):
                h_r = _mix(h_t ^ np.uint64(r))
                for c in range(nv):
                    u = _unit(_mix(h_r ^ np.uint64(c)))
                    ident = 1.0 if r == c else 0.0
                    out[i, j, r, c] = ident + scale * u
    return out


@njit
def initial_state(seed, ic0, nc_l, iv0, nv_l, it0, nt_l):
    out = np.empty((nc_l, nv_l, nt_l))
    base = _mix(np.uint64(seed) ^ STREAM_INIT)
    for i in range(nc_l):
        h_c = _mix(base ^ np.uint64(ic0 + i))
        for v in range(nv_l):
            h_v = _mix(h_c ^ np.uint64(iv0 + v))
            for t in range(nt_l):
                out[i, v, t] = _unit(_mix(h_v ^ np.uint64(it0 + t)))
    return out


@njit
def partial_moment(h, w):
    nc, nv, nt = h.shape
    out = np.empty((nc, nt))
    for i in range(nc):
        for t in range(nt):
            acc = 0.0
            for v in range(nv):
                acc += np.rint(w[v] * h[i, v, t] * MOMENT_SCALE) * MOMENT_QUANTUM
            out[i, t] = acc
    return out


@njit
def stream_step(h, field, upwind, drive, dt):
    nc, nv, nt = h.shape
    out = np.empty_like(h)
    for i in range(nc):
        ip = i + 1 if i + 1 < nc else 0
        im = i - 1 if i > 0 else nc - 1
        for v in range(nv):
            for t in range(nt):
                hc = h[i, v, t]
                rhs = (drive * (h[ip, v, t] - h[im, v, t]) * 0.5 + field[i, t]
                       - STREAM_DAMPING * abs(upwind[i, t]) * hc)
                out[i, v, t] = hc + dt * rhs
    return out


@njit
def collision_apply(blocks, h):
    nc, nv, nt = h.shape
    out = np.empty_like(h)
    for i in range(nc):
        for t in range(nt):
            for r in range(nv):
                acc = 0.0
                for c in range(nv):
                    acc += blocks[i, t, r, c] * h[i, c, t]
                out[i, r, t] = acc
    return out


@njit
def ordered_sum(x):
    flat = x.ravel()
    if flat.size == 0:
        return 0.0
    acc = flat[0]
    for j in range(1, flat.size):
        acc += flat[j]
    return acc
