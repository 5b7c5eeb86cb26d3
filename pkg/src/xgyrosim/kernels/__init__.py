"""Per-rank numerics for the three phases.

The generators are counter-based: every value is a pure function of a seed
and its global indices, so any layout extracting a slab sees identical bits.
The heavy loops live in ``_numba`` (compiled when numba is available and
``XGYROSIM_NUMBA`` is not ``0``) and ``_numpy``; see :func:`use_backend`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from types import ModuleType
from typing import Iterator

import numpy as np

from ..grid import Dims, Phase, PhaseLayout, Slab
from . import _numba, _numpy
from ._jit import NUMBA_ENABLED

__all__ = [
    "CmatShard",
    "DistState",
    "FieldBuffer",
    "KernelError",
    "backend_name",
    "build_cmat_shard",
    "collision_apply",
    "field_weights",
    "gen_cmat_block",
    "gen_initial_state",
    "initial_slab",
    "ordered_sum",
    "partial_moment",
    "stream_step",
    "upwind_weights",
    "use_backend",
]

BACKENDS: dict[str, ModuleType] = {"numba": _numba, "numpy": _numpy}
_impl: ModuleType = _numba if NUMBA_ENABLED else _numpy


class KernelError(ValueError):
    """A kernel was called on data in the wrong phase or shape."""


def backend_name() -> str:
    return "numba" if _impl is _numba else "numpy"


@contextlib.contextmanager
def use_backend(name: str) -> Iterator[None]:
    """Temporarily route kernel calls through ``name`` ("numba" or "numpy")."""
    global _impl
    previous = _impl
    _impl = BACKENDS[name]
    try:
        yield
    finally:
        _impl = previous


@dataclass
class DistState:
    """One rank's share of a simulation's 3D state under ``layout``."""

    sim_id: int
    dims: Dims
    layout: PhaseLayout
    rank: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != self.slab.shape:
            raise KernelError(
                f"values shape {self.values.shape} != slab shape {self.slab.shape}"
            )

    @property
    def phase(self) -> Phase:
        return self.layout.phase

    @property
    def slab(self) -> Slab:
        slot = self.layout.slot_of(self.rank)
        if slot is None:
            raise KernelError(f"rank {self.rank} holds no slab in this layout")
        return self.layout.slab(slot)


@dataclass
class FieldBuffer:
    """Per-(ic, it) moment over a rank's str slab (full nc, local nt).

    ``closed`` is False for a rank-local partial sum and True once it has been
    combined across the nv communicator.
    """

    values: np.ndarray
    closed: bool = False


@dataclass
class CmatShard:
    dims: Dims
    slab: Slab
    blocks: np.ndarray  # (nc_loc, nt_loc, nv, nv)

    @property
    def element_count(self) -> int:
        return self.blocks.size


def _require_phase(state: DistState, phase: Phase) -> None:
    if state.phase is not phase:
        raise KernelError(f"expected {phase.value} layout, got {state.phase.value}")


def _seed(seed: int) -> np.uint64:
    # numba would type a plain int as int64 and reject seeds >= 2**63
    if not 0 <= int(seed) < 2**64:
        raise KernelError(f"seed must be in [0, 2**64), got {seed}")
    return np.uint64(seed)


def gen_cmat_block(eps: float, seed: int, dims: Dims, ic: int, it: int) -> np.ndarray:
    """Collision block ``I + (eps / nv) * A`` with A uniform in [-1, 1)."""
    if not 0.0 <= eps < 1.0:
        raise KernelError(f"eps must be in [0, 1), got {eps}")
    if not (0 <= ic < dims.nc and 0 <= it < dims.nt):
        raise KernelError(f"block index ({ic}, {it}) out of range for {dims}")
    return _impl.cmat_blocks(float(eps), _seed(seed), dims.nv, ic, 1, it, 1)[0, 0]


def build_cmat_shard(eps: float, seed: int, coll_layout: PhaseLayout, rank: int) -> CmatShard:
    """Generate the blocks for every local (ic, it) of ``rank``'s coll slab."""
    if coll_layout.phase is not Phase.COLL:
        raise KernelError("cmat shards follow the coll layout")
    if not 0.0 <= eps < 1.0:
        raise KernelError(f"eps must be in [0, 1), got {eps}")
    slot = coll_layout.slot_of(rank)
    if slot is None:
        raise KernelError(f"rank {rank} is not part of the coll layout")
    slab = coll_layout.slab(slot)
    dims = coll_layout.dims
    (ic0, _, it0), (nc_l, _, nt_l) = slab.offset, slab.length
    blocks = _impl.cmat_blocks(float(eps), _seed(seed), dims.nv, ic0, nc_l, it0, nt_l)
    return CmatShard(dims, slab, blocks)


def gen_initial_state(init_seed: int, dims: Dims, ic: int, iv: int, it: int) -> float:
    if not (0 <= ic < dims.nc and 0 <= iv < dims.nv and 0 <= it < dims.nt):
        raise KernelError(f"index ({ic}, {iv}, {it}) out of range for {dims}")
    return float(_impl.initial_state(_seed(init_seed), ic, 1, iv, 1, it, 1)[0, 0, 0])


def initial_slab(init_seed: int, slab: Slab) -> np.ndarray:
    (ic0, iv0, it0), (nc_l, nv_l, nt_l) = slab.offset, slab.length
    return _impl.initial_state(_seed(init_seed), ic0, nc_l, iv0, nv_l, it0, nt_l)


def field_weights(nv: int) -> np.ndarray:
    """Ramp weights ``(iv + 1) / sum_j (j + 1)`` for the field moment."""
    total = nv * (nv + 1) // 2
    return np.arange(1, nv + 1, dtype=np.float64) / total


def upwind_weights(nv: int) -> np.ndarray:
    return np.full(nv, 1.0 / nv)


def partial_moment(state: DistState, weights: np.ndarray) -> FieldBuffer:
    """Weighted sum over the rank's local nv range, ascending in iv.

    ``weights`` is indexed by global iv. Each term is rounded to a fixed
    2**-30 grid before accumulation so that any split of the nv range,
    recombined in order, reproduces the single-rank sum exactly.
    """
    _require_phase(state, Phase.STR)
    iv0, nv_l = state.slab.offset[1], state.slab.length[1]
    w = np.ascontiguousarray(weights[iv0:iv0 + nv_l], dtype=np.float64)
    return FieldBuffer(_impl.partial_moment(state.values, w), closed=False)


def stream_step(
    state: DistState,
    field: FieldBuffer,
    upwind: FieldBuffer,
    drive: float,
    dt: float,
) -> DistState:
    """Explicit step with a periodic centred difference along nc.

    ``h' = h + dt * (drive * (h[ic+1] - h[ic-1]) / 2 + field - 0.1 * |upwind| * h)``
    The damping uses the magnitude of the upwind moment; with the signed
    moment a negative mean runs away quadratically within a few dozen steps.
    """
    _require_phase(state, Phase.STR)
    if not (field.closed and upwind.closed):
        raise KernelError("stream_step needs closed (fully reduced) field buffers")
    values = _impl.stream_step(state.values, field.values, upwind.values,
                               float(drive), float(dt))
    return DistState(state.sim_id, state.dims, state.layout, state.rank, values)


def collision_apply(shard: CmatShard, state: DistState) -> DistState:
    """Per local (ic, it): ``h[:, ic, it] <- B(ic, it) @ h[:, ic, it]``."""
    _require_phase(state, Phase.COLL)
    s = state.slab
    if (s.offset[0], s.offset[2], s.length[0], s.length[2]) != (
        shard.slab.offset[0], shard.slab.offset[2],
        shard.slab.length[0], shard.slab.length[2],
    ):
        raise KernelError(f"state slab {s} does not match cmat shard slab {shard.slab}")
    values = _impl.collision_apply(shard.blocks, state.values)
    return DistState(state.sim_id, state.dims, state.layout, state.rank, values)


def ordered_sum(values: np.ndarray) -> float:
    """Left-to-right sum in C order."""
    return float(_impl.ordered_sum(np.ascontiguousarray(values, dtype=np.float64)))
