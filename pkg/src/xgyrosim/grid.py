"""Layout mathematics for distributed (nc, nv, nt) state tensors.

Every phase keeps one dimension complete on each rank and splits the other
two across a ``n_a x n_t`` rank grid:

* ``STR``  -- nc complete, nv split over ``n_a``, nt split over ``n_t``
* ``COLL`` -- nv complete, nc split over ``n_a``, nt split over ``n_t``
* ``NL``   -- nt complete, nc split over ``n_a``, nv split over ``n_t``

Ranks are numbered toroidal-major: ``slot = it_chunk * n_a + a_chunk``.
A layout also carries a ``ranks`` tuple mapping each slot to a world rank so
that the same slab table can be placed on an arbitrary rank subgroup.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Iterator, Sequence

__all__ = [
    "CMAT_AFFECTING",
    "Dims",
    "EnsembleSpec",
    "LayoutError",
    "Phase",
    "PhaseLayout",
    "ProcGrid",
    "SimParams",
    "Slab",
    "Violation",
    "cmat_shard_extents",
    "ensemble_coll_layout",
    "ensemble_world_rank",
    "layout_for",
    "owner_of",
    "plan_grid",
    "validate_ensemble",
]


class LayoutError(ValueError):
    """A grid or layout precondition (divisibility, range, phase) failed."""


class Phase(str, enum.Enum):
    STR = "str"
    NL = "nl"
    COLL = "coll"


@dataclass(frozen=True)
class Dims:
    nc: int
    nv: int
    nt: int

    def __post_init__(self) -> None:
        for name in ("nc", "nv", "nt"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise LayoutError(f"{name} must be a positive integer, got {value!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nc, self.nv, self.nt)

    @property
    def size(self) -> int:
        return self.nc * self.nv * self.nt


@dataclass(frozen=True)
class ProcGrid:
    n_ranks: int
    n_t: int
    n_a: int

    def __post_init__(self) -> None:
        if min(self.n_ranks, self.n_t, self.n_a) < 1:
            raise LayoutError(f"grid factors must be positive: {self}")
        if self.n_a * self.n_t != self.n_ranks:
            raise LayoutError(
                f"n_ranks={self.n_ranks} != n_a={self.n_a} x n_t={self.n_t}"
            )

    def coords(self, slot: int) -> tuple[int, int]:
        """Return ``(a_chunk, it_chunk)`` for a layout slot."""
        return slot % self.n_a, slot // self.n_a

    def slot(self, a_chunk: int, it_chunk: int) -> int:
        return it_chunk * self.n_a + a_chunk


@dataclass(frozen=True)
class Slab:
    """Half-open box ``[offset, offset + length)`` in each of (nc, nv, nt)."""

    offset: tuple[int, int, int]
    length: tuple[int, int, int]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.length

    @property
    def size(self) -> int:
        return self.length[0] * self.length[1] * self.length[2]

    @property
    def stop(self) -> tuple[int, int, int]:
        return tuple(o + n for o, n in zip(self.offset, self.length))  # type: ignore[return-value]

    def contains(self, index: Sequence[int]) -> bool:
        return all(o <= i < o + n for i, o, n in zip(index, self.offset, self.length))

    def intersect(self, other: "Slab") -> "Slab | None":
        lo = tuple(max(a, b) for a, b in zip(self.offset, other.offset))
        hi = tuple(min(a, b) for a, b in zip(self.stop, other.stop))
        if any(h <= l for l, h in zip(lo, hi)):
            return None
        return Slab(lo, tuple(h - l for l, h in zip(lo, hi)))  # type: ignore[arg-type]

    def local_slices(self, inner: "Slab") -> tuple[slice, slice, slice]:
        """Slices selecting ``inner`` (a sub-box) from an array shaped like self."""
        return tuple(
            slice(io - o, io - o + n)
            for io, o, n in zip(inner.offset, self.offset, inner.length)
        )  # type: ignore[return-value]

    def __str__(self) -> str:
        parts = (
            f"{name}:[{o},{o + n})"
            for name, o, n in zip(("nc", "nv", "nt"), self.offset, self.length)
        )
        return "{" + ", ".join(parts) + "}"


@dataclass(frozen=True)
class PhaseLayout:
    phase: Phase
    dims: Dims
    grid: ProcGrid
    slabs: tuple[Slab, ...]
    ranks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.ranks:
            object.__setattr__(self, "ranks", tuple(range(self.grid.n_ranks)))
        if len(self.ranks) != len(self.slabs) or len(set(self.ranks)) != len(self.ranks):
            raise LayoutError("ranks must be distinct, one per slab")

    def slab(self, slot: int) -> Slab:
        return self.slabs[slot]

    def slot_of(self, world_rank: int) -> int | None:
        """Layout slot held by ``world_rank``, or None if it holds no data."""
        try:
            return self.ranks.index(world_rank)
        except ValueError:
            return None

    def placed(self, ranks: Sequence[int]) -> "PhaseLayout":
        """The same slab table assigned to a different set of world ranks."""
        return PhaseLayout(self.phase, self.dims, self.grid, self.slabs, tuple(ranks))

    def __iter__(self) -> Iterator[tuple[int, Slab]]:
        return iter(enumerate(self.slabs))


def _check_divides(factor: int, extent: int, what: str, dim: str) -> None:
    if extent % factor:
        raise LayoutError(
            f"{what}={factor} does not divide {dim}={extent}"
        )


def plan_grid(dims: Dims, n_ranks: int, n_t: int) -> ProcGrid:
    """Factor ``n_ranks`` into ``n_a x n_t`` and check it against ``dims``."""
    if n_ranks < 1 or n_t < 1:
        raise LayoutError(f"n_ranks and n_t must be positive, got {n_ranks}, {n_t}")
    _check_divides(n_t, n_ranks, "n_t", "n_ranks")
    _check_divides(n_t, dims.nt, "n_t", "nt")
    n_a = n_ranks // n_t
    _check_divides(n_a, dims.nv, "n_a", "nv")
    _check_divides(n_a, dims.nc, "n_a", "nc")
    return ProcGrid(n_ranks=n_ranks, n_t=n_t, n_a=n_a)


# phase -> (dimension split over n_a, dimension split over n_t); the third is complete
_SPLITS = {
    Phase.STR: (1, 2),
    Phase.COLL: (0, 2),
    Phase.NL: (0, 1),
}
_DIM_NAMES = ("nc", "nv", "nt")


def layout_for(phase: Phase | str, dims: Dims, grid: ProcGrid) -> PhaseLayout:
    phase = Phase(phase)
    a_dim, t_dim = _SPLITS[phase]
    extents = dims.shape
    _check_divides(grid.n_a, extents[a_dim], "n_a", _DIM_NAMES[a_dim])
    _check_divides(grid.n_t, extents[t_dim], "n_t", _DIM_NAMES[t_dim])
    a_len = extents[a_dim] // grid.n_a
    t_len = extents[t_dim] // grid.n_t

    slabs = []
    for slot in range(grid.n_ranks):
        a_chunk, it_chunk = grid.coords(slot)
        offset = [0, 0, 0]
        length = list(extents)
        offset[a_dim], length[a_dim] = a_chunk * a_len, a_len
        offset[t_dim], length[t_dim] = it_chunk * t_len, t_len
        slabs.append(Slab(tuple(offset), tuple(length)))  # type: ignore[arg-type]
    return PhaseLayout(phase, dims, grid, tuple(slabs))


def owner_of(
    layout: PhaseLayout, index: Sequence[int]
) -> tuple[int, tuple[int, int, int]]:
    """Return ``(slot, local_index)`` of the slab holding global ``index``."""
    index = tuple(int(i) for i in index)
    if len(index) != 3 or not all(0 <= i < n for i, n in zip(index, layout.dims.shape)):
        raise LayoutError(f"index {index} out of range for {layout.dims}")
    a_dim, t_dim = _SPLITS[layout.phase]
    a_len = layout.slabs[0].length[a_dim]
    t_len = layout.slabs[0].length[t_dim]
    slot = layout.grid.slot(index[a_dim] // a_len, index[t_dim] // t_len)
    offset = layout.slabs[slot].offset
    local = tuple(i - o for i, o in zip(index, offset))
    return slot, local  # type: ignore[return-value]


def cmat_shard_extents(
    dims: Dims, coll_layout: PhaseLayout, rank: int
) -> tuple[int, int, int]:
    """``(nc_loc, nt_loc, element_count)`` of the cmat shard for a coll slot.

    Each rank holds one dense ``nv x nv`` block per local (ic, it), i.e.
    ``nv * nv * nc_loc`` elements for each of its toroidal slices.
    """
    if coll_layout.phase is not Phase.COLL:
        raise LayoutError(f"cmat shards follow the coll layout, got {coll_layout.phase.value}")
    nc_loc, _, nt_loc = coll_layout.slabs[rank].length
    return nc_loc, nt_loc, dims.nv * dims.nv * nc_loc * nt_loc


def ensemble_world_rank(slot: int, total_ranks: int, n_t: int, k: int) -> int:
    """World rank serving an ensemble coll slot.

    Ensemble chunk ``e = sim * n_a + a`` of toroidal slice ``t`` lives on the
    rank that holds nv chunk ``a`` of slice ``t`` inside simulation ``sim``'s
    contiguous subgroup.
    """
    per_sim = total_ranks // k
    n_a = per_sim // n_t
    n_a_ens = total_ranks // n_t
    e, t = slot % n_a_ens, slot // n_a_ens
    sim, a = divmod(e, n_a)
    return sim * per_sim + t * n_a + a


def ensemble_coll_layout(dims: Dims, total_ranks: int, n_t: int, k: int) -> PhaseLayout:
    """COLL layout spanning all ensemble ranks: nc split ``total_ranks / n_t`` ways."""
    if k < 1 or total_ranks % k:
        raise LayoutError(f"k={k} does not divide total_ranks={total_ranks}")
    plan_grid(dims, total_ranks // k, n_t)
    n_a_ens = total_ranks // n_t
    _check_divides(n_a_ens, dims.nc, "n_a_ens", "nc")
    grid = ProcGrid(n_ranks=total_ranks, n_t=n_t, n_a=n_a_ens)
    layout = layout_for(Phase.COLL, dims, grid)
    ranks = [ensemble_world_rank(s, total_ranks, n_t, k) for s in range(total_ranks)]
    return layout.placed(ranks)


# --------------------------------------------------------------------------
# simulation parameters and ensembles


@dataclass(frozen=True)
class SimParams:
    dims: Dims
    collision_eps: float = 0.05
    collision_seed: int = 0
    drive: float = 1.0
    init_seed: int = 1
    dt: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.collision_eps < 1.0:
            raise LayoutError(f"collision_eps must be in [0, 1), got {self.collision_eps}")
        if not self.dt > 0.0:
            raise LayoutError(f"dt must be positive, got {self.dt}")
        for name in ("collision_seed", "init_seed"):
            if not 0 <= getattr(self, name) < 2**64:
                raise LayoutError(f"{name} must fit in 64 unsigned bits")


#: Parameters that feed the collision tensor. Everything else in SimParams is
#: free to vary between ensemble members.
CMAT_AFFECTING = ("collision_eps", "collision_seed", "dims")


@dataclass(frozen=True)
class Violation:
    field: str
    members: tuple[int, ...]


@dataclass(frozen=True)
class EnsembleSpec:
    members: tuple[SimParams, ...]
    total_ranks: int
    k: int = field(default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        if self.k == 0:
            object.__setattr__(self, "k", len(self.members))
        if self.k < 1 or self.k != len(self.members):
            raise LayoutError(f"k={self.k} but {len(self.members)} members given")
        if self.total_ranks < 1 or self.total_ranks % self.k:
            raise LayoutError(f"k must divide total_ranks ({self.k} vs {self.total_ranks})")

    @property
    def dims(self) -> Dims:
        return self.members[0].dims


def validate_ensemble(spec: EnsembleSpec) -> list[Violation]:
    """Return cmat-affecting mismatches between members (empty list means ok).

    Each violation names the field and every member whose value differs from
    member 0, plus member 0 itself.
    """
    violations = []
    names = [f.name for f in fields(SimParams)]
    for name in names:
        if name not in CMAT_AFFECTING:
            continue
        ref = getattr(spec.members[0], name)
        bad = [i for i, m in enumerate(spec.members) if getattr(m, name) != ref]
        if bad:
            violations.append(Violation(name, tuple([0] + bad)))
    return violations
