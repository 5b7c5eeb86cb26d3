"""Simulation drivers: single runs, the sequential baseline and ensemble runs.

All three modes execute the same per-rank program. A simulation's str-phase
state lives on a contiguous subgroup of ``total_ranks / k`` ranks; the
collision tensor is generated once against a coll layout that spans every
rank of the job, and each coll transpose runs on a communicator joining the
ranks of all ``k`` subgroups that share a toroidal slice. With ``k = 1`` that
communicator is the str nv-split communicator itself, which is exactly the
single-simulation arrangement.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import kernels
from .fabric import Communicator, CostParams, RankContext, TraceEvent, run_world
from .grid import (
    Dims,
    EnsembleSpec,
    LayoutError,
    Phase,
    PhaseLayout,
    SimParams,
    Violation,
    ensemble_coll_layout,
    layout_for,
    plan_grid,
    validate_ensemble,
)
from .kernels import DistState, FieldBuffer

__all__ = [
    "CommPlan",
    "EnsembleError",
    "MemoryReport",
    "RunResult",
    "SimResult",
    "TransposeError",
    "build_comm_plan",
    "checksum",
    "initial_checksum",
    "memory_report",
    "run_sequential_baseline",
    "run_single",
    "run_xgyro",
    "transpose",
]

MODES = ("single", "sequential", "xgyro")
TAG_FIELD = "str.field"
TAG_UPWIND = "str.upwind"
TAG_COLL = "coll.transpose"
TAG_NL = "nl.transpose"
STR_TAGS = (TAG_FIELD, TAG_UPWIND)


class EnsembleError(ValueError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        detail = "; ".join(
            f"{v.field} differs across members {list(v.members)}" for v in self.violations
        )
        super().__init__(f"ensemble members must share cmat inputs: {detail}")


class TransposeError(LayoutError):
    """The communicator does not own the same elements under both layouts."""


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class SimResult:
    sim_id: int
    ordered_sum: float
    digest: int
    steps_run: int

    @property
    def final_checksum(self) -> tuple[float, int]:
        return (self.ordered_sum, self.digest)

    def record(self) -> dict:
        return {
            "sim_id": self.sim_id,
            "ordered_sum": self.ordered_sum,
            "digest": f"{self.digest:016x}",
            "steps_run": self.steps_run,
        }


def checksum(global_state: np.ndarray) -> tuple[float, int]:
    """Ordered sum and 64-bit digest of the state in global C index order."""
    flat = np.ascontiguousarray(global_state, dtype="<f8")
    digest = hashlib.blake2b(flat.tobytes(), digest_size=8).digest()
    return kernels.ordered_sum(flat), int.from_bytes(digest, "little")


def initial_checksum(params: SimParams) -> tuple[float, int]:
    dims = params.dims
    whole = layout_for(Phase.STR, dims, plan_grid(dims, 1, 1)).slab(0)
    return checksum(kernels.initial_slab(params.init_seed, whole))


@dataclass(frozen=True)
class MemoryReport:
    """Bytes per rank by buffer class; identical on every rank of the job."""

    mode: str
    n_ranks: int
    k: int
    per_rank: dict[str, int]

    @property
    def totals(self) -> dict[str, int]:
        return {name: b * self.n_ranks for name, b in self.per_rank.items()}

    @property
    def per_rank_total(self) -> int:
        return sum(self.per_rank.values())

    @property
    def cmat_ratio(self) -> Fraction:
        """cmat bytes over the bytes of every other buffer class."""
        other = sum(b for name, b in self.per_rank.items() if name != "cmat")
        return Fraction(self.per_rank["cmat"], other)

    def record(self) -> dict:
        return {
            "mode": self.mode,
            "n_ranks": self.n_ranks,
            "k": self.k,
            "per_rank_bytes": dict(self.per_rank),
            "per_rank_total": self.per_rank_total,
            "job_total_bytes": self.totals,
            "cmat_ratio": float(self.cmat_ratio),
        }


def memory_report(mode: str, spec: EnsembleSpec, n_t: int, element_width: int = 8) -> MemoryReport:
    """Closed-form memory footprint per rank.

    ``single`` and ``sequential`` hold one simulation at a time spread over all
    ranks. ``xgyro`` keeps each simulation's str state on ``total_ranks / k``
    ranks and one shared cmat copy spread over all of them; the coll staging
    buffers hold every member's slab for the rank's cmat shard.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    dims, total = spec.dims, spec.total_ranks
    k = spec.k if mode == "xgyro" else 1
    sim_grid = plan_grid(dims, total // k, n_t)
    coll = ensemble_coll_layout(dims, total, n_t, k)
    nc_loc, _, nt_loc = coll.slab(0).length
    w = element_width
    per_rank = {
        "cmat": dims.nv * dims.nv * nc_loc * nt_loc * w,
        "state": layout_for(Phase.STR, dims, sim_grid).slab(0).size * w,
        "field": 2 * dims.nc * (dims.nt // n_t) * w,
        "staging": k * coll.slab(0).size * w,
    }
    return MemoryReport(mode, total, spec.k if mode == "xgyro" else 1, per_rank)


# --------------------------------------------------------------------------
# communicator plan


@dataclass(frozen=True)
class CommPlan:
    mode: str
    total_ranks: int
    n_t: int
    k: int
    str_groups: tuple[tuple[int, ...], ...]
    coll_groups: tuple[tuple[int, ...], ...]
    sim_groups: tuple[tuple[int, ...], ...]

    @property
    def str_size(self) -> int:
        return len(self.str_groups[0])

    @property
    def coll_size(self) -> int:
        return len(self.coll_groups[0])


@dataclass(frozen=True)
class _Colors:
    sim: int
    slice: int
    a: int
    str_color: int
    coll_color: int


def _colors(rank: int, total_ranks: int, n_t: int, k: int) -> _Colors:
    per_sim = total_ranks // k
    n_a = per_sim // n_t
    sim, local = divmod(rank, per_sim)
    t, a = divmod(local, n_a)
    return _Colors(sim, t, a, sim * n_t + t, t)


def _group(colors: Sequence[int]) -> tuple[tuple[int, ...], ...]:
    groups: dict[int, list[int]] = {}
    for r, c in enumerate(colors):
        groups.setdefault(c, []).append(r)
    return tuple(tuple(groups[c]) for c in sorted(groups))


def build_comm_plan(mode: str, dims: Dims, total_ranks: int, n_t: int, k: int = 1) -> CommPlan:
    """Enumerate the communicator groups each mode builds with ``comm_split``.

    Colors: simulation subgroup ``rank // (total_ranks / k)``; str nv-split
    color ``sim * n_t + slice``; ensemble coll color ``slice``. Members are
    keyed by world rank.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode != "xgyro" and k != 1:
        raise LayoutError(f"mode {mode!r} runs one simulation per job, k must be 1")
    if k < 1 or total_ranks % k:
        raise LayoutError(f"k={k} does not divide total_ranks={total_ranks}")
    ensemble_coll_layout(dims, total_ranks, n_t, k)
    cs = [_colors(r, total_ranks, n_t, k) for r in range(total_ranks)]
    str_groups = _group([c.str_color for c in cs])
    coll_groups = _group([c.coll_color for c in cs]) if k > 1 else str_groups
    sim_groups = _group([c.sim for c in cs])
    return CommPlan(mode, total_ranks, n_t, k, str_groups, coll_groups, sim_groups)


# --------------------------------------------------------------------------
# transpose


def _check_closed(from_layout: PhaseLayout, to_layout: PhaseLayout,
                  members: Sequence[int]) -> None:
    if from_layout.dims != to_layout.dims:
        raise TransposeError(f"dims differ: {from_layout.dims} vs {to_layout.dims}")
    src = [from_layout.slot_of(m) for m in members]
    dst = [to_layout.slot_of(m) for m in members]
    held_from = sum(from_layout.slab(s).size for s in src if s is not None)
    held_to = sum(to_layout.slab(s).size for s in dst if s is not None)
    overlap = 0
    for s in src:
        if s is None:
            continue
        for d in dst:
            if d is None:
                continue
            box = from_layout.slab(s).intersect(to_layout.slab(d))
            overlap += box.size if box is not None else 0
    if not held_from == held_to == overlap:
        raise TransposeError(
            f"communicator {list(members)} holds {held_from} elements under "
            f"{from_layout.phase.value} and {held_to} under {to_layout.phase.value}, "
            f"{overlap} in common"
        )


def transpose(
    ctx: RankContext,
    state: DistState | None,
    from_layout: PhaseLayout,
    to_layout: PhaseLayout,
    comm: Communicator,
    sim_id: int,
    phase_tag: str = TAG_COLL,
) -> DistState | None:
    """Redistribute one simulation's state from ``from_layout`` to ``to_layout``.

    Runs exactly one ``all_to_all`` on ``comm``. Ranks holding no slab under
    ``from_layout`` pass ``state=None``; ranks holding none under
    ``to_layout`` get None back.
    """
    _check_closed(from_layout, to_layout, comm.members)
    me = ctx.rank
    src_slot = from_layout.slot_of(me)
    dst_slot = to_layout.slot_of(me)
    if (state is None) != (src_slot is None):
        raise TransposeError(f"rank {me}: state presence disagrees with source layout")
    src = from_layout.slab(src_slot) if src_slot is not None else None
    dst = to_layout.slab(dst_slot) if dst_slot is not None else None
    empty = np.empty(0)

    send = []
    for peer in comm.members:
        slot = to_layout.slot_of(peer)
        box = src.intersect(to_layout.slab(slot)) if src and slot is not None else None
        if box is None:
            send.append(empty)
        else:
            send.append(np.ascontiguousarray(state.values[src.local_slices(box)]))

    boxes = []
    for peer in comm.members:
        slot = from_layout.slot_of(peer)
        box = from_layout.slab(slot).intersect(dst) if dst and slot is not None else None
        boxes.append(box)
    expect = [0 if b is None else b.size * 8 for b in boxes]

    recv = ctx.all_to_all(comm, send, phase_tag=phase_tag, sim_id=sim_id, expect=expect)
    if dst is None:
        return None
    out = np.empty(dst.shape)
    for box, buf in zip(boxes, recv):
        if box is not None:
            out[dst.local_slices(box)] = buf.reshape(box.shape)
    return DistState(sim_id, to_layout.dims, to_layout, me, out)


# --------------------------------------------------------------------------
# the per-rank program


@dataclass
class _RankOutcome:
    rank: int
    sim: int
    slab_offset: tuple[int, int, int]
    values: np.ndarray
    cmat_elements: int
    matvecs: int
    str_members: tuple[int, ...]
    coll_members: tuple[int, ...]


@dataclass(frozen=True)
class _Job:
    members: tuple[SimParams, ...]
    sim_ids: tuple[int, ...]
    total_ranks: int
    n_t: int
    steps: int
    skip_collision: bool = False

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def dims(self) -> Dims:
        return self.members[0].dims


def _rank_program(job: _Job):
    dims, k, total, n_t = job.dims, job.k, job.total_ranks, job.n_t
    per_sim = total // k
    sim_grid = plan_grid(dims, per_sim, n_t)
    str_base = layout_for(Phase.STR, dims, sim_grid)
    str_layouts = [str_base.placed(range(q * per_sim, (q + 1) * per_sim)) for q in range(k)]
    coll_layout = ensemble_coll_layout(dims, total, n_t, k)
    w_field = kernels.field_weights(dims.nv)
    w_upwind = kernels.upwind_weights(dims.nv)
    shared = job.members[0]

    def program(ctx: RankContext) -> _RankOutcome:
        c = _colors(ctx.rank, total, n_t, k)
        params = job.members[c.sim]
        sid = job.sim_ids[c.sim]
        str_comm = ctx.comm_split(ctx.world, c.str_color, ctx.rank)
        coll_comm = str_comm if k == 1 else ctx.comm_split(ctx.world, c.coll_color, ctx.rank)

        shard = kernels.build_cmat_shard(
            shared.collision_eps, shared.collision_seed, coll_layout, ctx.rank
        )
        layout = str_layouts[c.sim]
        slab = layout.slab(layout.slot_of(ctx.rank))
        state = DistState(sid, dims, layout, ctx.rank,
                          kernels.initial_slab(params.init_seed, slab))
        matvecs = 0

        for _ in range(job.steps):
            closed = []
            for tag, weights in ((TAG_FIELD, w_field), (TAG_UPWIND, w_upwind)):
                part = kernels.partial_moment(state, weights)
                total_moment = ctx.all_reduce_sum_ordered(
                    str_comm, part.values, phase_tag=tag, sim_id=sid
                )
                closed.append(FieldBuffer(total_moment.reshape(part.values.shape), True))
            state = kernels.stream_step(state, closed[0], closed[1], params.drive, params.dt)
            if job.skip_collision:
                continue

            coll_states = [
                transpose(ctx, state if q == c.sim else None, str_layouts[q],
                          coll_layout, coll_comm, job.sim_ids[q])
                for q in range(k)
            ]
            for q in range(k):
                coll_states[q] = kernels.collision_apply(shard, coll_states[q])
                matvecs += shard.blocks.shape[0] * shard.blocks.shape[1]
            for q in range(k):
                back = transpose(ctx, coll_states[q], coll_layout, str_layouts[q],
                                 coll_comm, job.sim_ids[q])
                if q == c.sim:
                    state = back

        return _RankOutcome(
            rank=ctx.rank,
            sim=c.sim,
            slab_offset=slab.offset,
            values=state.values,
            cmat_elements=shard.element_count,
            matvecs=matvecs,
            str_members=str_comm.members,
            coll_members=coll_comm.members,
        )

    return program


@dataclass
class RunResult:
    mode: str
    results: list[SimResult]
    trace: list[TraceEvent]
    memory: MemoryReport
    plan: CommPlan
    cmat_elements: list[int] = field(default_factory=list)  # per rank
    matvecs: list[int] = field(default_factory=list)  # per rank
    str_members: list[tuple[int, ...]] = field(default_factory=list)
    coll_members: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def total_matvecs(self) -> int:
        return sum(self.matvecs)


def _execute(mode: str, job: _Job, cost: CostParams | None, element_width: int) -> RunResult:
    dims = job.dims
    plan = build_comm_plan(mode, dims, job.total_ranks, job.n_t, job.k)
    outcomes, trace = run_world(job.total_ranks, _rank_program(job), cost)

    per_sim = job.total_ranks // job.k
    sim_grid = plan_grid(dims, per_sim, job.n_t)
    slab_shape = layout_for(Phase.STR, dims, sim_grid).slab(0).shape
    results = []
    for q, sid in enumerate(job.sim_ids):
        whole = np.empty(dims.shape)
        for o in outcomes:
            if o.sim == q:
                idx = tuple(slice(off, off + n) for off, n in zip(o.slab_offset, slab_shape))
                whole[idx] = o.values
        total, digest = checksum(whole)
        results.append(SimResult(sid, total, digest, job.steps))

    spec = EnsembleSpec(job.members, job.total_ranks)
    memory = memory_report(mode, spec, job.n_t, element_width)
    return RunResult(
        mode=mode,
        results=results,
        trace=trace,
        memory=memory,
        plan=plan,
        cmat_elements=[o.cmat_elements for o in outcomes],
        matvecs=[o.matvecs for o in outcomes],
        str_members=[o.str_members for o in outcomes],
        coll_members=[o.coll_members for o in outcomes],
    )


def run_single(
    params: SimParams,
    total_ranks: int,
    n_t: int,
    steps: int,
    *,
    sim_id: int = 0,
    cost: CostParams | None = None,
    element_width: int = 8,
    skip_collision: bool = False,
) -> RunResult:
    """One simulation on ``total_ranks`` ranks.

    Each step: field and upwind moments closed by ordered AllReduce on the
    nv-split communicator, a streaming update, a transpose to the coll layout,
    the collision matvecs, and the transpose back.
    """
    plan_grid(params.dims, total_ranks, n_t)
    job = _Job((params,), (sim_id,), total_ranks, n_t, steps, skip_collision)
    return _execute("single", job, cost, element_width)


def run_sequential_baseline(
    spec: EnsembleSpec,
    n_t: int,
    steps: int,
    *,
    cost: CostParams | None = None,
    element_width: int = 8,
) -> RunResult:
    """Run every member with :func:`run_single` on all ranks, one after another."""
    runs = [
        run_single(m, spec.total_ranks, n_t, steps, sim_id=i, cost=cost,
                   element_width=element_width)
        for i, m in enumerate(spec.members)
    ]
    trace = []
    for run in runs:
        for ev in run.trace:
            trace.append(_reseq(ev, len(trace)))
    first = runs[0]
    return RunResult(
        mode="sequential",
        results=[r.results[0] for r in runs],
        trace=trace,
        memory=memory_report("sequential", spec, n_t, element_width),
        plan=first.plan,
        cmat_elements=first.cmat_elements,
        matvecs=[sum(col) for col in zip(*(r.matvecs for r in runs))],
        str_members=first.str_members,
        coll_members=first.coll_members,
    )


def _reseq(ev: TraceEvent, seq: int) -> TraceEvent:
    return TraceEvent(seq, ev.kind, ev.phase_tag, ev.sim_id, ev.comm_size,
                      ev.bytes_per_rank, ev.modeled_time, ev.total_bytes, ev.comm_id)


def run_xgyro(
    spec: EnsembleSpec,
    n_t: int,
    steps: int,
    *,
    cost: CostParams | None = None,
    element_width: int = 8,
) -> RunResult:
    """Run the ``k`` members as one job sharing a single distributed cmat."""
    violations = validate_ensemble(spec)
    if violations:
        raise EnsembleError(violations)
    job = _Job(spec.members, tuple(range(spec.k)), spec.total_ranks, n_t, steps)
    return _execute("xgyro", job, cost, element_width)
