"""A deterministic in-process message-passing world.

Every logical rank runs the same program in its own thread, but only one
rank executes at a time: the scheduler hands a baton round-robin to the next
runnable rank whenever the current one enters a collective or finishes.
Results and traces are therefore a pure function of the program, never of
OS scheduling.

Collectives on a communicator are matched by call order (the n-th collective
a rank issues on ``comm`` pairs with the n-th collective of every other
member). If every unfinished rank is blocked and no pending collective can
complete, the world fails with :class:`DeadlockError`.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "CollectiveError",
    "Communicator",
    "CostParams",
    "DeadlockError",
    "Kind",
    "RankContext",
    "TRACE_FIELDS",
    "TraceEvent",
    "TraceGroup",
    "run_world",
    "trace_report",
]


class CollectiveError(RuntimeError):
    """Inconsistent arguments between the participants of a collective."""


class DeadlockError(CollectiveError):
    """Every live rank is blocked on a collective that can never complete."""

    def __init__(self, blocked: dict[int, str]):
        self.blocked = dict(sorted(blocked.items()))
        detail = "; ".join(f"rank {r}: {op}" for r, op in self.blocked.items())
        super().__init__(f"deadlock, blocked ranks {sorted(self.blocked)} ({detail})")


class _Aborted(BaseException):
    """Raised inside rank threads to unwind after another rank failed."""


class Kind(str, enum.Enum):
    ALLREDUCE = "ALLREDUCE"
    ALLTOALL = "ALLTOALL"
    BARRIER = "BARRIER"
    SPLIT = "SPLIT"  # communicator construction; never traced


@dataclass(frozen=True)
class CostParams:
    """Linear alpha-beta model: ``t = (p - 1) * (alpha + bytes / beta)``."""

    alpha: float = 1e-6
    beta: float = 1e9

    def __post_init__(self) -> None:
        if self.alpha < 0 or not self.beta > 0:
            raise ValueError(f"need alpha >= 0 and beta > 0, got {self}")

    def time(self, comm_size: int, nbytes: int) -> float:
        return (comm_size - 1) * (self.alpha + nbytes / self.beta)


@dataclass(frozen=True)
class Communicator:
    id: str
    members: tuple[int, ...]
    my_index: int

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def rank(self) -> int:
        """World rank of the calling process."""
        return self.members[self.my_index]


TRACE_FIELDS = (
    "seq",
    "kind",
    "phase_tag",
    "sim_id",
    "comm_size",
    "bytes_per_rank",
    "modeled_time",
)


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: Kind
    phase_tag: str
    sim_id: int | None
    comm_size: int
    bytes_per_rank: int
    modeled_time: float
    total_bytes: int = 0
    comm_id: str = ""

    def record(self) -> dict[str, Any]:
        """The dump record: exactly :data:`TRACE_FIELDS`, in order."""
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "phase_tag": self.phase_tag,
            "sim_id": "*" if self.sim_id is None else self.sim_id,
            "comm_size": self.comm_size,
            "bytes_per_rank": self.bytes_per_rank,
            "modeled_time": self.modeled_time,
        }


def _nbytes(buf: Any) -> int:
    if isinstance(buf, np.ndarray):
        return buf.nbytes
    if isinstance(buf, (bytes, bytearray, memoryview, str)):
        return len(buf)
    return np.asarray(buf).nbytes


def _handover(buf: Any) -> Any:
    return buf.copy() if isinstance(buf, np.ndarray) else buf


@dataclass
class _Op:
    comm: Communicator
    seq: int
    arrivals: dict[int, tuple[Kind, Any, dict]] = field(default_factory=dict)
    done: bool = False
    results: dict[int, Any] = field(default_factory=dict)
    error: BaseException | None = None

    def describe(self, rank: int) -> str:
        kind = self.arrivals[rank][0].value
        return f"{kind} on comm {self.comm.id!r} (call #{self.seq}, size {self.comm.size})"


class _World:
    def __init__(self, size: int, cost: CostParams):
        self.size = size
        self.cost = cost
        self.cv = threading.Condition()
        self.current = 0
        self.runnable = [True] * size
        self.finished = [False] * size
        self.pending: dict[tuple[str, int], _Op] = {}
        self.waiting: dict[int, _Op] = {}
        self.counters: list[dict[str, int]] = [{} for _ in range(size)]
        self.trace: list[TraceEvent] = []
        self.failure: BaseException | None = None
        self.world_comm = tuple(range(size))

    # -- scheduling (caller holds self.cv) --------------------------------

    def pass_baton(self, start: int) -> None:
        for step in range(1, self.size + 1):
            r = (start + step) % self.size
            if self.runnable[r] and not self.finished[r]:
                self.current = r
                self.cv.notify_all()
                return
        if not all(self.finished) and self.failure is None:
            blocked = {r: op.describe(r) for r, op in self.waiting.items()}
            self.failure = DeadlockError(blocked)
        self.current = -1
        self.cv.notify_all()

    def wait_turn(self, rank: int) -> None:
        while self.current != rank and self.failure is None:
            self.cv.wait()
        if self.failure is not None:
            raise _Aborted

    # -- collectives -------------------------------------------------------

    def collective(self, comm: Communicator, kind: Kind, payload: Any, meta: dict) -> Any:
        rank = comm.rank
        with self.cv:
            counter = self.counters[rank]
            seq = counter.get(comm.id, 0)
            counter[comm.id] = seq + 1
            op = self.pending.setdefault((comm.id, seq), _Op(comm, seq))
            op.arrivals[rank] = (kind, payload, meta)
            self.waiting[rank] = op
            self.runnable[rank] = False
            if len(op.arrivals) == comm.size:
                kinds = {a[0] for a in op.arrivals.values()}
                if len(kinds) == 1:
                    self._complete(op, kind)
            self.pass_baton(rank)
            while not (op.done and self.current == rank) and self.failure is None:
                self.cv.wait()
            if self.failure is not None:
                raise _Aborted
        if op.error is not None:
            raise op.error
        return op.results[rank]

    def _complete(self, op: _Op, kind: Kind) -> None:
        try:
            event = getattr(self, f"_do_{kind.value.lower()}")(op)
        except CollectiveError as exc:
            op.error = exc
            event = None
        if event is not None:
            self.trace.append(event)
        op.done = True
        del self.pending[(op.comm.id, op.seq)]
        for r in op.comm.members:
            del self.waiting[r]
            self.runnable[r] = True

    def _event(self, op: _Op, kind: Kind, bytes_per_rank: int, wire: int,
               total: int) -> TraceEvent:
        meta = op.arrivals[op.comm.members[0]][2]
        return TraceEvent(
            seq=len(self.trace),
            kind=kind,
            phase_tag=meta.get("phase_tag", ""),
            sim_id=meta.get("sim_id"),
            comm_size=op.comm.size,
            bytes_per_rank=bytes_per_rank,
            modeled_time=self.cost.time(op.comm.size, wire),
            total_bytes=total,
            comm_id=op.comm.id,
        )

    def _do_barrier(self, op: _Op) -> TraceEvent:
        for r in op.comm.members:
            op.results[r] = None
        return self._event(op, Kind.BARRIER, 0, 0, 0)

    def _do_allreduce(self, op: _Op) -> TraceEvent:
        members = op.comm.members
        vectors = [op.arrivals[r][1] for r in members]
        lengths = {r: v.shape[0] for r, v in zip(members, vectors)}
        if len(set(lengths.values())) > 1:
            raise CollectiveError(
                f"all_reduce length mismatch on comm {op.comm.id!r}: {lengths}"
            )
        acc = vectors[0].copy()
        for v in vectors[1:]:
            acc = acc + v
        for r in members:
            op.results[r] = acc.copy()
        nbytes = vectors[0].nbytes
        return self._event(op, Kind.ALLREDUCE, nbytes, nbytes, nbytes * len(members))

    def _do_alltoall(self, op: _Op) -> TraceEvent:
        members = op.comm.members
        p = len(members)
        sends = {r: op.arrivals[r][1] for r in members}
        for r, send in sends.items():
            if len(send) != p:
                raise CollectiveError(
                    f"all_to_all: rank {r} passed {len(send)} buffers for {p} members"
                )
        for j, dst in enumerate(members):
            expect = op.arrivals[dst][2].get("expect")
            if expect is None:
                continue
            for i, src in enumerate(members):
                got = _nbytes(sends[src][j])
                if got != expect[i]:
                    raise CollectiveError(
                        f"all_to_all size mismatch: rank {src} sends {got} bytes "
                        f"to rank {dst}, which expects {expect[i]}"
                    )
        for j, dst in enumerate(members):
            op.results[dst] = [_handover(sends[src][j]) for src in members]
        sent = [
            sum(_nbytes(sends[src][j]) for j in range(p) if j != i)
            for i, src in enumerate(members)
        ]
        max_pair = max(
            (_nbytes(sends[src][j]) for i, src in enumerate(members)
             for j in range(p) if j != i),
            default=0,
        )
        return self._event(op, Kind.ALLTOALL, max(sent), max_pair, sum(sent))

    def _do_split(self, op: _Op) -> None:
        parent = op.comm
        groups: dict[int, list[tuple[int, int, int]]] = {}
        for idx, r in enumerate(parent.members):
            color, key = op.arrivals[r][1]
            if color is None:
                op.results[r] = None
                continue
            groups.setdefault(color, []).append((key, idx, r))
        for color, entries in groups.items():
            members = tuple(r for _, _, r in sorted(entries))
            cid = f"{parent.id}/{op.seq}:{color}"
            for i, r in enumerate(members):
                op.results[r] = Communicator(cid, members, i)
        return None


class RankContext:
    """Handle a rank program uses to talk to the world."""

    def __init__(self, world: _World, rank: int):
        self._world = world
        self.rank = rank
        self.world_size = world.size
        self.world = Communicator("world", world.world_comm, rank)

    def barrier(self, comm: Communicator | None = None, phase_tag: str = "barrier",
                sim_id: int | None = None) -> None:
        comm = comm or self.world
        self._world.collective(comm, Kind.BARRIER, None,
                               {"phase_tag": phase_tag, "sim_id": sim_id})

    def comm_split(self, parent: Communicator, color: int | None, key: int) -> Communicator | None:
        """Collective split; members sharing ``color`` are ordered by (key, parent order).

        A ``None`` color opts out and returns None.
        """
        return self._world.collective(parent, Kind.SPLIT, (color, key), {})

    def all_to_all(
        self,
        comm: Communicator,
        send: Sequence[Any],
        phase_tag: str = "",
        sim_id: int | None = None,
        expect: Sequence[int] | None = None,
    ) -> list[Any]:
        """Personalized exchange: ``recv[j]`` is what member ``j`` sent to us.

        ``expect`` optionally lists the byte count expected from each member;
        a mismatch fails the collective naming the sender/receiver pair.
        """
        meta = {"phase_tag": phase_tag, "sim_id": sim_id,
                "expect": None if expect is None else list(expect)}
        return self._world.collective(comm, Kind.ALLTOALL, list(send), meta)

    def all_reduce_sum_ordered(
        self,
        comm: Communicator,
        local: np.ndarray,
        phase_tag: str = "",
        sim_id: int | None = None,
    ) -> np.ndarray:
        """Elementwise sum combined strictly in member order, left to right."""
        local = np.ascontiguousarray(local, dtype=np.float64).reshape(-1)
        return self._world.collective(
            comm, Kind.ALLREDUCE, local, {"phase_tag": phase_tag, "sim_id": sim_id}
        )


def run_world(
    world_size: int,
    program: Callable[[RankContext], Any],
    cost: CostParams | None = None,
) -> tuple[list[Any], list[TraceEvent]]:
    """Run ``program`` on ``world_size`` logical ranks.

    Returns the per-rank return values and the collective trace. The first
    failure in baton order (an exception in any rank, or a deadlock) is
    re-raised after all rank threads have unwound.
    """
    if world_size < 1:
        raise ValueError(f"world_size must be >= 1, got {world_size}")
    world = _World(world_size, cost or CostParams())
    outputs: list[Any] = [None] * world_size

    def main(rank: int) -> None:
        ctx = RankContext(world, rank)
        try:
            with world.cv:
                world.wait_turn(rank)
            outputs[rank] = program(ctx)
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - re-raised by run_world
            with world.cv:
                if world.failure is None:
                    world.failure = exc
        finally:
            with world.cv:
                world.finished[rank] = True
                world.waiting.pop(rank, None)
                world.pass_baton(rank)

    threads = [
        threading.Thread(target=main, args=(r,), name=f"rank-{r}", daemon=True)
        for r in range(world_size)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if world.failure is not None:
        raise world.failure
    return outputs, world.trace


@dataclass(frozen=True)
class TraceGroup:
    phase_tag: str
    kind: Kind
    count: int
    total_bytes: int
    max_comm_size: int
    total_time: float


def trace_report(trace: Sequence[TraceEvent]) -> list[TraceGroup]:
    """Aggregate events by ``(phase_tag, kind)``, groups sorted by that key."""
    acc: dict[tuple[str, str], list] = {}
    for ev in trace:
        g = acc.setdefault((ev.phase_tag, ev.kind.value), [0, 0, 0, 0.0])
        g[0] += 1
        g[1] += ev.bytes_per_rank
        g[2] = max(g[2], ev.comm_size)
        g[3] = g[3] + ev.modeled_time
    return [
        TraceGroup(tag, Kind(kind), *acc[(tag, kind)])
        for tag, kind in sorted(acc)
    ]
