import random

import numpy as np
import pytest

from xgyrosim import kernels
from xgyrosim.fabric import Kind, run_world
from xgyrosim.grid import (
    Dims,
    EnsembleSpec,
    LayoutError,
    Phase,
    SimParams,
    ensemble_coll_layout,
    layout_for,
    plan_grid,
)
from xgyrosim.kernels import DistState
from xgyrosim.orchestrator import (
    STR_TAGS,
    EnsembleError,
    TransposeError,
    build_comm_plan,
    checksum,
    initial_checksum,
    memory_report,
    run_sequential_baseline,
    run_single,
    run_xgyro,
    transpose,
)


def _ensemble(dims, k, total, **shared):
    base = dict(collision_eps=0.05, collision_seed=11, dt=0.05)
    base.update(shared)
    members = [SimParams(Dims(*dims), drive=1.0 - 0.2 * i, init_seed=100 + i, **base)
               for i in range(k)]
    return EnsembleSpec(tuple(members), total)


# -- communicator plan -------------------------------------------------------------


def test_comm_plan_single():
    plan = build_comm_plan("single", Dims(8, 4, 2), 4, 2)
    assert plan.str_groups == ((0, 1), (2, 3))
    assert plan.coll_groups == plan.str_groups


def test_comm_plan_xgyro():
    plan = build_comm_plan("xgyro", Dims(16, 4, 2), 8, 2, k=2)
    assert plan.str_size == 2 and plan.coll_size == 4
    assert plan.str_groups == ((0, 1), (2, 3), (4, 5), (6, 7))
    assert plan.coll_groups == ((0, 1, 4, 5), (2, 3, 6, 7))
    assert plan.coll_size == 2 * plan.str_size


def test_comm_plan_degenerate_ensemble():
    a = build_comm_plan("xgyro", Dims(8, 4, 2), 4, 2, k=1)
    b = build_comm_plan("single", Dims(8, 4, 2), 4, 2)
    assert (a.str_groups, a.coll_groups) == (b.str_groups, b.coll_groups)


def test_comm_plan_errors():
    with pytest.raises(LayoutError, match="k=3 does not divide"):
        build_comm_plan("xgyro", Dims(8, 4, 2), 8, 2, k=3)
    with pytest.raises(LayoutError):
        build_comm_plan("single", Dims(8, 6, 2), 8, 2)


def test_runtime_communicators_match_plan():
    spec = _ensemble((16, 4, 2), 2, 8)
    res = run_xgyro(spec, 2, 0)
    for r in range(8):
        assert res.str_members[r] in res.plan.str_groups
        assert r in res.str_members[r]
        assert res.coll_members[r] in res.plan.coll_groups


# -- transpose ------------------------------------------------------------------------


def _roundtrip(dims, n_ranks, n_t, via, seed=0):
    grid = plan_grid(dims, n_ranks, n_t)
    src = layout_for(Phase.STR, dims, grid)
    mid = layout_for(via, dims, grid)
    n_a = grid.n_a

    def prog(ctx):
        slab = src.slab(ctx.rank)
        original = DistState(0, dims, src, ctx.rank, kernels.initial_slab(seed, slab))
        if via is Phase.COLL:
            comm = ctx.comm_split(ctx.world, ctx.rank // n_a, ctx.rank)
        else:
            comm = ctx.world
        there = transpose(ctx, original, src, mid, comm, 0, "x")
        expected_mid = kernels.initial_slab(seed, mid.slab(ctx.rank))
        back = transpose(ctx, there, mid, src, comm, 0, "x")
        return (there.values.tobytes() == expected_mid.tobytes(),
                back.values.tobytes() == original.values.tobytes())

    outputs, trace = run_world(n_ranks, prog)
    return outputs, trace


@pytest.mark.parametrize("via", [Phase.COLL, Phase.NL])
def test_transpose_roundtrip(via):
    outputs, trace = _roundtrip(Dims(8, 4, 2), 4, 2, via)
    assert all(a and b for a, b in outputs)
    assert all(ev.kind is Kind.ALLTOALL for ev in trace)


def test_single_rank_transpose_moves_no_bytes():
    outputs, trace = _roundtrip(Dims(4, 3, 2), 1, 1, Phase.COLL)
    assert outputs == [(True, True)]
    assert [ev.bytes_per_rank for ev in trace] == [0, 0]


@pytest.mark.parametrize("seed", range(6))
def test_transpose_roundtrip_random(seed):
    rng = random.Random(seed)
    while True:
        dims = Dims(rng.choice([2, 4, 8, 12, 16]), rng.choice([2, 4, 6, 12]), rng.choice([1, 2, 4]))
        n_t = rng.choice([1, 2, 4])
        n_ranks = n_t * rng.choice([1, 2, 4])
        try:
            grid = plan_grid(dims, n_ranks, n_t)
            layout_for(Phase.NL, dims, grid)
        except LayoutError:
            continue
        break
    for via in (Phase.COLL, Phase.NL):
        outputs, _ = _roundtrip(dims, n_ranks, n_t, via, seed=seed)
        assert all(a and b for a, b in outputs)


def test_transpose_refuses_unclosed_communicator():
    dims = Dims(8, 4, 2)
    grid = plan_grid(dims, 4, 2)
    src, dst = layout_for(Phase.STR, dims, grid), layout_for(Phase.NL, dims, grid)

    def prog(ctx):
        # str->nl needs the whole world; a toroidal-slice communicator is not closed
        comm = ctx.comm_split(ctx.world, ctx.rank // 2, ctx.rank)
        state = DistState(0, dims, src, ctx.rank, np.zeros(src.slab(ctx.rank).shape))
        transpose(ctx, state, src, dst, comm, 0)

    with pytest.raises(TransposeError, match="holds"):
        run_world(4, prog)


# -- single runs ------------------------------------------------------------------------


def test_zero_steps_checksum_is_initial(sim_params):
    p = sim_params()
    res = run_single(p, 4, 2, 0)
    assert res.results[0].final_checksum == initial_checksum(p)
    assert res.trace == []


def test_checksum_is_order_sensitive():
    x = np.arange(6, dtype=float).reshape(1, 2, 3)
    assert checksum(x)[1] != checksum(x[:, ::-1, :])[1]
    assert checksum(x)[0] == 15.0


@pytest.mark.parametrize("steps", [1, 4])
def test_identity_collision_equals_skipping_coll_phase(sim_params, steps):
    p = sim_params(eps=0.0)
    full = run_single(p, 4, 2, steps)
    skip = run_single(p, 4, 2, steps, skip_collision=True)
    assert full.results[0].digest == skip.results[0].digest
    assert all(ev.phase_tag in STR_TAGS for ev in skip.trace)


def test_layout_equivalence(sim_params):
    p = sim_params()
    digests = {run_single(p, r, t, 10).results[0].digest for r, t in [(1, 1), (4, 2), (4, 1), (2, 1)]}
    assert len(digests) == 1


def test_backends_give_same_run(sim_params):
    p = sim_params(eps=0.2)
    with kernels.use_backend("numpy"):
        a = run_single(p, 4, 2, 5)
    with kernels.use_backend("numba"):
        b = run_single(p, 4, 2, 5)
    assert a.results == b.results and a.trace == b.trace


def test_single_trace_shape(sim_params):
    res = run_single(sim_params(), 4, 2, 1)
    kinds = [(ev.kind, ev.phase_tag) for ev in res.trace]
    assert kinds.count((Kind.ALLREDUCE, "str.field")) == 2
    assert kinds.count((Kind.ALLREDUCE, "str.upwind")) == 2
    assert kinds.count((Kind.ALLTOALL, "coll.transpose")) == 4
    assert {ev.comm_size for ev in res.trace} == {2}


# -- ensembles -----------------------------------------------------------------------


def test_sequential_baseline(sim_params):
    p = sim_params()
    one = run_sequential_baseline(EnsembleSpec((p,), 4), 2, 3)
    ref = run_single(p, 4, 2, 3)
    assert one.results == ref.results and one.trace == ref.trace

    two = run_sequential_baseline(EnsembleSpec((p, p), 4), 2, 3)
    assert two.results[0].digest == two.results[1].digest
    str_time = sum(ev.modeled_time for ev in two.trace if ev.phase_tag in STR_TAGS)
    ref_time = sum(ev.modeled_time for ev in ref.trace if ev.phase_tag in STR_TAGS)
    assert str_time == pytest.approx(2 * ref_time, rel=1e-15)
    assert [ev.seq for ev in two.trace] == list(range(len(two.trace)))


def test_xgyro_k1_is_run_single(sim_params):
    p = sim_params()
    x = run_xgyro(EnsembleSpec((p,), 4), 2, 4)
    s = run_single(p, 4, 2, 4)
    assert x.results == s.results
    assert x.trace == s.trace


def test_xgyro_matches_single_runs():
    spec = _ensemble((16, 4, 2), 2, 8)
    x = run_xgyro(spec, 2, 10)
    for i, m in enumerate(spec.members):
        assert x.results[i].digest == run_single(m, 8, 2, 10).results[0].digest


def test_xgyro_refuses_mismatched_cmat_inputs():
    spec = _ensemble((16, 4, 2), 2, 8)
    bad = EnsembleSpec((spec.members[0], SimParams(Dims(16, 4, 2), collision_eps=0.2)), 8)
    with pytest.raises(EnsembleError, match="collision_eps"):
        run_xgyro(bad, 2, 1)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_xgyro_cmat_single_copy(k):
    dims = Dims(16, 4, 2)
    res = run_xgyro(_ensemble(dims.shape, k, 8), 2, 0)
    assert sum(res.cmat_elements) == dims.nv**2 * dims.nc * dims.nt
    assert res.memory.totals["cmat"] == dims.nv**2 * dims.nc * dims.nt * 8


def test_transpose_volume_is_mode_independent():
    spec = _ensemble((16, 8, 4), 2, 8)
    x = run_xgyro(spec, 2, 1)
    s = run_single(spec.members[0], 8, 2, 1)

    def volume(trace, sim):
        return sum(ev.total_bytes for ev in trace if ev.kind is Kind.ALLTOALL and ev.sim_id == sim)

    assert volume(x.trace, 0) == volume(x.trace, 1) == volume(s.trace, 0) > 0


def test_matvec_counts():
    spec = _ensemble((16, 4, 2), 2, 8)
    x = run_xgyro(spec, 2, 3)
    seq = run_sequential_baseline(spec, 2, 3)
    assert x.total_matvecs == seq.total_matvecs == 2 * 3 * 16 * 2
    assert max(x.matvecs) == max(seq.matvecs)


# -- memory ----------------------------------------------------------------------------


def test_memory_report_example():
    spec = _ensemble((16, 8, 2), 2, 8)
    rep = memory_report("xgyro", spec, 2, 8)
    assert rep.per_rank["cmat"] == 8 * 8 * 4 * 1 * 8 == 2048


def test_memory_report_k1_matches_single():
    spec = _ensemble((16, 8, 2), 1, 8)
    assert memory_report("xgyro", spec, 2).per_rank == memory_report("single", spec, 2).per_rank


def test_memory_scaling_with_k():
    single = memory_report("single", _ensemble((16, 8, 4), 1, 16), 2)
    ratios = []
    for k in (1, 2, 4, 8):
        rep = memory_report("xgyro", _ensemble((16, 8, 4), k, 16), 2)
        assert rep.per_rank["cmat"] == single.per_rank["cmat"]
        assert rep.per_rank["state"] == k * single.per_rank["state"]
        assert rep.per_rank["staging"] == k * single.per_rank["staging"]
        assert rep.per_rank["field"] == single.per_rank["field"]
        ratios.append(rep.cmat_ratio)
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
