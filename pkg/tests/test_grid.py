import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xgyrosim.grid import (
    CMAT_AFFECTING,
    Dims,
    EnsembleSpec,
    LayoutError,
    Phase,
    ProcGrid,
    SimParams,
    Slab,
    cmat_shard_extents,
    ensemble_coll_layout,
    layout_for,
    owner_of,
    plan_grid,
    validate_ensemble,
)

D842 = Dims(8, 4, 2)


def test_plan_grid_examples():
    assert plan_grid(D842, 4, 2) == ProcGrid(n_ranks=4, n_t=2, n_a=2)
    assert plan_grid(Dims(1, 1, 1), 1, 1) == ProcGrid(1, 1, 1)


def test_plan_grid_names_failing_dimension():
    with pytest.raises(LayoutError, match="n_a=4 does not divide nv=6"):
        plan_grid(Dims(8, 6, 2), 8, 2)
    with pytest.raises(LayoutError, match="n_t=3 does not divide"):
        plan_grid(D842, 6, 3)


def test_layout_examples():
    grid = plan_grid(D842, 4, 2)
    assert layout_for(Phase.STR, D842, grid).slab(0) == Slab((0, 0, 0), (8, 2, 1))
    assert layout_for(Phase.COLL, D842, grid).slab(3) == Slab((4, 0, 1), (4, 4, 1))


@pytest.mark.parametrize("phase", list(Phase))
def test_single_rank_owns_everything(phase):
    dims = Dims(3, 5, 2)
    layout = layout_for(phase, dims, plan_grid(dims, 1, 1))
    assert layout.slabs == (Slab((0, 0, 0), (3, 5, 2)),)


def test_owner_of_examples():
    grid = plan_grid(D842, 4, 2)
    str_l = layout_for(Phase.STR, D842, grid)
    coll_l = layout_for(Phase.COLL, D842, grid)
    assert owner_of(str_l, (5, 3, 0)) == (1, (5, 1, 0))
    assert owner_of(coll_l, (0, 0, 1)) == (2, (0, 0, 0))
    one = layout_for(Phase.NL, D842, plan_grid(D842, 1, 1))
    assert owner_of(one, (7, 2, 1)) == (0, (7, 2, 1))
    with pytest.raises(LayoutError):
        owner_of(str_l, (8, 0, 0))


def test_nl_layout_needs_nt_factor_to_divide_nv():
    dims = Dims(4, 3, 3)
    grid = plan_grid(dims, 3, 3)
    with pytest.raises(LayoutError, match="n_t=3 does not divide nv"):
        layout_for(Phase.NL, Dims(4, 2, 3), plan_grid(Dims(4, 2, 3), 3, 3))
    assert layout_for(Phase.NL, dims, grid).slab(0).length == (4, 1, 3)


def _valid_configs(max_dims=(8, 6, 4), max_ranks=8):
    for nc, nv, nt in itertools.product(*(range(1, m + 1) for m in max_dims)):
        dims = Dims(nc, nv, nt)
        for n_ranks in range(1, max_ranks + 1):
            for n_t in range(1, n_ranks + 1):
                try:
                    grid = plan_grid(dims, n_ranks, n_t)
                except LayoutError:
                    continue
                yield dims, grid


def test_slabs_tile_the_index_space_exhaustively():
    checked = 0
    for dims, grid in _valid_configs():
        for phase in Phase:
            try:
                layout = layout_for(phase, dims, grid)
            except LayoutError:
                continue
            seen = {}
            for slot, slab in layout:
                for idx in itertools.product(*(range(o, o + n) for o, n in zip(slab.offset, slab.length))):
                    assert idx not in seen, (dims, grid, phase, idx)
                    seen[idx] = slot
            assert len(seen) == dims.size
            # owner_of agrees with enumeration, and rebasing inverts
            for idx, slot in seen.items():
                owner, local = owner_of(layout, idx)
                assert owner == slot
                off = layout.slab(slot).offset
                assert tuple(l + o for l, o in zip(local, off)) == idx
            checked += 1
    assert checked > 200


@pytest.mark.parametrize("phase,complete", [(Phase.STR, 0), (Phase.COLL, 1), (Phase.NL, 2)])
def test_phase_keeps_one_dimension_complete(phase, complete):
    dims = Dims(8, 4, 4)
    layout = layout_for(phase, dims, plan_grid(dims, 4, 2))
    assert all(s.length[complete] == dims.shape[complete] for s in layout.slabs)


def test_cmat_shard_examples():
    grid = plan_grid(D842, 4, 2)
    coll = layout_for(Phase.COLL, D842, grid)
    assert cmat_shard_extents(D842, coll, 0) == (4, 1, 64)
    one = Dims(1, 1, 1)
    assert cmat_shard_extents(one, layout_for(Phase.COLL, one, plan_grid(one, 1, 1)), 0) == (1, 1, 1)
    coll8 = layout_for(Phase.COLL, D842, ProcGrid(8, 2, 4))
    counts = [cmat_shard_extents(D842, coll8, r) for r in range(8)]
    assert set(counts) == {(2, 1, 32)}
    assert sum(c[2] for c in counts) == 256 == 4 * 4 * 8 * 2
    with pytest.raises(LayoutError, match="coll"):
        cmat_shard_extents(D842, layout_for(Phase.STR, D842, grid), 0)


def test_ensemble_coll_layout_examples():
    d = Dims(16, 4, 2)
    lay = ensemble_coll_layout(d, 8, 2, 2)
    assert lay.grid.n_a == 4
    assert [s.length[0] for s in lay.slabs] == [4] * 8
    lay = ensemble_coll_layout(D842, 8, 2, 2)
    assert [s.offset[0] for s in lay.slabs[:4]] == [0, 2, 4, 6]
    grid = plan_grid(D842, 4, 2)
    assert ensemble_coll_layout(D842, 4, 2, 1) == layout_for(Phase.COLL, D842, grid)


def test_ensemble_coll_placement_matches_subgroups():
    # chunk e = sim * n_a + a of slice t is served by rank sim*P + t*n_a + a
    lay = ensemble_coll_layout(Dims(16, 4, 2), 8, 2, 2)
    assert lay.ranks == (0, 1, 4, 5, 2, 3, 6, 7)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_shard_conservation_and_nesting(k):
    dims = Dims(16, 4, 2)
    total, n_t = 8, 2
    ens = ensemble_coll_layout(dims, total, n_t, k)
    assert sum(cmat_shard_extents(dims, ens, s)[2] for s in range(total)) == 4 * 4 * 16 * 2
    single = layout_for(Phase.COLL, dims, plan_grid(dims, total // k, n_t))
    for slab in ens.slabs:
        parents = [p for p in single.slabs if p.intersect(slab) is not None]
        assert len(parents) == 1
        assert parents[0].intersect(slab) == slab


def test_cmat_affecting_classification_is_fixed():
    assert set(CMAT_AFFECTING) == {"collision_eps", "collision_seed", "dims"}


def _members(**diff):
    base = dict(dims=D842, collision_eps=0.05, collision_seed=1, drive=1.0, init_seed=2, dt=0.05)
    other = dict(base, **diff)
    return (SimParams(**base), SimParams(**other))


def test_validate_ensemble():
    assert validate_ensemble(EnsembleSpec(_members(drive=0.3), 4)) == []
    assert validate_ensemble(EnsembleSpec(_members(init_seed=9, dt=0.01), 4)) == []
    (v,) = validate_ensemble(EnsembleSpec(_members(collision_eps=0.1), 4))
    assert (v.field, v.members) == ("collision_eps", (0, 1))
    fields = {v.field for v in validate_ensemble(
        EnsembleSpec(_members(collision_seed=7, dims=Dims(8, 4, 4)), 4))}
    assert fields == {"collision_seed", "dims"}
    single = EnsembleSpec((SimParams(D842, 0.5),), 3)
    assert validate_ensemble(single) == []


def test_ensemble_spec_requires_k_divides_ranks():
    with pytest.raises(LayoutError, match="k must divide"):
        EnsembleSpec(_members(), 3)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from([(8, 4, 2), (16, 12, 4), (6, 6, 3), (12, 8, 4)]),
    st.sampled_from([1, 2, 3, 4, 6, 8, 12, 16]),
    st.sampled_from([1, 2, 3, 4]),
    st.sampled_from(list(Phase)),
    st.data(),
)
def test_owner_of_roundtrip_property(shape, n_ranks, n_t, phase, data):
    dims = Dims(*shape)
    try:
        layout = layout_for(phase, dims, plan_grid(dims, n_ranks, n_t))
    except LayoutError:
        return
    idx = tuple(data.draw(st.integers(0, n - 1)) for n in shape)
    slot, local = owner_of(layout, idx)
    slab = layout.slab(slot)
    assert slab.contains(idx)
    assert all(0 <= l < n for l, n in zip(local, slab.length))
