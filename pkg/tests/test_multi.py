import csv
import itertools

import numpy as np
import pytest

from multitime import consistency as cons
from multitime.fock import FockSpace, FockState, Sector
from multitime.multi import (Greens, MultiTimeConfig, MultiTimeState, PathError, all_slots, apply_generator,
                             clock_path, evolve_multitime, single_time_reference, vacuum_expectation_amplitude)
from multitime.single import apply_H, apply_on_axis, make_params


def minimal(L=8, seed=0, eps=(1, 1, 1), lam=0.5):
    p = make_params(L=L, caps=(1, 1, 1), eps=eps, lam=lam)
    space = p.space(charges=(0, 1))
    return p, space, FockState.random(space, np.random.default_rng(seed))


def stepper(p, psi, path, kappa=0.5, substeps=4, greens=None):
    a = evolve_multitime(p, psi, path, kappa, substeps=substeps, greens=greens)
    b = evolve_multitime(p, psi, path, kappa, substeps=2 * substeps, greens=greens)
    return b, max(np.abs(a.blocks[k] - b.blocks[k]).max() / 15 for k in a.blocks)


def test_config_spacelike_predicate():
    p = make_params(L=12)
    spec = p.spec
    c = MultiTimeConfig((("x", 0.0, 0), ("xbar", 1.0, 3)))
    assert c.sector == Sector(1, 1, 0)
    assert c.is_spacelike(spec)
    c2 = MultiTimeConfig((("x", 0.0, 0), ("xbar", 3.0, 3)))
    assert c2.violating_pair(spec) == (0, 1)
    # equal times at distinct sites are always spacelike; coincident points are allowed
    assert MultiTimeConfig((("x", 1.0, 0), ("xbar", 1.0, 1))).is_spacelike(spec)
    same = MultiTimeConfig((("x", 1.0, 2), ("xbar", 1.0, 2)))
    assert same.is_spacelike(spec) and not same.collision_free()
    with pytest.raises(ValueError):
        MultiTimeConfig((("y", 0.0, 0), ("x", 0.0, 1)))


def test_zero_coupling_generator_is_free():
    p = make_params(L=6, lam=0.0, caps=(1, 1, 1))
    space = p.space()
    psi = FockState.random(space, np.random.default_rng(1))
    phi = MultiTimeState.from_fock(psi, 1)
    greens = Greens.exact(p)
    for sp, i in all_slots(space):
        for (sector, _), blk in apply_generator(p, greens, phi, (sp, i)).items():
            species = sector.slot_species()
            axes = [a for a, s in enumerate(species) if s == sp]
            if i >= len(axes):
                assert np.abs(blk).max() == 0
                continue
            ref = -1j * apply_on_axis(p.free[sp], psi.blocks[sector], axes[i])
            assert np.abs(blk - ref).max() < 1e-13


@pytest.mark.parametrize("eps", cons.SIGN_ASSIGNMENTS[::3])
def test_equal_time_reduction(eps):
    p = make_params(L=6, caps=(2, 2, 2), eps=eps)
    space = p.space(max_particles=4)
    psi = FockState.random(space, np.random.default_rng(2))
    phi = MultiTimeState.from_fock(psi, 1)
    greens = Greens.exact(p)
    total = FockState.zeros(space)
    for slot in all_slots(space):
        for (sector, _), blk in apply_generator(p, greens, phi, slot).items():
            total.blocks[sector] = total.blocks[sector] + blk
    assert (total + apply_H(p, psi) * 1j).norm() < 1e-12


def test_synchronous_path_matches_single_time():
    p, space, psi = minimal(L=8, seed=3)
    st = evolve_multitime(p, psi, [((0, 1), 4)], substeps=8)
    ref = single_time_reference(p, psi, 1.0)
    assert np.allclose(st.clocks, [1.0, 1.0])
    assert (st.equal_time_state(0) - ref).max_abs() < 1e-6
    with pytest.raises(ValueError):
        evolve_multitime(p, psi, [(0, 1)]).equal_time_state()


def test_path_independence_minimal_pair():
    p, space, psi = minimal(L=8, seed=4)
    greens = Greens.exact(p)
    finals, errs = [], []
    for path in ([(0, 4), (1, 2)], [(1, 2), (0, 4)]):
        fin, e = stepper(p, psi, path, greens=greens)
        finals.append(fin)
        errs.append(e)
    diff = max(np.abs(finals[0].blocks[k] - finals[1].blocks[k]).max() for k in finals[0].blocks)
    assert diff <= 10 * max(errs)


def test_kappa_independence_on_spacelike_targets():
    p, space, psi = minimal(L=16, seed=5)
    greens = Greens.exact(p)
    path = [(0, 4), (1, 2)]
    runs = {k: evolve_multitime(p, psi, path, k, substeps=8, greens=greens) for k in (0.0, 0.5, 1.0)}
    L, ds = p.spec.n_sites, p.ds
    dist = p.spec.offset_length[p.spec.displacement]
    far = dist >= 1.0 + 4.0

    def pair(st):
        return st.blocks[(Sector(1, 1, 0), (0, 1))].reshape(L, ds, L, ds).transpose(0, 2, 1, 3)

    ref = pair(runs[0.5])
    near = ~(dist > 1.0)
    d_far = max(np.abs(pair(runs[k]) - ref).max(axis=(2, 3))[far].max() for k in (0.0, 1.0))
    d_near = max(np.abs(pair(runs[k]) - ref).max(axis=(2, 3))[near].max() for k in (0.0, 1.0))
    # kappa only reshuffles interaction inside the light cone
    assert d_far < 1e-4 * d_near


def _spacelike_diff(a, b, L, ds, spec, margin):
    """Largest discrepancy over labelled entries separated by at least |dt| + margin."""
    dist = spec.offset_length[spec.displacement]
    worst = 0.0
    for (sector, labels), blk in a.blocks.items():
        n = len(labels)
        if n == 0:
            continue
        mask = np.ones((L,) * n, dtype=bool)
        for i, j in itertools.combinations(range(n), 2):
            dt = abs(a.clocks[labels[i]] - a.clocks[labels[j]])
            if dt > 1e-12:
                shape = [1] * n
                shape[i] = shape[j] = L
                mask &= (dist >= dt + margin).reshape(shape)
        d = np.abs(blk - b.blocks[(sector, labels)]).reshape(sum(((L, ds) for _ in labels), ()))
        d = d.max(axis=tuple(range(1, 2 * n, 2)))
        if mask.any():
            worst = max(worst, float(d[mask].max()))
    return worst


def test_sign_inconsistent_statistics_are_path_dependent():
    family = [Sector(0, 0, 2), Sector(1, 1, 1), Sector(2, 2, 0)]

    def run(eps):
        p = make_params(L=6, eps=eps, caps=(2, 2, 2))
        space = FockSpace(p.spec, p.ds, p.stats, family, (2, 2, 2))
        psi = FockState.random(space, np.random.default_rng(6))
        greens = Greens.exact(p)
        a, e1 = stepper(p, psi, [(0, 2), (1, 1)], substeps=2, greens=greens)
        b, e2 = stepper(p, psi, [(1, 1), (0, 2)], substeps=2, greens=greens)
        return _spacelike_diff(a, b, 6, p.ds, p.spec, 2.0), max(e1, e2)

    good, e_good = run((1, 1, 1))
    bad, e_bad = run((1, 1, -1))
    assert good <= 10 * e_good
    assert bad > 100 * e_bad and bad > 1000 * good


def test_path_error_leaving_spacelike_set():
    p, space, psi = minimal(L=8)
    cfg = MultiTimeConfig((("x", 0.0, 0), ("xbar", 0.0, 1)))
    with pytest.raises(PathError, match="spacelike"):
        evolve_multitime(p, psi, [(0, 8)], config=cfg, clock_of=(0, 1))
    # the same move is fine for a far-apart pair
    far = MultiTimeConfig((("x", 0.0, 0), ("xbar", 0.0, 4)))
    evolve_multitime(p, psi, [(0, 2)], substeps=1, config=far, clock_of=(0, 1))


def test_path_error_collision_rule():
    p, space, psi = minimal(L=8)
    cfg = MultiTimeConfig((("x", 0.0, 3), ("xbar", 0.0, 3)))
    with pytest.raises(PathError, match="collision"):
        evolve_multitime(p, psi, [(0, 1)], substeps=1, config=cfg, clock_of=(0, 1))
    # moving the coincident pair together is allowed
    evolve_multitime(p, psi, [((0, 1), 1)], substeps=1, config=cfg, clock_of=(0, 1))


def test_target_and_bad_moves():
    p, space, psi = minimal(L=8)
    with pytest.raises(PathError):
        evolve_multitime(p, psi, [(0, 1)], substeps=1, target=[0.5, 0.0])
    with pytest.raises(ValueError):
        evolve_multitime(p, psi, [(2, 1)], substeps=1)
    with pytest.raises(ValueError):
        evolve_multitime(p, psi, [(0, 1)], config=MultiTimeConfig((("x", 0.0, 0),)))
    assert clock_path([1.0, 0.5], [1, 0], 0.25) == [(1, 2), (0, 4)]


def test_backward_move_returns_initial_state():
    p, space, psi = minimal(L=8, seed=7)
    st = evolve_multitime(p, psi, [(0, 2), (0, -2)], substeps=8)
    start = MultiTimeState.from_fock(psi, 2)
    assert max(np.abs(st.blocks[k] - start.blocks[k]).max() for k in st.blocks) < 1e-6


def test_mask_matches_config_predicate():
    p, space, psi = minimal(L=8)
    st = evolve_multitime(p, psi, [(0, 4)], substeps=1)
    mask = st.spacelike_mask(Sector(1, 1, 0), (0, 1))
    for u in range(8):
        for v in range(8):
            cfg = MultiTimeConfig((("x", 1.0, u), ("xbar", 0.0, v)))
            assert mask[u, v] == cfg.is_spacelike(p.spec)
    amp = st.amplitude(MultiTimeConfig((("x", 1.0, 0), ("xbar", 0.0, 3))))
    blk = st.blocks[(Sector(1, 1, 0), (0, 1))].reshape(8, 2, 8, 2)
    assert np.array_equal(amp, blk[0, :, 3, :])
    with pytest.raises(ValueError):
        st.amplitude(MultiTimeConfig((("x", 0.7, 0), ("xbar", 0.0, 3))))


def test_csv_contains_only_spacelike_entries(tmp_path):
    p, space, psi = minimal(L=6)
    st = evolve_multitime(p, psi, [(0, 4)], substeps=1)
    path = tmp_path / "pair.csv"
    st.to_csv(path, Sector(1, 1, 0), (0, 1))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t0", "z0", "spin0", "t1", "z1", "spin1", "re", "im"]
    n_mask = int(st.spacelike_mask(Sector(1, 1, 0), (0, 1)).sum())
    assert len(rows) - 1 == n_mask * 4
    for r in rows[1:]:
        cfg = MultiTimeConfig((("x", float(r[0]), int(r[1])), ("xbar", float(r[3]), int(r[4]))))
        assert cfg.is_spacelike(p.spec)


def test_annihilation_operator_representation():
    p = make_params(L=4, caps=(1, 1, 1))
    sectors = [Sector(0, 0, 0), Sector(1, 0, 0), Sector(0, 0, 1), Sector(1, 1, 0)]
    big = FockSpace(p.spec, p.ds, p.stats, sectors, (1, 1, 1))
    small = p.space(charges=(0, 1))
    psi = FockState.random(small, np.random.default_rng(8))
    psi_big = FockState.zeros(big)
    for s in small.sectors:
        psi_big.blocks[s] = psi.blocks[s].copy()
    st = evolve_multitime(p, psi, [((0, 1), 2)], substeps=8)
    for sector, labels in ((Sector(1, 1, 0), (0, 1)), (Sector(0, 0, 1), (0,))):
        ref = vacuum_expectation_amplitude(p, big, psi_big, sector, [0.5] * sector.n)
        assert np.abs(st.blocks[(sector, labels)] - ref).max() < 1e-6
    with pytest.raises(ValueError):
        vacuum_expectation_amplitude(p, big, psi_big, Sector(1, 1, 0), [0.5])


def test_charge_conservation_multitime():
    p, space, psi = minimal(L=6, seed=9)
    for s in space.sectors:
        if s != Sector(0, 0, 1):
            psi.blocks[s][:] = 0
    big = p.space(charges=(0, 1, 2), caps=(2, 2, 2))
    psi2 = FockState.zeros(big)
    psi2.blocks[Sector(0, 0, 1)] = psi.blocks[Sector(0, 0, 1)]
    st = evolve_multitime(p.with_(caps=(2, 2, 2)), psi2, [(0, 2), (1, 1)], substeps=2)
    for (sector, _), blk in st.blocks.items():
        if sector.charges != (0, 1):
            assert np.abs(blk).max() == 0
