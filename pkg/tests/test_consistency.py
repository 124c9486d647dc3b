import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitime import consistency as cons
from multitime.consistency import (CollisionError, Particle, RandomAmplitude, commutator_bruteforce,
                                   commutator_yy_closed_form, make_config)
from multitime.lattice import SpeciesStatistics
from multitime.multi import Greens
from multitime.single import make_params, random_coupling

FAMILY = [(0, 0, 2), (1, 1, 1), (2, 2, 0)]


def test_make_config_and_helpers():
    cfg = make_config([("x", 0.0, 1), ("xbar", 0.5, 4), ("y", 0.25, 7)])
    assert [p.pid for p in cfg] == [0, 1, 2]
    assert cons.sector_of(cfg) == (1, 1, 1)
    assert cons.position(cfg, 2) == 2 and cons.position(cfg, 9) is None
    with pytest.raises(ValueError):
        make_config([("y", 0.0, 1), ("x", 0.0, 2)])


def test_spacelike_with_margin():
    spec = make_params(L=12).spec
    cfg = make_config([("y", 0.0, 0), ("y", 1.0, 3)])
    assert cons.is_spacelike(cfg, spec)
    assert cons.is_spacelike(cfg, spec, margin=2.0)
    assert not cons.is_spacelike(cfg, spec, margin=2.5)
    assert not cons.is_spacelike(make_config([("y", 0.0, 0), ("y", 1.0, 1)]), spec)


def test_zero_coupling_commutes():
    p = make_params(L=12, lam=0.0, eps=(1, 1, -1))
    phi = RandomAmplitude(p, 0, FAMILY)
    greens = Greens.exact(p)
    rng = np.random.default_rng(0)
    for layout, pair in ((("y", "y"), (0, 1)), (("x", "xbar", "y"), (0, 1)), (("x", "xbar", "y"), (0, 2))):
        probes = cons.random_probes(p.spec, rng, layout, 3, 2.0)
        # free parts on distinct particles commute exactly, even at finite h
        assert cons.probe_residual(p, phi, probes, pair, greens=greens) < 1e-12


@pytest.mark.parametrize("eps", cons.SIGN_ASSIGNMENTS)
def test_closed_form_sign_factor(eps):
    p = make_params(L=12, eps=eps)
    phi = RandomAmplitude(p, 1, FAMILY)
    cfg = make_config([("y", 0.0, 0), ("y", 0.5, 5)])
    cf = commutator_yy_closed_form(p, phi, cfg, 0, 1)
    if eps[0] * eps[1] * eps[2] == 1:
        assert np.abs(cf).max() == 0
    else:
        assert np.abs(cf).max() > 1e-3
        bf = commutator_bruteforce(p, phi, cfg, 0, 1)
        assert np.abs(bf - cf).max() < 1e-12 * max(1.0, np.abs(cf).max())


def test_closed_form_matches_bruteforce_random_coupling():
    p = make_params(L=10, eps=(-1, 1, 1), g=random_coupling(2, np.random.default_rng(3)))
    phi = RandomAmplitude(p, 2, FAMILY)
    for cfg in cons.random_probes(p.spec, np.random.default_rng(4), ("y", "y"), 4, 1.0):
        cf = commutator_yy_closed_form(p, phi, cfg, 0, 1)
        bf = commutator_bruteforce(p, phi, cfg, 0, 1)
        assert np.abs(bf - cf).max() < 1e-12


def test_closed_form_argument_errors():
    p = make_params(L=12, eps=(1, 1, -1))
    phi = RandomAmplitude(p, 0, FAMILY)
    with pytest.raises(ValueError):
        commutator_yy_closed_form(p, phi, make_config([("x", 0.0, 0), ("xbar", 0.0, 3), ("y", 0.0, 6)]), 0, 1)
    with pytest.raises(ValueError):
        commutator_yy_closed_form(p, phi, make_config([("y", 0.0, 0), ("y", 0.0, 5)]), 1, 0)


def test_collision_and_probe_errors():
    p = make_params(L=12)
    phi = RandomAmplitude(p, 0, FAMILY)
    with pytest.raises(CollisionError):
        commutator_bruteforce(p, phi, make_config([("y", 0.5, 2), ("y", 0.5, 2)]), 0, 1)
    with pytest.raises(ValueError):
        commutator_bruteforce(p, phi, make_config([("y", 0.0, 2), ("y", 1.0, 3)]), 0, 1)
    with pytest.raises(ValueError):
        commutator_bruteforce(p, phi, make_config([("y", 0.0, 2), ("y", 0.0, 6)]), 0, 0)


def test_verdict_table():
    ok, table = cons.consistency_verdict(SpeciesStatistics(-1, -1, 1))
    assert ok
    assert len(table) == 8
    consistent = {tuple(r["eps"]) for r in table if r["consistent"]}
    assert consistent == {(1, 1, 1), (-1, -1, 1), (-1, 1, -1), (1, -1, -1)}
    assert all(r["fermionic_species"] % 2 == 0 for r in table if r["consistent"])
    assert not cons.consistency_verdict((1, 1, -1))[0]


def test_xxbar_residual_is_second_order():
    p = make_params(L=12)
    phi = RandomAmplitude(p, 3, FAMILY)
    probes = cons.random_probes(p.spec, np.random.default_rng(3), ("x", "xbar", "y"), 3, 3.0)
    greens = Greens.exact(p)
    r1 = cons.probe_residual(p, phi, probes, (0, 1), 0.3, greens, 0.25)
    r2 = cons.probe_residual(p, phi, probes, (0, 1), 0.3, greens, 0.125)
    assert math.log2(r1 / r2) >= 1.8


def test_yy_report_separates_assignments():
    bad = cons.yy_report(make_params(L=12, eps=(1, 1, -1)), 0, n_probes=2)
    good = cons.yy_report(make_params(L=12, eps=(1, 1, 1)), 0, n_probes=2)
    assert good["verdict"] and not bad["verdict"]
    assert good["residual"] <= good["budget"]
    assert bad["residual"] >= 100 * bad["budget"]


def test_margin_scan_decreases():
    scan = cons.margin_scan(make_params(L=40), 0, margins=(2.0, 4.0, 6.0), n_probes=2, t_max=4.0)
    for key in ("xy", "xbary"):
        vals = scan[key]
        assert all(b < a for a, b in zip(vals, vals[1:]))


def test_boundary_probes_sit_on_margin():
    spec = make_params(L=24).spec
    for cfg in cons.boundary_probes(spec, np.random.default_rng(5), ("x", "xbar", "y"), (0, 2), 3.0, 5, 2.0):
        sep = spec.distance(cfg[0].site, cfg[2].site)
        need = abs(cfg[0].t - cfg[2].t) + 3.0
        assert need <= sep < need + spec.a
        assert cons.is_spacelike(cfg, spec, 3.0)


@pytest.mark.parametrize("lam", [0.0, 0.5])
def test_covariant_form_matches(lam):
    p = make_params(L=12, eps=(-1, -1, 1), lam=lam)
    phi = RandomAmplitude(p, 4, FAMILY)
    rng = np.random.default_rng(4)
    configs = []
    for layout in (("y", "y"), ("x", "xbar", "y"), ("x", "x", "xbar", "xbar")):
        configs += cons.random_probes(p.spec, rng, layout, 2, 0.0)
    assert cons.check_covariant_equivalence(p, phi, configs) < 1e-12


def test_tilde_coupling_by_hand():
    g = random_coupling(2, np.random.default_rng(6))
    p = make_params(L=4, g=g)
    G = np.random.default_rng(7).standard_normal((4, 2, 2, 2)) + 0j
    tGbar, tG, gplus = cons.tilde_couplings(p, G, G)
    # gamma0 = diag(1, -1) in this representation
    assert np.allclose(gplus[:, :, 0], g[:, :, 0].conj())
    assert np.allclose(gplus[:, :, 1], -g[:, :, 1].conj())
    assert np.allclose(tGbar[:, 0], G[:, 0]) and np.allclose(tGbar[:, 1], -G[:, 1])
    assert np.allclose(tG[:, :, 0], G[:, :, 0]) and np.allclose(tG[:, :, 1], -G[:, :, 1])


def test_consistency_report_shape():
    rep = cons.consistency_report(make_params(L=12), 0, n_probes=1)
    assert len(rep["assignments"]) == 8 and rep["n_consistent"] == 4
    assert rep["agrees"]
    assert '"n_consistent": 4' in cons.dumps(rep)


@settings(max_examples=30, deadline=None)
@given(eps=st.sampled_from(cons.SIGN_ASSIGNMENTS), seed=st.integers(0, 2**32 - 1),
       t=st.lists(st.sampled_from([0.0, 0.25, 0.5]), min_size=4, max_size=4),
       u=st.lists(st.integers(0, 7), min_size=4, max_size=4, unique=True))
def test_random_amplitude_exchange_symmetry(eps, seed, t, u):
    p = make_params(L=8, eps=eps)
    phi = RandomAmplitude(p, seed, FAMILY)
    cfg = make_config([("x", t[0], u[0]), ("x", t[1], u[1]), ("xbar", t[2], u[2]), ("xbar", t[3], u[3])])
    swapped = (cfg[1], cfg[0]) + cfg[2:]
    a, b = phi(cfg), phi(swapped)
    assert np.allclose(b, eps[0] * np.swapaxes(a, 0, 1))
    swapped = cfg[:2] + (cfg[3], cfg[2])
    assert np.allclose(phi(swapped), eps[1] * np.swapaxes(a, 2, 3))
    assert np.array_equal(phi(cfg), a)
    other = make_config([("y", t[0], u[0])])
    assert np.abs(phi(other)).max() == 0


def test_absent_particle_gives_zero():
    p = make_params(L=8)
    calc = cons.Calculus(p, Greens.exact(p))
    phi = RandomAmplitude(p, 0, FAMILY)
    cfg = make_config([("y", 0.0, 0), ("y", 0.0, 4)])
    assert np.abs(calc.D(99, phi)(cfg)).max() == 0
    assert isinstance(cfg[0], Particle)
