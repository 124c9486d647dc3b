"""Acceptance checks at desk scale, one function per criterion.

Each check returns a :class:`Check` with the measured value and the
threshold it was compared against.  ``run_all`` is what ``selftest`` runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import consistency as cons
from .fock import FockSpace, FockState, Sector
from .green import compute_green, spacelike_abs_max, spacelike_residual
from .multi import Greens, MultiTimeState, all_slots, apply_generator, evolve_multitime, vacuum_expectation_amplitude
from .single import apply_H, apply_H_ladder, evolve_single, make_params

# regression value of the normalized spacelike G tail at margin 6 (L=64, m=1, T=8)
GREEN_TAIL_MARGIN6 = 1.1284009e-4


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: value={self.value:.3e} threshold={self.threshold:.3e} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        out.seconds = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def equal_time_reduction(n_states: int = 20, L: int = 12, seed: int = 0) -> Check:
    """Sum of all slot generators at equal times equals ``-i H`` on caps (2,2,2)."""
    worst = 0.0
    rng = np.random.default_rng(seed)
    signs = cons.SIGN_ASSIGNMENTS
    for k in range(n_states):
        params = make_params(L=L, caps=(2, 2, 2), eps=signs[k % len(signs)])
        space = params.space(max_particles=4)
        psi = FockState.random(space, rng)
        phi = MultiTimeState.from_fock(psi, 1)
        greens = Greens.exact(params)
        total = FockState.zeros(space)
        for slot in all_slots(space):
            for (sector, _), blk in apply_generator(params, greens, phi, slot).items():
                total.blocks[sector] = total.blocks[sector] + blk
        worst = max(worst, (total + apply_H(params, psi) * 1j).norm())
    return Check("1 equal-time reduction", worst <= 1e-12, worst, 1e-12,
                 {"states": n_states, "L": L, "max_particles": 4})


@_timed
def sign_rule(L: int = 12, seed: int = 0, factor: float = 100.0) -> Check:
    """Verdict table plus measured y-y residual against the consistency budget."""
    params = make_params(L=L, lam=0.5)
    rep = cons.consistency_report(params, seed)
    verdict_ok = {tuple(r["eps"]) for r in rep["assignments"] if r["verdict"]} == {
        (1, 1, 1), (-1, -1, 1), (-1, 1, -1), (1, -1, -1)}
    below = [r["residual"] <= r["budget"] for r in rep["assignments"] if r["verdict"]]
    above = [r["residual"] >= factor * r["budget"] for r in rep["assignments"] if not r["verdict"]]
    worst_ratio = min(r["residual"] / r["budget"] for r in rep["assignments"] if not r["verdict"])
    ok = verdict_ok and all(below) and all(above)
    return Check("2 sign rule", ok, worst_ratio, factor, {"report": rep})


@_timed
def closed_form_crosscheck(L: int = 12, n_probes: int = 10, seed: int = 1) -> Check:
    """Brute-force vs closed-form y-y commutator on random probes, every sign assignment."""
    worst = 0.0
    family = [(0, 0, 2), (1, 1, 1), (2, 2, 0)]
    for eps in cons.SIGN_ASSIGNMENTS:
        params = make_params(L=L, eps=eps)
        rng = np.random.default_rng(seed)
        phi = cons.RandomAmplitude(params, seed, family)
        greens = Greens.exact(params)
        for cfg in cons.random_probes(params.spec, rng, ("y", "y"), n_probes, 0.0, 1.0):
            bf = cons.commutator_bruteforce(params, phi, cfg, 0, 1, greens=greens)
            cf = cons.commutator_yy_closed_form(params, phi, cfg, 0, 1)
            worst = max(worst, float(np.abs(bf - cf).max()))
    return Check("3 closed-form y-y commutator", worst <= 1e-10, worst, 1e-10)


@_timed
def xxbar_order(L: int = 12, n_probes: int = 6, seed: int = 2, kappa: float = 0.3) -> Check:
    """Observed order of the x-xbar residual under h -> h/2."""
    params = make_params(L=L)
    rng = np.random.default_rng(seed)
    phi = cons.RandomAmplitude(params, seed, [(0, 0, 2), (1, 1, 1), (2, 2, 0)])
    greens = Greens.exact(params)
    probes = cons.random_probes(params.spec, rng, ("x", "xbar", "y"), n_probes, 0.0, 1.0)
    h = params.spec.dt
    r1 = cons.probe_residual(params, phi, probes, (0, 1), kappa, greens, h)
    r2 = cons.probe_residual(params, phi, probes, (0, 1), kappa, greens, h / 2)
    order = math.log2(r1 / r2)
    return Check("4 x-xbar commutator order", order >= 1.8, order, 1.8, {"res_h": r1, "res_h2": r2})


@_timed
def xy_margin_decay(L: int = 64, T: float = 8.0, seed: int = 3) -> Check:
    """Normalized x-y / xbar-y residual over margins 2, 4, 6."""
    params = make_params(L=L)
    scan = cons.margin_scan(params, seed, (2.0, 4.0, 6.0), t_max=T)
    mono = all(np.all(np.diff(scan[k]) < 0) for k in ("xy", "xbary"))
    at4 = max(scan["xy"][1], scan["xbary"][1])
    return Check("5 x-y commutator light cone", mono and at4 <= 1e-2, at4, 1e-2, scan)


@_timed
def green_light_cone(L: int = 64, T: float = 8.0) -> Check:
    """Normalized spacelike residual of G at margin 6."""
    params = make_params(L=L)
    table = compute_green(params, T, "G")
    res = {m: spacelike_residual(table, m) for m in (2.0, 4.0, 6.0)}
    frozen = abs(res[6.0] - GREEN_TAIL_MARGIN6) <= 1e-6 * GREEN_TAIL_MARGIN6
    return Check("6 Green light cone", res[6.0] <= 1e-3 and frozen, res[6.0], 1e-3,
                 {"residual_by_margin": res, "frozen": GREEN_TAIL_MARGIN6})


def _minimal_setup(L, seed, eps=(1, 1, 1)):
    params = make_params(L=L, caps=(1, 1, 1), eps=eps)
    space = params.space(charges=(0, 1))
    psi = FockState.random(space, np.random.default_rng(seed))
    return params, space, psi


PAIR_BLOCK = (Sector(1, 1, 0), (0, 1))


def _pair_block(state, L, ds):
    return state.blocks[PAIR_BLOCK].reshape(L, ds, L, ds).transpose(0, 2, 1, 3)


def _stepper_error(params, psi, path, kappa, substeps, greens):
    """Richardson estimate of the RK4 error of the finer of two runs (h and h/2)."""
    a = evolve_multitime(params, psi, path, kappa, substeps=substeps, greens=greens)
    b = evolve_multitime(params, psi, path, kappa, substeps=2 * substeps, greens=greens)
    err = {k: np.abs(a.blocks[k] - b.blocks[k]).max() / 15 for k in a.blocks}
    return b, max(err.values())


@_timed
def kappa_independence(L: int = 24, seed: int = 4, margin: float = 2.0, substeps: int = 4) -> Check:
    """Amplitudes at spacelike targets for kappa in {0, 1/2, 1}."""
    params, space, psi = _minimal_setup(L, seed)
    greens = Greens.exact(params)
    path = [(0, 4), (1, 2)]  # x-clock to 1.0, then xbar-clock to 0.5
    max_dt = 1.0
    runs, errs = {}, []
    for kappa in (0.0, 0.5, 1.0):
        runs[kappa], e = _stepper_error(params, psi, path, kappa, substeps, greens)
        errs.append(e)
    spec = params.spec
    dist = spec.offset_length[spec.displacement]
    sel = (dist >= max_dt + margin) & (dist > max_dt)
    ref = _pair_block(runs[0.5], L, params.ds)
    diff = max(float(np.abs(_pair_block(runs[k], L, params.ds) - ref).max(axis=(2, 3))[sel].max())
               for k in (0.0, 1.0))
    duration = 1.5
    tab = compute_green(params, max_dt, "G"), compute_green(params, max_dt, "Gbar")
    gtail = max(spacelike_abs_max(t, margin) for t in tab)
    phi_y = float(np.abs(psi.blocks[Sector(0, 0, 1)]).max())
    tail = duration * params.ds * gtail * phi_y
    budget = 2 * max(errs) + tail
    return Check("7 kappa independence", diff <= budget, diff, budget,
                 {"stepper": max(errs), "tail": tail, "margin": margin})


@_timed
def path_independence(L: int = 12, seed: int = 5, substeps: int = 4) -> Check:
    """Two admissible paths to the same target, product of exchange signs +1."""
    params, space, psi = _minimal_setup(L, seed)
    greens = Greens.exact(params)
    paths = [[(0, 4), (1, 2)], [(1, 2), (0, 4)], [(0, 2), (1, 2), (0, 2)]]
    finals, errs = [], []
    for p in paths:
        fin, e = _stepper_error(params, psi, p, 0.5, substeps, greens)
        finals.append(fin)
        errs.append(e)
    diff = max(float(np.abs(f.blocks[k] - finals[0].blocks[k]).max())
               for f in finals[1:] for k in f.blocks)
    bound = 10 * max(errs)
    return Check("8 path independence", diff <= bound, diff, bound, {"stepper": max(errs)})


@_timed
def unitarity_and_dual_H(L: int = 12, seed: int = 6, t: float = 2.0) -> Check:
    """Exact-exponential norm drift and agreement of the two H implementations."""
    rng = np.random.default_rng(seed)
    params = make_params(L=L, caps=(1, 1, 1))
    space = params.space()
    dual = 0.0
    for _ in range(3):
        psi = FockState.random(space, rng)
        dual = max(dual, (apply_H(params, psi) - apply_H_ladder(params, psi)).max_abs())
    _, _, psi = _minimal_setup(L, seed)
    ev = evolve_single(params, psi, t, steps=8)
    drift = float(np.abs(ev.norms - ev.norms[0]).max())
    ok = drift <= 1e-8 and dual <= 1e-12
    return Check("9 unitarity and dual H", ok, max(drift, dual), 1e-12 if dual > drift else 1e-8,
                 {"norm_drift": drift, "dual_H": dual})


@_timed
def covariant_equivalence(L: int = 12, n_samples: int = 100, seed: int = 7) -> Check:
    """gamma0 times the evolution operator equals the covariant form on random samples."""
    params = make_params(L=L, eps=(-1, -1, 1))
    rng = np.random.default_rng(seed)
    phi = cons.RandomAmplitude(params, seed, [(0, 0, 2), (1, 1, 1), (2, 2, 0)])
    layouts = [("y", "y"), ("x", "xbar", "y"), ("x", "x", "xbar", "xbar")]
    samples = []
    for k in range(n_samples):
        samples += cons.random_probes(params.spec, rng, layouts[k % 3], 1, 0.0, 1.0)
    res = cons.check_covariant_equivalence(params, phi, samples)
    return Check("10 covariant form", res <= 1e-12, res, 1e-12, {"samples": n_samples})


@_timed
def annihilation_representation(L: int = 8, seed: int = 8, t: float = 1.0, substeps: int = 8) -> Check:
    """Vacuum expectation of Heisenberg annihilators vs multi-time evolution at equal times."""
    params = make_params(L=L, caps=(1, 1, 1))
    sectors = [Sector(0, 0, 0), Sector(1, 0, 0), Sector(0, 0, 1), Sector(1, 1, 0)]
    big = FockSpace(params.spec, params.ds, params.stats, sectors, (1, 1, 1))
    small = params.space(charges=(0, 1))
    psi = FockState.random(small, np.random.default_rng(seed))
    psi_big = FockState.zeros(big)
    for s in small.sectors:
        psi_big.blocks[s] = psi.blocks[s].copy()
    nsteps = int(round(t / params.spec.dt))
    st = evolve_multitime(params, psi, [((0, 1), nsteps)], substeps=substeps)
    worst = 0.0
    for sector, labels in ((Sector(1, 1, 0), (0, 1)), (Sector(0, 0, 1), (0,))):
        ref = vacuum_expectation_amplitude(params, big, psi_big, sector, [t] * sector.n)
        worst = max(worst, float(np.abs(st.blocks[(sector, labels)] - ref).max()))
    return Check("11 annihilation-operator representation", worst <= 1e-6, worst, 1e-6, {"t": t, "L": L})


ALL = (equal_time_reduction, sign_rule, closed_form_crosscheck, xxbar_order, xy_margin_decay,
       green_light_cone, kappa_independence, path_independence, unitarity_and_dual_H,
       covariant_equivalence, annihilation_representation)


def run_all(verbose: bool = True) -> list:
    results = []
    for fn in ALL:
        r = fn()
        results.append(r)
        if verbose:
            print(r.line(), flush=True)
    return results


def summarize(results) -> dict:
    out = []
    for r in results:
        d = asdict(r)
        d.pop("detail")
        out.append(d)
    return {"passed": all(r.passed for r in results), "criteria": out}
