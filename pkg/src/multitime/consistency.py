"""Pointwise commutator calculus for the per-particle evolution operators.

An amplitude is any callable mapping a configuration (tuple of
:class:`Particle`, ordered x-block, xbar-block, y-block) to a spin tensor with
one axis per particle.  ``D_p = i d/dt_p - H_p`` is realized lazily on such
callables, so commutators are evaluated only at the probed configurations.
Time derivatives are centered differences with step ``h``; applied to the
Green functions they carry the only discretization error.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from typing import NamedTuple

import numpy as np

from .fock import Sector, _within_species_permutations, species_index
from .green import compute_green, spacelike_abs_max
from .lattice import SpeciesStatistics
from .multi import Greens

_fresh = itertools.count(1_000_000)


class Particle(NamedTuple):
    species: int
    t: float
    site: int
    pid: int


class CollisionError(ValueError):
    """Probed pair collides (same time and site)."""


def make_config(particles) -> tuple:
    """Configuration from ``(species, t, site)`` triples, ids numbered in order."""
    out = tuple(Particle(species_index(sp), float(t), int(u), i) for i, (sp, t, u) in enumerate(particles))
    if [p.species for p in out] != sorted(p.species for p in out):
        raise ValueError("particles must be ordered x, xbar, y")
    return out


def sector_of(config) -> Sector:
    sp = [p.species for p in config]
    return Sector(sp.count(0), sp.count(1), sp.count(2))


def position(config, pid) -> int | None:
    for i, p in enumerate(config):
        if p.pid == pid:
            return i
    return None


def is_spacelike(config, spec, margin: float = 0.0) -> bool:
    """Pairwise ``dist >= |dt| + margin`` and ``dist > |dt|``, or exact coincidence."""
    for p, q in itertools.combinations(config, 2):
        dt = abs(p.t - q.t)
        if dt < 1e-12 and p.site == q.site:
            continue
        dist = spec.distance(p.site, q.site)
        if not (dist > dt + 1e-12 and dist >= dt + margin - 1e-12):
            return False
    return True


def _on_axis(mat, tensor, axis):
    return np.moveaxis(np.tensordot(mat, tensor, axes=([1], [axis])), 0, axis)


class RandomAmplitude:
    """Seeded random amplitude with the exchange symmetry of each species.

    Values are hashed from (seed, sector, rounded times and sites), so the same
    configuration always yields the same tensor.  Sectors outside ``sectors``
    are identically zero.
    """

    def __init__(self, params, seed: int, sectors):
        self.stats: SpeciesStatistics = params.stats
        self.ds = params.ds
        self.seed = int(seed)
        self.sectors = {Sector(*s) for s in sectors}
        self._cache = {}
        self.max_seen = 0.0

    def _raw(self, sector, key):
        digest = hashlib.blake2b(repr((self.seed, tuple(sector), key)).encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        shape = (self.ds,) * sector.n
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    def __call__(self, config) -> np.ndarray:
        sector = sector_of(config)
        n = len(config)
        if sector not in self.sectors:
            return np.zeros((self.ds,) * n, dtype=complex)
        key = tuple((round(p.t, 9), p.site) for p in config)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        acc = np.zeros((self.ds,) * n, dtype=complex)
        perms = list(_within_species_permutations(sector, self.stats))
        for perm, sign in perms:
            raw = self._raw(sector, tuple(key[i] for i in perm))
            acc += sign * np.transpose(raw, np.argsort(perm))
        out = acc / len(perms)
        self.max_seen = max(self.max_seen, float(np.abs(out).max()))
        self._cache[key] = out
        return out


class Calculus:
    """Lazy ``D_p`` operators with Green functions from ``greens`` and time step ``h``."""

    def __init__(self, params, greens: Greens, kappa: float = 0.5, h: float | None = None):
        self.params, self.greens, self.kappa = params, greens, kappa
        self.h = params.spec.dt if h is None else h
        self.spec, self.ds = params.spec, params.ds

    def zeros(self, config):
        return np.zeros((self.ds,) * len(config), dtype=complex)

    # pieces of D_p, each a map (amplitude, config, axis) -> tensor
    def time_derivative(self, psi, config, i):
        h = self.h
        up = config[:i] + (config[i]._replace(t=config[i].t + h),) + config[i + 1:]
        dn = config[:i] + (config[i]._replace(t=config[i].t - h),) + config[i + 1:]
        return (psi(up) - psi(dn)) / (2 * h)

    def free(self, psi, config, i):
        p = config[i]
        alg, spec = self.params.algebra, self.spec
        out = self.params.stats.mass_of(p.species) * _on_axis(alg.beta, psi(config), i)
        for ax, al in enumerate(alg.alpha):
            fwd = config[:i] + (p._replace(site=spec.shift(p.site, ax, +1)),) + config[i + 1:]
            bwd = config[:i] + (p._replace(site=spec.shift(p.site, ax, -1)),) + config[i + 1:]
            out = out - 1j * _on_axis(al, (psi(fwd) - psi(bwd)) / (2 * spec.a), i)
        return out

    def interaction(self, psi, config, i, gbar_tensor=None, g_tensor=None, gconj=None):
        """Right-hand-side coupling term for particle ``i``.

        The optional arrays replace ``Gbar``/``G`` slices (as callables of
        ``(dt, z)``) or ``conj(g)`` so the covariant variant can reuse the
        bookkeeping with modified coefficients.
        """
        M, Mb, N = sector_of(config)
        ex, eb, ey = self.params.stats.eps
        p = config[i]
        out = self.zeros(config)
        disp = self.spec.displacement
        if p.species in (0, 1):
            if M == 0 or Mb == 0:
                return out
            pref = math.sqrt((N + 1) / (M * Mb)) * ey**N
            if p.species == 0:
                weight = self.kappa
                partners = range(M, M + Mb)
            else:
                weight = 1.0 - self.kappa
                partners = range(0, M)
            if weight == 0:
                return out
            for o in partners:
                ix, ib = (i, o) if p.species == 0 else (o, i)
                px, pb = config[ix], config[ib]
                if p.species == 0:
                    coeff = (gbar_tensor or self._gbar)(pb.t - px.t, disp[pb.site, px.site])
                    new = Particle(2, px.t, px.site, next(_fresh))
                else:
                    coeff = (g_tensor or self._g)(px.t - pb.t, disp[px.site, pb.site])
                    new = Particle(2, pb.t, pb.site, next(_fresh))
                rest = tuple(q for k, q in enumerate(config) if k not in (ix, ib)) + (new,)
                term = np.einsum("abs,...s->...ab", coeff, psi(rest))
                term = np.moveaxis(term, [-2, -1], [ix, ib])
                sign = ex ** (ix + 2) * eb ** (ib - M + 2)
                out = out + weight * pref * sign * term
            return out
        k = i - M - Mb + 1
        gc = self.params.g.conj() if gconj is None else gconj
        nx = Particle(0, p.t, p.site, next(_fresh))
        nb = Particle(1, p.t, p.site, next(_fresh))
        rest = config[:M] + (nx,) + config[M:M + Mb] + (nb,) + tuple(
            q for kk, q in enumerate(config[M + Mb:]) if kk != k - 1)
        T = np.moveaxis(psi(rest), [M, M + 1 + Mb], [-2, -1])
        term = np.moveaxis(np.einsum("...ab,abs->...s", T, gc), -1, i)
        pref = math.sqrt((M + 1) * (Mb + 1) / N) * ex**M * eb**Mb * ey ** (k + 1)
        return pref * term

    def _g(self, dt, z):
        return self.greens.G.slice(dt)[z]

    def _gbar(self, dt, z):
        return self.greens.Gbar.slice(dt)[z]

    def D(self, pid, psi):
        """The operator ``i d/dt_p - H_p`` applied to ``psi``; zero where ``p`` is absent."""

        def out(config):
            i = position(config, pid)
            if i is None:
                return self.zeros(config)
            return (1j * self.time_derivative(psi, config, i) - self.free(psi, config, i)
                    - self.interaction(psi, config, i))

        return out

    def commutator(self, p, q, psi):
        Dp_Dq = self.D(p, self.D(q, psi))
        Dq_Dp = self.D(q, self.D(p, psi))
        return lambda config: Dp_Dq(config) - Dq_Dp(config)


def _check_probe(config, p, q, spec):
    ip, iq = position(config, p), position(config, q)
    if ip is None or iq is None or p == q:
        raise ValueError("both probed particles must be distinct members of the configuration")
    a, b = config[ip], config[iq]
    if abs(a.t - b.t) < 1e-12 and a.site == b.site:
        raise CollisionError(f"particles {ip} and {iq} collide at t={a.t}, site={a.site}")
    if not is_spacelike(config, spec):
        raise ValueError("probe configuration is not spacelike")


def commutator_bruteforce(params, phi, config, p: int, q: int, kappa: float = 0.5,
                          greens: Greens | None = None, h: float | None = None) -> np.ndarray:
    """``[D_p, D_q] phi`` at ``config``; ``p, q`` are positions in ``config``."""
    _check_probe(config, config[p].pid, config[q].pid, params.spec)
    calc = Calculus(params, greens or Greens.exact(params), kappa, h)
    return calc.commutator(config[p].pid, config[q].pid, phi)(config)


def commutator_yy_closed_form(params, phi, config, k: int, l: int) -> np.ndarray:
    """Closed form of the y-y commutator; ``k < l`` are 0-based indices inside the y-block."""
    M, Mb, N = sector_of(config)
    if N < 2:
        raise ValueError("the y-y commutator needs at least two y-particles")
    if not 0 <= k < l < N:
        raise ValueError(f"need 0 <= k < l < N, got k={k}, l={l}, N={N}")
    ex, eb, ey = params.stats.eps
    yk, yl = config[M + Mb + k], config[M + Mb + l]
    new = [Particle(0, yk.t, yk.site, -1), Particle(0, yl.t, yl.site, -2),
           Particle(1, yk.t, yk.site, -3), Particle(1, yl.t, yl.site, -4)]
    rest = tuple(q for kk, q in enumerate(config[M + Mb:]) if kk not in (k, l))
    arg = config[:M] + tuple(new[:2]) + config[M:M + Mb] + tuple(new[2:]) + rest
    T = phi(arg)
    T = np.moveaxis(T, [M, M + 1, M + 2 + Mb, M + 3 + Mb], [-4, -3, -2, -1])
    gc = params.g.conj()
    out = np.einsum("...acbd,abs,cdu->...su", T, gc, gc)
    out = np.moveaxis(out, [-2, -1], [M + Mb + k, M + Mb + l])
    P = math.sqrt((M + 1) * (M + 2) * (Mb + 1) * (Mb + 2) / (N * (N - 1)))
    sign = ey ** (k + l + 2) * (ex * eb * ey - 1)
    return P * sign * out


# -- sign rule --------------------------------------------------------------

SIGN_ASSIGNMENTS = tuple(itertools.product((1, -1), repeat=3))


def consistency_verdict(stats) -> tuple:
    """``(consistent, report)``: consistent iff the product of exchange signs is +1."""
    eps = stats.eps if isinstance(stats, SpeciesStatistics) else tuple(stats)
    report = []
    for e in SIGN_ASSIGNMENTS:
        n_fermions = sum(1 for v in e if v == -1)
        report.append({"eps": list(e), "fermionic_species": n_fermions,
                       "consistent": bool(e[0] * e[1] * e[2] == 1)})
    return bool(eps[0] * eps[1] * eps[2] == 1), report


# -- covariant form ---------------------------------------------------------

def tilde_couplings(params, Gbar_slice, G_slice):
    """Gamma0-dressed Green slices and coupling: (tilde Gbar, tilde G, g^+)."""
    g0 = params.algebra.gamma0
    tGbar = np.einsum("rq,zqbs->zrbs", g0, Gbar_slice)
    tG = np.einsum("bq,zrqs->zrbs", g0, G_slice)
    gplus = np.einsum("su,abu->abs", g0, params.g.conj())
    return tGbar, tG, gplus


def covariant_operator(calc: Calculus, pid, psi):
    """``(i gamma^mu d_mu - m) psi - RHS~`` for particle ``pid`` with tilde coefficients."""
    params = calc.params
    alg, spec = params.algebra, params.spec
    g0 = alg.gamma0

    def tgbar(dt, z):
        return np.einsum("rq,qbs->rbs", g0, calc.greens.Gbar.slice(dt)[z])

    def tg(dt, z):
        return np.einsum("bq,rqs->rbs", g0, calc.greens.G.slice(dt)[z])

    gplus = np.einsum("su,abu->abs", g0, params.g.conj())

    def out(config):
        i = position(config, pid)
        if i is None:
            return calc.zeros(config)
        p = config[i]
        val = 1j * _on_axis(g0, calc.time_derivative(psi, config, i), i)
        for ax, gam in enumerate(alg.gamma):
            fwd = config[:i] + (p._replace(site=spec.shift(p.site, ax, +1)),) + config[i + 1:]
            bwd = config[:i] + (p._replace(site=spec.shift(p.site, ax, -1)),) + config[i + 1:]
            val = val + 1j * _on_axis(gam, (psi(fwd) - psi(bwd)) / (2 * spec.a), i)
        val = val - params.stats.mass_of(p.species) * psi(config)
        rhs = calc.interaction(psi, config, i, gbar_tensor=tgbar, g_tensor=tg, gconj=gplus)
        return val - rhs

    return out


def check_covariant_equivalence(params, phi, configs, kappa: float = 0.5, greens: Greens | None = None) -> float:
    """Max ``|gamma0_p (i d_p - H_p) phi - [(i gamma.d - m) phi - RHS~]|`` over configs and particles."""
    calc = Calculus(params, greens or Greens.exact(params), kappa)
    worst = 0.0
    for config in configs:
        for i, p in enumerate(config):
            lhs = _on_axis(params.algebra.gamma0, calc.D(p.pid, phi)(config), i)
            rhs = covariant_operator(calc, p.pid, phi)(config)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


# -- probes and budgets -----------------------------------------------------

def random_probes(spec, rng, layout, count: int, margin: float = 0.0, t_max: float = 1.0,
                  max_tries: int = 100000) -> list:
    """Random spacelike configurations with grid times in ``[0, t_max]``.

    ``layout`` lists species in slot order, e.g. ``("x", "xbar", "y")``.
    """
    dt = spec.dt
    nt = int(round(t_max / dt))
    out = []
    for _ in range(max_tries):
        if len(out) == count:
            break
        parts = [(sp, dt * rng.integers(0, nt + 1), int(rng.integers(spec.n_sites))) for sp in layout]
        cfg = make_config(parts)
        if len({(p.t, p.site) for p in cfg}) < len(cfg):
            continue
        if is_spacelike(cfg, spec, margin):
            out.append(cfg)
    if len(out) < count:
        raise ValueError(f"could only draw {len(out)} spacelike probes at margin {margin}")
    return out


def probe_residual(params, phi, probes, pair, kappa=0.5, greens=None, h=None) -> float:
    """Max |[D_p, D_q] phi| over probes, ``pair`` = (position p, position q)."""
    greens = greens or Greens.exact(params)
    worst = 0.0
    for cfg in probes:
        r = commutator_bruteforce(params, phi, cfg, pair[0], pair[1], kappa, greens, h)
        worst = max(worst, float(np.abs(r).max()))
    return worst


def fd_budget(params, phi, probes, pair, kappa=0.5, greens=None) -> float:
    """Richardson estimate ``|r(h) - r(h/2)| * 4/3`` of the O(h^2) residual part."""
    greens = greens or Greens.exact(params)
    h = params.spec.dt
    worst = 0.0
    for cfg in probes:
        r1 = commutator_bruteforce(params, phi, cfg, pair[0], pair[1], kappa, greens, h)
        r2 = commutator_bruteforce(params, phi, cfg, pair[0], pair[1], kappa, greens, h / 2)
        worst = max(worst, float(np.abs(r1 - r2).max()) * 4 / 3)
    return worst


def tail_budget(params, phi_scale: float, T: float, margin: float) -> float:
    """A-priori bound on a coupling term carrying a Green function at a spacelike argument.

    ``ds**3 * max|G|_spacelike(margin) * max|g| * phi_scale * 6``; the factor
    bounds the square-root prefactors of sectors with at most three particles.
    """
    ds = params.ds
    Tg = max(T, params.spec.dt)
    tabs = [compute_green(params, Tg, w) for w in ("G", "Gbar")]
    gtail = max(spacelike_abs_max(t, margin) for t in tabs)
    return ds**3 * gtail * float(np.abs(params.g).max()) * phi_scale * 6.0


def measured_tail(params, phi, probes, kappa=0.5, greens=None) -> float:
    """Largest x-y or xbar-y residual over (x, xbar, y) probes: the Green-tail part."""
    greens = greens or Greens.exact(params)
    return max(probe_residual(params, phi, probes, pair, kappa, greens) for pair in ((0, 2), (1, 2)))


def yy_report(params, seed: int, n_probes: int = 4, margin: float = 4.0, kappa: float = 0.5,
              t_max: float = 1.0) -> dict:
    """y-y residual against the consistency budget for one sign assignment.

    The budget is the h^2 part of the x-xbar residual (Richardson estimate)
    plus the measured Green-tail residual of the x-y and xbar-y commutators,
    both on the same amplitude and at the same margin.
    """
    spec = params.spec
    rng = np.random.default_rng(seed)
    family = [(0, 0, 2), (1, 1, 1), (2, 2, 0)]
    phi = RandomAmplitude(params, seed, family)
    greens = Greens.exact(params)
    yy = random_probes(spec, rng, ("y", "y"), n_probes, margin, t_max)
    mixed = random_probes(spec, rng, ("x", "xbar", "y"), n_probes, margin, t_max)
    residual = probe_residual(params, phi, yy, (0, 1), kappa, greens)
    fd = fd_budget(params, phi, mixed, (0, 1), kappa, greens)
    tail = measured_tail(params, phi, mixed, kappa, greens)
    budget = fd + tail
    return {"eps": list(params.stats.eps), "residual": residual, "fd_budget": fd,
            "tail_budget": tail, "budget": budget, "margin": margin, "seed": seed,
            "verdict": consistency_verdict(params.stats)[0]}


def boundary_probes(spec, rng, layout, pair, margin: float, count: int, t_max: float) -> list:
    """Spacelike probes whose ``pair`` sits exactly on the margin boundary.

    The pair is separated by the smallest lattice distance ``>= |dt| + margin``
    along axis 0; remaining particles are placed at least ``margin`` outside
    the light cones of all others.
    """
    dt = spec.dt
    nt = int(round(t_max / dt))
    out = []
    while len(out) < count:
        times = [dt * int(rng.integers(0, nt + 1)) for _ in layout]
        sites = [None] * len(layout)
        p, q = pair
        sites[p] = int(rng.integers(spec.n_sites))
        sep = int(math.ceil((abs(times[p] - times[q]) + margin) / spec.a - 1e-9))
        if sep == 0 or 2 * sep > spec.L:
            continue
        sites[q] = spec.shift(sites[p], 0, sep)
        for k in range(len(layout)):
            if sites[k] is None:
                sites[k] = int(rng.integers(spec.n_sites))
        cfg = make_config(list(zip(layout, times, sites)))
        if is_spacelike(cfg, spec, margin):
            out.append(cfg)
    return out


def margin_scan(params, seed: int, margins=(2.0, 4.0, 6.0), n_probes: int = 6, t_max: float = 8.0,
                kappa: float = 0.5) -> dict:
    """Normalized x-y and xbar-y residuals on boundary probes at each margin.

    Normalization is ``ds**3 max|G| max|g| max|phi|``, the size the coupling
    term would have with the Green function at its peak.
    """
    spec = params.spec
    greens = Greens.exact(params)
    family = [(0, 0, 2), (1, 1, 1), (2, 2, 0)]
    layout = ("x", "xbar", "y")
    gpeak = max(float(np.abs(greens.G.slice(0.0)).max()), float(np.abs(greens.Gbar.slice(0.0)).max()))
    out = {"margins": list(margins), "xy": [], "xbary": []}
    for name, pair in (("xy", (0, 2)), ("xbary", (1, 2))):
        for m in margins:
            rng = np.random.default_rng([seed, int(round(m * 1000))])
            phi = RandomAmplitude(params, seed, family)
            probes = boundary_probes(spec, rng, layout, pair, m, n_probes, t_max)
            res = probe_residual(params, phi, probes, pair, kappa, greens)
            scale = params.ds**3 * gpeak * float(np.abs(params.g).max()) * phi.max_seen
            out[name].append(res / scale)
    return out


def consistency_report(params, seed: int = 0, **kw) -> dict:
    """Full report over the 8 sign assignments (same lattice and coupling)."""
    rows = []
    for eps in SIGN_ASSIGNMENTS:
        p = params.with_(stats=SpeciesStatistics(*eps, *params.stats.masses))
        row = yy_report(p, seed, **kw)
        row["ratio"] = row["residual"] / row["budget"] if row["budget"] > 0 else math.inf
        row["empirically_consistent"] = bool(row["residual"] <= row["budget"])
        rows.append(row)
    return {"assignments": rows,
            "n_consistent": sum(r["verdict"] for r in rows),
            "agrees": all(r["verdict"] == r["empirically_consistent"] for r in rows)}


def dumps(report) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
