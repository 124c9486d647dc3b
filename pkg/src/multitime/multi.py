"""Multi-time generators and path integration over spacelike configurations.

The multi-time amplitude is carried in *clock-labelled* blocks.  Every particle
slot holds the index of the clock whose time it shares; a block keyed by
``(sector, labels)`` stores the amplitude at the configuration whose particle
times are ``clocks[labels[i]]``, for every site/spin assignment.  A particle
created by a generator inherits the clock of the particle that created it, so
the set of labelled blocks is closed under all generators.  Advancing one
clock advances every particle on it at once, which is the directional
derivative prescribed at collisions.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .fock import FockSpace, FockState, Sector, annihilate, operator_matrix, species_index
from .green import GreenFunction
from .single import SingleTimePropagator


class PathError(ValueError):
    """A path leaves the spacelike set or separates colliding particles."""


@dataclass(frozen=True)
class MultiTimeConfig:
    """Particles as ``(species, time, site)``, ordered x-block, xbar-block, y-block."""

    particles: tuple

    def __post_init__(self):
        parts = tuple((species_index(sp), float(t), int(u)) for sp, t, u in self.particles)
        if [p[0] for p in parts] != sorted(p[0] for p in parts):
            raise ValueError("particles must be ordered x, xbar, y")
        object.__setattr__(self, "particles", parts)

    @property
    def sector(self) -> Sector:
        sp = [p[0] for p in self.particles]
        return Sector(sp.count(0), sp.count(1), sp.count(2))

    @property
    def times(self) -> tuple:
        return tuple(p[1] for p in self.particles)

    @property
    def sites(self) -> tuple:
        return tuple(p[2] for p in self.particles)

    def violating_pair(self, spec, times=None):
        """First pair ``(i, j)`` that is neither spacelike nor coincident, else ``None``."""
        times = self.times if times is None else times
        for i, j in itertools.combinations(range(len(self.particles)), 2):
            dt = abs(times[i] - times[j])
            ui, uj = self.sites[i], self.sites[j]
            if dt < 1e-12 and ui == uj:
                continue
            if not spec.distance(ui, uj) > dt + 1e-12:
                return (i, j)
        return None

    def is_spacelike(self, spec) -> bool:
        return self.violating_pair(spec) is None

    def collision_free(self) -> bool:
        seen = set()
        for _, t, u in self.particles:
            key = (round(t, 12), u)
            if key in seen:
                return False
            seen.add(key)
        return True


class Greens:
    """Pair of Green-function providers ``(G, Gbar)``; any object with ``slice(t)`` works."""

    def __init__(self, G, Gbar):
        self.G, self.Gbar = G, Gbar

    @classmethod
    def exact(cls, params) -> "Greens":
        return cls(GreenFunction(params, "G"), GreenFunction(params, "Gbar"))


@dataclass
class MultiTimeState:
    space: FockSpace
    clocks: np.ndarray
    blocks: dict
    kappa: float = 0.5
    leakage: float = field(default=0.0)

    @classmethod
    def from_fock(cls, psi: FockState, n_clocks: int = 1, t0: float = 0.0, kappa: float = 0.5):
        blocks = {}
        for s in psi.space.sectors:
            for labels in itertools.product(range(n_clocks), repeat=s.n):
                blocks[(s, labels)] = psi.blocks[s].copy()
        return cls(psi.space, np.full(n_clocks, float(t0)), blocks, kappa, psi.leakage)

    @property
    def n_clocks(self) -> int:
        return len(self.clocks)

    def copy(self) -> "MultiTimeState":
        return MultiTimeState(self.space, self.clocks.copy(),
                              {k: b.copy() for k, b in self.blocks.items()}, self.kappa, self.leakage)

    def equal_time_state(self, labels_of=None) -> FockState:
        """Fock state read off the blocks whose particles all sit on one clock."""
        c = 0 if labels_of is None else labels_of
        if self.n_clocks > 1 and labels_of is None and np.ptp(self.clocks) > 1e-12:
            raise ValueError("clocks differ; pass the clock index to read")
        return FockState(self.space, {s: self.blocks[(s, (c,) * s.n)].copy() for s in self.space.sectors},
                         self.leakage)

    def labels_for(self, config: MultiTimeConfig, clock_of=None) -> tuple:
        if clock_of is not None:
            return tuple(clock_of)
        labels = []
        for t in config.times:
            hits = np.nonzero(np.abs(self.clocks - t) < 1e-9)[0]
            if hits.size == 0:
                raise ValueError(f"time {t} matches no clock (clocks={self.clocks})")
            labels.append(int(hits[0]))
        return tuple(labels)

    def amplitude(self, config: MultiTimeConfig, clock_of=None) -> np.ndarray:
        """Spinor tensor of the amplitude at ``config`` (axes = particle slots)."""
        labels = self.labels_for(config, clock_of)
        blk = self.blocks[(config.sector, labels)]
        ds = self.space.ds
        shaped = blk.reshape(sum(((self.space.spec.n_sites, ds) for _ in labels), ()))
        index = []
        for u in config.sites:
            index.extend([u, slice(None)])
        return shaped[tuple(index)]

    def spacelike_mask(self, sector, labels) -> np.ndarray:
        """Boolean mask over site tuples: True where the labelled configuration is spacelike."""
        spec = self.space.spec
        n = len(labels)
        S = spec.n_sites
        mask = np.ones((S,) * n, dtype=bool)
        dist = spec.offset_length[spec.displacement]
        for i, j in itertools.combinations(range(n), 2):
            dt = abs(self.clocks[labels[i]] - self.clocks[labels[j]])
            if dt < 1e-12:
                continue
            pair = dist > dt + 1e-12
            shape = [1] * n
            shape[i], shape[j] = S, S
            mask &= pair.reshape(shape)
        return mask

    def masked_slice(self, sector, labels):
        """Amplitudes of one labelled block shaped (S, ds, S, ds, ...) with NaN off the spacelike set."""
        sector = Sector(*sector)
        spec, ds = self.space.spec, self.space.ds
        vals = self.blocks[(sector, tuple(labels))].reshape(sum(((spec.n_sites, ds) for _ in labels), ()))
        mask = self.spacelike_mask(sector, labels)
        full_mask = mask.reshape(sum(((spec.n_sites, 1) for _ in labels), ()))
        return np.where(full_mask, vals, np.nan + 0j)

    def csv_header(self, n: int) -> list:
        head = []
        for i in range(n):
            head += [f"t{i}", f"z{i}", f"spin{i}"]
        return head + ["re", "im"]

    def csv_rows(self, sector, labels):
        """Rows keyed by per-particle (t, z, spin) over the spacelike entries of one block."""
        vals = self.masked_slice(Sector(*sector), labels)
        n = len(labels)
        for idx in np.ndindex(vals.shape):
            v = vals[idx]
            if np.isnan(v.real):
                continue
            row = []
            for i in range(n):
                row += [float(self.clocks[labels[i]]), idx[2 * i], idx[2 * i + 1]]
            yield tuple(row) + (float(v.real), float(v.imag))

    def to_csv(self, path, sector, labels) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header(len(labels)))
            for row in self.csv_rows(sector, labels):
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


# -- generators -----------------------------------------------------------

def _slot_rhs(params, greens: Greens, phi: MultiTimeState, sector: Sector, labels, axis: int,
              kappa: float) -> np.ndarray:
    """Right-hand side of the evolution equation of the particle in slot ``axis``."""
    M, Mb, N = sector
    eps_x, eps_b, eps_y = params.stats.eps
    spec, ds = params.spec, params.ds
    S = spec.n_sites
    species = sector.slot_species()[axis]
    clocks = phi.clocks
    blk = phi.blocks[(sector, labels)]
    out = np.moveaxis(np.tensordot(params.free[species], blk, axes=([1], [axis])), 0, axis)
    c = labels[axis]
    n = sector.n

    if species in (0, 1) and M >= 1 and Mb >= 1:
        src_sector = Sector(M - 1, Mb - 1, N + 1)
        if src_sector not in phi.space:
            return out
        pref = np.sqrt((N + 1) / (M * Mb)) * eps_y**N
        disp = spec.displacement
        if species == 0:
            j = axis + 1
            partners = [(M + jb - 1, jb) for jb in range(1, Mb + 1)]
            weight = kappa
        else:
            jb = axis - M + 1
            partners = [(jj - 1, jj) for jj in range(1, M + 1)]
            weight = 1.0 - kappa
        if weight == 0:
            return out
        for other_axis, other_num in partners:
            c_other = labels[other_axis]
            dt = clocks[c_other] - clocks[c]
            if species == 0:
                x_axis, xb_axis, jj, jjb = axis, other_axis, j, other_num
                Gs = greens.Gbar.slice(dt)
                K = Gs[disp.T]  # K[u, v] = Gbar(v - u): x at u, xbar at v
            else:
                x_axis, xb_axis, jj, jjb = other_axis, axis, other_num, jb
                Gs = greens.G.slice(dt)
                K = Gs[disp]  # K[u, v] = G(u - v)
            src_labels = tuple(l for i, l in enumerate(labels) if i not in (x_axis, xb_axis)) + (c,)
            src = phi.blocks[(src_sector, src_labels)]
            src = src.reshape(src.shape[:-1] + (S, ds))
            if species == 0:
                term = np.einsum("uvrbs,...us->...urvb", K, src)
            else:
                term = np.einsum("uvrbs,...vs->...urvb", K, src)
            term = term.reshape(term.shape[:-4] + (S * ds, S * ds))
            term = np.moveaxis(term, [n - 2, n - 1], [x_axis, xb_axis])
            sign = eps_x ** (jj + 1) * eps_b ** (jjb + 1)
            out = out + (weight * pref * sign) * term

    elif species == 2:
        src_sector = Sector(M + 1, Mb + 1, N - 1)
        if src_sector not in phi.space:
            return out
        k = axis - M - Mb + 1
        src_labels = labels[:M] + (c,) + labels[M:M + Mb] + (c,) + tuple(
            l for i, l in enumerate(labels[M + Mb:]) if i != k - 1)
        src = phi.blocks[(src_sector, src_labels)]
        moved = np.moveaxis(src, [M, M + 1 + Mb], [-2, -1])
        moved = moved.reshape(moved.shape[:-2] + (S, ds, S, ds))
        diag = np.diagonal(moved, axis1=-4, axis2=-2)
        term = np.einsum("...abu,abs->...us", diag, params.g.conj())
        term = term.reshape(term.shape[:-2] + (S * ds,))
        pref = np.sqrt((M + 1) * (Mb + 1) / N) * eps_x**M * eps_b**Mb * eps_y ** (k + 1)
        out = out + pref * np.moveaxis(term, -1, axis)
    return out


def apply_generator(params, greens: Greens, phi: MultiTimeState, slot, kappa: float | None = None) -> dict:
    """``-i`` times the right-hand side of the equation for one particle slot.

    ``slot = (species, index)`` with a 0-based index inside the species block.
    Returns derivative blocks keyed like ``phi.blocks`` for every block that has
    that slot; blocks without it are absent.
    """
    kappa = phi.kappa if kappa is None else kappa
    sp, idx = species_index(slot[0]), int(slot[1])
    out = {}
    for (sector, labels) in phi.blocks:
        if idx >= sector.count(sp):
            continue
        axis = sector.offset(sp) + idx
        out[(sector, labels)] = -1j * _slot_rhs(params, greens, phi, sector, labels, axis, kappa)
    return out


def all_slots(space: FockSpace):
    caps = [max(s.count(sp) for s in space.sectors) for sp in range(3)]
    return [(sp, i) for sp in range(3) for i in range(caps[sp])]


def clock_derivative(params, greens: Greens, phi: MultiTimeState, clocks, kappa: float | None = None) -> dict:
    """Summed generator of every slot riding on one of ``clocks``."""
    kappa = phi.kappa if kappa is None else kappa
    clocks = set(np.atleast_1d(clocks).tolist())
    out = {}
    for (sector, labels), blk in phi.blocks.items():
        acc = None
        for axis, lab in enumerate(labels):
            if lab in clocks:
                r = _slot_rhs(params, greens, phi, sector, labels, axis, kappa)
                acc = r if acc is None else acc + r
        out[(sector, labels)] = np.zeros_like(blk) if acc is None else -1j * acc
    return out


def _axpy(phi: MultiTimeState, deriv: dict, h: float, clocks, dt: float) -> MultiTimeState:
    new = MultiTimeState(phi.space, phi.clocks.copy(),
                         {k: phi.blocks[k] + h * deriv[k] for k in phi.blocks}, phi.kappa, phi.leakage)
    for c in clocks:
        new.clocks[c] += dt
    return new


def rk4_clock_step(params, greens, phi: MultiTimeState, clocks, h: float) -> MultiTimeState:
    clocks = list(np.atleast_1d(clocks))
    k1 = clock_derivative(params, greens, phi, clocks)
    k2 = clock_derivative(params, greens, _axpy(phi, k1, h / 2, clocks, h / 2), clocks)
    k3 = clock_derivative(params, greens, _axpy(phi, k2, h / 2, clocks, h / 2), clocks)
    k4 = clock_derivative(params, greens, _axpy(phi, k3, h, clocks, h), clocks)
    blocks = {k: phi.blocks[k] + (h / 6) * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]) for k in phi.blocks}
    new = MultiTimeState(phi.space, phi.clocks.copy(), blocks, phi.kappa, phi.leakage)
    for c in clocks:
        new.clocks[c] += h
    return new


def _check_move(config, clock_of, before, after, spec):
    """Validate the target configuration before and after one move."""
    times_before = [before[c] for c in clock_of]
    times_after = [after[c] for c in clock_of]
    bad = config.violating_pair(spec, times_after)
    if bad is None:
        return
    i, j = bad
    coincided = (abs(times_before[i] - times_before[j]) < 1e-12
                 and config.sites[i] == config.sites[j])
    if coincided:
        raise PathError(f"collision-rule violation: particles {i} and {j} coincide but are "
                        f"advanced separately (clocks {clock_of[i]}, {clock_of[j]})")
    raise PathError(f"path leaves the spacelike set: particles {i} and {j} at times "
                    f"{times_after[i]:g}, {times_after[j]:g}, sites {config.sites[i]}, {config.sites[j]}")


def evolve_multitime(params, psi0: FockState, path, kappa: float = 0.5, n_clocks: int = 2,
                     substeps: int = 4, greens: Greens | None = None, config: MultiTimeConfig | None = None,
                     clock_of=None, target=None) -> MultiTimeState:
    """Integrate the multi-time equations along a path of clock moves.

    ``path`` is a list of ``(clocks, steps)``: advance the clock index (or tuple
    of indices, moved together) by ``steps * spec.dt`` with ``substeps`` RK4
    steps per ``dt``.  Negative ``steps`` run backwards.  If ``config`` is given
    (with ``clock_of`` naming the clock of each particle) every intermediate
    configuration is checked for spacelikeness.  ``target`` optionally pins the
    final clock times.
    """
    greens = greens or Greens.exact(params)
    phi = MultiTimeState.from_fock(psi0, n_clocks, 0.0, kappa)
    dt = params.spec.dt
    if config is not None:
        if clock_of is None:
            raise ValueError("clock_of is required when a target configuration is checked")
        clock_of = tuple(clock_of)
        if len(clock_of) != len(config.particles):
            raise ValueError("clock_of must name one clock per particle")
        _check_move(config, clock_of, phi.clocks, phi.clocks, params.spec)
    for clocks, steps in path:
        clocks = tuple(np.atleast_1d(clocks).tolist())
        if any(c < 0 or c >= n_clocks for c in clocks):
            raise ValueError(f"clock index out of range in move {clocks}")
        h = math.copysign(dt / substeps, steps)
        for _ in range(abs(int(steps))):
            before = phi.clocks.copy()
            for _ in range(substeps):
                phi = rk4_clock_step(params, greens, phi, clocks, h)
            if config is not None:
                _check_move(config, clock_of, before, phi.clocks, params.spec)
    if target is not None and not np.allclose(phi.clocks, target, atol=1e-9):
        raise PathError(f"path ends at clocks {phi.clocks}, not at target {target}")
    return phi


def clock_path(target, order, dt) -> list:
    """Path reaching ``target`` clock times by advancing clocks in the given order."""
    moves = []
    for c in order:
        steps = int(round(target[c] / dt))
        if steps:
            moves.append((c, steps))
    return moves


# -- vacuum-expectation representation ------------------------------------

def vacuum_expectation_amplitude(params, space: FockSpace, psi0: FockState, sector, times) -> np.ndarray:
    """Amplitude from Heisenberg-evolved annihilation operators.

    ``prefactor * <vac| a(t_1) .. abar(..) .. b(t_n) |psi0>`` over all mode
    tuples, with ``a(t) = exp(iHt) a exp(-iHt)`` built as dense matrices on
    ``space`` (which must contain the vacuum and every intermediate sector).
    """
    sector = Sector(*sector)
    if len(times) != sector.n:
        raise ValueError("need one time per particle")
    if Sector(0, 0, 0) not in space:
        raise ValueError("space must contain the vacuum")
    prop = SingleTimePropagator(params, space, dense_limit=space.dim)
    n1 = space.n1
    ds = space.ds
    mats = {}
    for sp in set(sector.slot_species()):
        mats[sp] = [operator_matrix(lambda st, sp=sp, u=u: annihilate(sp, u // ds, u % ds, st), space)
                    for u in range(n1)]
    heis = {}

    def heisenberg(sp, t):
        key = (sp, round(t, 12))
        if key not in heis:
            Uf, Ub = prop.matrix(t), prop.matrix(-t)
            heis[key] = [Ub @ A @ Uf for A in mats[sp]]
        return heis[key]

    vec = psi0.to_vector()[None, :]  # (modes so far, dim)
    for slot in reversed(range(sector.n)):
        sp = sector.slot_species()[slot]
        ops = heisenberg(sp, times[slot])
        vec = np.stack([np.einsum("ij,mj->mi", A, vec) for A in ops], axis=0)
        vec = vec.reshape(-1, space.dim)
    vac = space.offsets[Sector(0, 0, 0)]
    amps = vec[:, vac].reshape((n1,) * sector.n)
    M, Mb, N = sector
    eps_x, eps_b, eps_y = params.stats.eps
    pref = (eps_x ** (M * (M - 1) // 2) * eps_b ** (Mb * (Mb - 1) // 2) * eps_y ** (N * (N - 1) // 2)
            / math.sqrt(math.factorial(M) * math.factorial(Mb) * math.factorial(N)))
    return pref * amps


def single_time_reference(params, psi0: FockState, t: float) -> FockState:
    """Single-time state at ``t`` from the exact propagator (equal-time oracle)."""
    return SingleTimePropagator(params, psi0.space)(psi0, t)


__all__ = [
    "MultiTimeConfig", "MultiTimeState", "Greens", "PathError", "apply_generator", "clock_derivative",
    "evolve_multitime", "clock_path", "vacuum_expectation_amplitude", "all_slots", "single_time_reference",
]
