"""Truncated, sector-blocked Fock space over the lattice.

A state is a dict of dense blocks, one per sector ``(M, Mbar, N)``.  A block has
one axis per particle slot, slots ordered x-block, xbar-block, y-block, and each
axis runs over ``site * ds + spin``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .lattice import SPECIES, LatticeSpec, SpeciesStatistics


def species_index(species) -> int:
    if isinstance(species, str):
        return SPECIES.index(species)
    if species in (0, 1, 2):
        return int(species)
    raise ValueError(f"unknown species {species!r}")


class Sector(NamedTuple):
    M: int
    Mbar: int
    N: int

    @property
    def n(self) -> int:
        return self.M + self.Mbar + self.N

    @property
    def charges(self) -> tuple:
        return (self.M - self.Mbar, self.M + self.N)

    def count(self, species: int) -> int:
        return self[species]

    def offset(self, species: int) -> int:
        """Axis of the first slot of ``species``."""
        return (0, self.M, self.M + self.Mbar)[species]

    def shifted(self, species: int, delta: int) -> "Sector":
        counts = list(self)
        counts[species] += delta
        return Sector(*counts)

    def slot_species(self) -> list:
        return [0] * self.M + [1] * self.Mbar + [2] * self.N


def sectors_within(caps, max_particles=None, charges=None) -> tuple:
    """All sectors below ``caps``, optionally with a particle-number bound and fixed charges."""
    out = []
    for M, Mb, N in itertools.product(*(range(c + 1) for c in caps)):
        s = Sector(M, Mb, N)
        if max_particles is not None and s.n > max_particles:
            continue
        if charges is not None and s.charges != tuple(charges):
            continue
        out.append(s)
    return tuple(out)


@dataclass(frozen=True)
class FockSpace:
    spec: LatticeSpec
    ds: int
    stats: SpeciesStatistics
    sectors: tuple
    caps: tuple = (1, 1, 1)

    def __post_init__(self):
        secs = tuple(Sector(*s) for s in self.sectors)
        for s in secs:
            if any(c > cap for c, cap in zip(s, self.caps)):
                raise ValueError(f"sector {s} exceeds caps {self.caps}")
        object.__setattr__(self, "sectors", secs)

    @classmethod
    def from_caps(cls, spec, ds, stats, caps, max_particles=None, charges=None):
        caps = tuple(caps)
        return cls(spec, ds, stats, sectors_within(caps, max_particles, charges), caps)

    @property
    def n1(self) -> int:
        return self.spec.n_sites * self.ds

    def block_shape(self, sector) -> tuple:
        return (self.n1,) * Sector(*sector).n

    @cached_property
    def offsets(self) -> dict:
        off, pos = {}, 0
        for s in self.sectors:
            off[s] = pos
            pos += self.n1 ** s.n
        return off

    @property
    def dim(self) -> int:
        return sum(self.n1**s.n for s in self.sectors)

    def __contains__(self, sector) -> bool:
        return Sector(*sector) in self.sectors

    def compatible(self, other: "FockSpace") -> bool:
        return (self.spec == other.spec and self.ds == other.ds
                and self.sectors == other.sectors and self.caps == other.caps)


@dataclass
class FockState:
    """Immutable-by-convention sector-blocked state; operations return new states."""

    space: FockSpace
    blocks: dict
    leakage: float = field(default=0.0)

    @classmethod
    def zeros(cls, space: FockSpace) -> "FockState":
        return cls(space, {s: np.zeros(space.block_shape(s), dtype=complex) for s in space.sectors})

    @classmethod
    def vacuum(cls, space: FockSpace) -> "FockState":
        if Sector(0, 0, 0) not in space:
            raise ValueError("space has no vacuum sector")
        st = cls.zeros(space)
        st.blocks[Sector(0, 0, 0)][()] = 1.0
        return st

    @classmethod
    def random(cls, space: FockSpace, rng, normalize: bool = True) -> "FockState":
        """Random exchange-symmetric state (complex Gaussian entries, then symmetrized)."""
        blocks = {}
        for s in space.sectors:
            shape = space.block_shape(s)
            raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            blocks[s] = symmetrize(raw, s, space.stats)
        st = cls(space, blocks)
        return st * (1.0 / st.norm()) if normalize else st

    @classmethod
    def from_vector(cls, space: FockSpace, vec) -> "FockState":
        vec = np.asarray(vec)
        blocks = {}
        for s in space.sectors:
            o = space.offsets[s]
            blocks[s] = vec[o:o + space.n1**s.n].reshape(space.block_shape(s)).astype(complex)
        return cls(space, blocks)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.blocks[s].ravel() for s in self.space.sectors])

    def copy(self) -> "FockState":
        return FockState(self.space, {s: b.copy() for s, b in self.blocks.items()}, self.leakage)

    def __add__(self, other):
        return FockState(self.space, {s: self.blocks[s] + other.blocks[s] for s in self.blocks},
                         self.leakage + other.leakage)

    def __sub__(self, other):
        return FockState(self.space, {s: self.blocks[s] - other.blocks[s] for s in self.blocks},
                         self.leakage + other.leakage)

    def __mul__(self, c):
        return FockState(self.space, {s: c * b for s, b in self.blocks.items()}, self.leakage)

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.sqrt(inner_product(self, self).real))

    def max_abs(self) -> float:
        return max((float(np.abs(b).max()) for b in self.blocks.values() if b.size), default=0.0)

    def sector_probabilities(self) -> dict:
        w = self.space.spec.cell_volume
        return {s: float(w**s.n * np.vdot(b, b).real) for s, b in self.blocks.items()}


def _within_species_permutations(sector: Sector, stats: SpeciesStatistics):
    """Yield (axis permutation, sign) for all products of within-species permutations."""
    per_species = []
    for sp in range(3):
        off, cnt, eps = sector.offset(sp), sector.count(sp), stats.eps_of(sp)
        opts = []
        for perm in itertools.permutations(range(cnt)):
            sign = eps ** _inversions(perm)
            opts.append(([off + p for p in perm], sign))
        per_species.append(opts)
    for (px, sx), (pb, sb), (py, sy) in itertools.product(*per_species):
        yield tuple(px + pb + py), sx * sb * sy


def _inversions(perm) -> int:
    return sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm)) if perm[i] > perm[j])


def symmetrize(raw, label, stats: SpeciesStatistics) -> np.ndarray:
    """Project a sector block onto the exchange-symmetric subspace.

    Averages ``eps**parity * raw`` over all within-species slot permutations.
    """
    sector = Sector(*label)
    raw = np.asarray(raw)
    if raw.ndim != sector.n or len(set(raw.shape)) > 1:
        raise ValueError(f"block of shape {raw.shape} does not fit sector {sector}")
    if sector.n == 0:
        return raw.astype(complex)
    out = np.zeros(raw.shape, dtype=complex)
    count = 0
    for perm, sign in _within_species_permutations(sector, stats):
        out += sign * np.transpose(raw, perm)
        count += 1
    return out / count


def exchange_defect(block, sector, stats: SpeciesStatistics) -> float:
    """Largest violation of the exchange rule over all same-species slot swaps."""
    sector = Sector(*sector)
    worst = 0.0
    for sp in range(3):
        off, eps = sector.offset(sp), stats.eps_of(sp)
        for i, j in itertools.combinations(range(sector.count(sp)), 2):
            swapped = np.swapaxes(block, off + i, off + j)
            worst = max(worst, float(np.abs(swapped - eps * block).max()))
    return worst


def inner_product(psi: FockState, chi: FockState) -> complex:
    """``<psi, chi>`` with lattice weight ``a**(d n)`` per n-particle sector."""
    if not psi.space.compatible(chi.space):
        raise ValueError("states live in different Fock spaces")
    w = psi.space.spec.cell_volume
    return complex(sum(w**s.n * np.vdot(psi.blocks[s], chi.blocks[s]) for s in psi.space.sectors))


def _mode_index(space: FockSpace, site: int, spin: int) -> int:
    if not (0 <= site < space.spec.n_sites and 0 <= spin < space.ds):
        raise ValueError(f"mode (site={site}, spin={spin}) out of range")
    return site * space.ds + spin


def annihilate(species, site: int, spin: int, psi: FockState) -> FockState:
    """Annihilation operator: fixes the last slot of ``species`` at (site, spin).

    Block (M, Mbar, N) of the result is ``sqrt(count+1) * eps**count`` times the
    source block with one more particle of that species.
    """
    sp = species_index(species)
    space = psi.space
    idx = _mode_index(space, site, spin)
    eps = space.stats.eps_of(sp)
    out = FockState.zeros(space)
    out.leakage = psi.leakage
    for s in space.sectors:
        src = s.shifted(sp, +1)
        if src not in space:
            continue
        cnt = s.count(sp)
        axis = src.offset(sp) + cnt
        out.blocks[s] = np.sqrt(cnt + 1) * eps**cnt * np.take(psi.blocks[src], idx, axis=axis)
    return out


def create(species, site: int, spin: int, psi: FockState) -> FockState:
    """Creation operator with the lattice delta ``Kronecker / a**d``.

    Norm created in sectors outside the space is dropped and added to ``leakage``.
    """
    sp = species_index(species)
    space = psi.space
    idx = _mode_index(space, site, spin)
    eps = space.stats.eps_of(sp)
    onehot = np.zeros(space.n1)
    onehot[idx] = 1.0 / space.spec.cell_volume
    out = FockState.zeros(space)
    dropped = 0.0
    for s in psi.space.sectors:
        tgt = s.shifted(sp, +1)
        if tgt.count(sp) > space.caps[sp] or tgt not in space:
            blk = psi.blocks[s]
            if np.any(blk):
                dropped += _created_norm(blk, s, tgt, sp, eps, onehot, space)
            continue
        out.blocks[tgt] = out.blocks[tgt] + _create_block(psi.blocks[s], tgt, sp, eps, onehot)
    out.leakage = psi.leakage + dropped
    return out


def _create_block(src, tgt: Sector, sp: int, eps: int, onehot) -> np.ndarray:
    cnt = tgt.count(sp)
    off = tgt.offset(sp)
    res = np.zeros((onehot.size,) * tgt.n, dtype=complex)
    for j in range(1, cnt + 1):
        term = np.multiply.outer(src, onehot)
        res += eps ** (j + 1) * np.moveaxis(term, -1, off + j - 1)
    return res / np.sqrt(cnt)


def _created_norm(src, s, tgt, sp, eps, onehot, space) -> float:
    blk = _create_block(src, tgt, sp, eps, onehot)
    return float(np.sqrt(space.spec.cell_volume**tgt.n * np.vdot(blk, blk).real))


def operator_matrix(op, space: FockSpace) -> np.ndarray:
    """Dense matrix of a linear map on ``space`` built column by column."""
    dim = space.dim
    mat = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        e = np.zeros(dim, dtype=complex)
        e[col] = 1.0
        mat[:, col] = op(FockState.from_vector(space, e)).to_vector()
    return mat


# -- serialization ---------------------------------------------------------

def state_to_dict(psi: FockState) -> dict:
    sp = psi.space
    return {
        "schema": 1,
        "lattice": {"d": sp.spec.d, "L": sp.spec.L, "a": sp.spec.a, "dt": sp.spec.dt},
        "ds": sp.ds,
        "statistics": list(sp.stats.eps),
        "masses": list(sp.stats.masses),
        "caps": list(sp.caps),
        "leakage": psi.leakage,
        "sectors": [
            {"sector": list(s), "shape": list(psi.blocks[s].shape),
             "re": psi.blocks[s].real.ravel().tolist(), "im": psi.blocks[s].imag.ravel().tolist()}
            for s in sp.sectors
        ],
    }


def state_from_dict(data: dict) -> FockState:
    spec = LatticeSpec(**data["lattice"])
    stats = SpeciesStatistics(*data["statistics"], *data["masses"])
    sectors = [Sector(*e["sector"]) for e in data["sectors"]]
    space = FockSpace(spec, data["ds"], stats, tuple(sectors), tuple(data["caps"]))
    blocks = {}
    for e in data["sectors"]:
        arr = np.asarray(e["re"]) + 1j * np.asarray(e["im"])
        blocks[Sector(*e["sector"])] = arr.reshape(e["shape"])
    return FockState(space, blocks, data.get("leakage", 0.0))


def save_state(psi: FockState, path) -> None:
    """Write a state as JSON (``.json``) or as a flat ``.npz`` archive."""
    path = str(path)
    if path.endswith(".json"):
        with open(path, "w") as fh:
            json.dump(state_to_dict(psi), fh)
        return
    meta = state_to_dict(FockState(psi.space, {s: np.zeros(0) for s in psi.space.sectors}, psi.leakage))
    arrays = {f"block_{i}": psi.blocks[s] for i, s in enumerate(psi.space.sectors)}
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_state(path) -> FockState:
    path = str(path)
    if path.endswith(".json"):
        with open(path) as fh:
            return state_from_dict(json.load(fh))
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        for i, e in enumerate(meta["sectors"]):
            blk = z[f"block_{i}"]
            e["shape"] = list(blk.shape)
            e["re"], e["im"] = blk.real.ravel(), blk.imag.ravel()
    return state_from_dict(meta)
