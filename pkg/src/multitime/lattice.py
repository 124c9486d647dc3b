"""Spatial lattice, Dirac spin algebra and the free one-particle Dirac operator."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SPECIES = ("x", "xbar", "y")


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic hypercubic lattice with ``L**d`` sites, spacing ``a`` and time step ``dt``."""

    d: int = 1
    L: int = 12
    a: float = 1.0
    dt: float = 0.25
    boundary: str = "periodic"

    def __post_init__(self):
        if self.d not in (1, 3):
            raise ValueError(f"unsupported spatial dimension d={self.d}")
        if self.L < 4:
            raise ValueError(f"need L >= 4, got {self.L}")
        if not self.a > 0 or not self.dt > 0:
            raise ValueError("lattice spacing and time step must be positive")
        if self.dt > self.a * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds a={self.a}; light cone not resolvable")
        if self.boundary != "periodic":
            raise ValueError("only periodic boundaries are supported")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def cell_volume(self) -> float:
        return self.a**self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates of every site, shape (n_sites, d), C order."""
        return np.array(np.unravel_index(np.arange(self.n_sites), (self.L,) * self.d)).T

    def site_index(self, coord) -> int:
        coord = np.atleast_1d(np.asarray(coord)) % self.L
        return int(np.ravel_multi_index(tuple(coord), (self.L,) * self.d))

    def shift(self, site: int, axis: int, step: int) -> int:
        c = self.coords[site].copy()
        c[axis] = (c[axis] + step) % self.L
        return self.site_index(c)

    @cached_property
    def displacement(self) -> np.ndarray:
        """``displacement[u, v]`` is the flat site index of ``coords[u] - coords[v]`` (mod L)."""
        diff = (self.coords[:, None, :] - self.coords[None, :, :]) % self.L
        return np.ravel_multi_index(tuple(np.moveaxis(diff, -1, 0)), (self.L,) * self.d)

    @cached_property
    def offset_length(self) -> np.ndarray:
        """Minimum-image length (in length units) of the displacement stored at each flat site index."""
        c = np.minimum(self.coords, self.L - self.coords)
        return np.sqrt((c**2).sum(axis=1)) * self.a

    def distance(self, u: int, v: int) -> float:
        return float(self.offset_length[self.displacement[u, v]])

    def momenta(self) -> np.ndarray:
        """All lattice momenta, shape (n_sites, d)."""
        k1 = 2 * np.pi * np.arange(self.L) / (self.L * self.a)
        grids = np.meshgrid(*([k1] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def difference_matrices(self) -> tuple:
        """Centered-difference matrices ``(f(x+a e) - f(x-a e)) / 2a``, one per axis."""
        mats = []
        for ax in range(self.d):
            D = np.zeros((self.n_sites, self.n_sites))
            for u in range(self.n_sites):
                D[u, self.shift(u, ax, +1)] += 1.0
                D[u, self.shift(u, ax, -1)] -= 1.0
            mats.append(D / (2 * self.a))
        return tuple(mats)


@dataclass(frozen=True)
class SpinAlgebra:
    ds: int
    alpha: tuple
    beta: np.ndarray

    @property
    def gamma0(self) -> np.ndarray:
        return self.beta

    @property
    def gamma(self) -> tuple:
        """Spatial gamma matrices ``beta @ alpha_a``."""
        return tuple(self.beta @ al for al in self.alpha)


_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def make_spin_algebra(d: int) -> SpinAlgebra:
    """Dirac matrices for ``d=1`` (Pauli, ds=2) or ``d=3`` (Dirac representation, ds=4)."""
    if d == 1:
        return SpinAlgebra(2, (_PAULI[0].copy(),), _PAULI[2].copy())
    if d == 3:
        zero = np.zeros((2, 2), dtype=complex)
        alpha = tuple(np.block([[zero, s], [s, zero]]) for s in _PAULI)
        beta = np.diag([1, 1, -1, -1]).astype(complex)
        return SpinAlgebra(4, alpha, beta)
    raise ValueError(f"no spin algebra for spatial dimension d={d}")


@dataclass(frozen=True)
class SpeciesStatistics:
    """Exchange signs (+1 boson, -1 fermion) and masses of the three species."""

    eps_x: int = 1
    eps_xbar: int = 1
    eps_y: int = 1
    m_x: float = 1.0
    m_xbar: float = 1.0
    m_y: float = 1.0

    def __post_init__(self):
        for e in self.eps:
            if e not in (1, -1):
                raise ValueError(f"statistics sign must be +1 or -1, got {e}")
        for m in self.masses:
            if m < 0:
                raise ValueError(f"masses must be nonnegative, got {m}")

    @property
    def eps(self) -> tuple:
        return (self.eps_x, self.eps_xbar, self.eps_y)

    @property
    def masses(self) -> tuple:
        return (self.m_x, self.m_xbar, self.m_y)

    @property
    def sign_product(self) -> int:
        return self.eps_x * self.eps_xbar * self.eps_y

    def eps_of(self, species: int) -> int:
        return self.eps[species]

    def mass_of(self, species: int) -> float:
        return self.masses[species]


def free_dirac_matrix(mass: float, spec: LatticeSpec, algebra: SpinAlgebra) -> np.ndarray:
    """Dense one-particle Dirac operator in the site-major, spin-minor basis."""
    h = mass * np.kron(np.eye(spec.n_sites), algebra.beta)
    for D, al in zip(spec.difference_matrices, algebra.alpha):
        h = h - 1j * np.kron(D, al)
    return h


def free_dirac_apply(field, mass: float, spec: LatticeSpec, algebra: SpinAlgebra) -> np.ndarray:
    """Apply ``-i alpha . grad + m beta`` to a spinor field of shape (n_sites, ds).

    Derivatives are centered differences with periodic wrap.
    """
    field = np.asarray(field)
    if field.shape != (spec.n_sites, algebra.ds):
        raise ValueError(f"field shape {field.shape} != {(spec.n_sites, algebra.ds)}")
    grid = field.reshape((spec.L,) * spec.d + (algebra.ds,))
    out = mass * grid @ algebra.beta.T
    for ax, al in enumerate(algebra.alpha):
        deriv = (np.roll(grid, -1, axis=ax) - np.roll(grid, 1, axis=ax)) / (2 * spec.a)
        out = out - 1j * deriv @ al.T
    return out.reshape(field.shape)


def lattice_dispersion(mass: float, spec: LatticeSpec) -> np.ndarray:
    """Positive branch ``sqrt(m^2 + sum_a sin^2(k_a a) / a^2)`` over all lattice momenta."""
    k = spec.momenta()
    return np.sqrt(mass**2 + (np.sin(k * spec.a) ** 2).sum(axis=1) / spec.a**2)
