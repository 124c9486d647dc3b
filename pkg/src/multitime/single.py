"""Single-time Hamiltonian with pair creation/annihilation and unitary evolution."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .fock import FockSpace, FockState, Sector, annihilate, create, inner_product
from .lattice import (LatticeSpec, SpeciesStatistics, SpinAlgebra, free_dirac_matrix,
                      make_spin_algebra)

log = logging.getLogger(__name__)


def default_coupling(ds: int, strength: float = 0.5) -> np.ndarray:
    """``g[r, rbar, s] = strength`` when ``r == rbar == s``, zero otherwise."""
    g = np.zeros((ds, ds, ds), dtype=complex)
    for r in range(ds):
        g[r, r, r] = strength
    return g


def random_coupling(ds: int, rng, strength: float = 0.5) -> np.ndarray:
    g = rng.standard_normal((ds,) * 3) + 1j * rng.standard_normal((ds,) * 3)
    return strength * g / np.abs(g).max()


@dataclass(frozen=True, eq=False)
class ModelParams:
    spec: LatticeSpec
    algebra: SpinAlgebra
    stats: SpeciesStatistics
    g: np.ndarray
    caps: tuple = (1, 1, 1)

    def __post_init__(self):
        g = np.asarray(self.g, dtype=complex)
        if g.shape != (self.algebra.ds,) * 3:
            raise ValueError(f"coupling shape {g.shape} does not match ds={self.algebra.ds}")
        if not np.all(np.isfinite(g)):
            raise ValueError("coupling has non-finite entries")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "caps", tuple(self.caps))

    @property
    def ds(self) -> int:
        return self.algebra.ds

    @cached_property
    def free(self) -> tuple:
        """One-particle Dirac matrices for x, xbar, y."""
        return tuple(free_dirac_matrix(m, self.spec, self.algebra) for m in self.stats.masses)

    def space(self, max_particles=None, charges=None, caps=None) -> FockSpace:
        return FockSpace.from_caps(self.spec, self.ds, self.stats, caps or self.caps,
                                   max_particles=max_particles, charges=charges)

    def with_(self, **kw) -> "ModelParams":
        fields = dict(spec=self.spec, algebra=self.algebra, stats=self.stats, g=self.g, caps=self.caps)
        fields.update(kw)
        return ModelParams(**fields)


def make_params(d=1, L=12, a=1.0, dt=0.25, eps=(1, 1, 1), masses=(1.0, 1.0, 1.0),
                lam=0.5, caps=(1, 1, 1), g=None) -> ModelParams:
    spec = LatticeSpec(d=d, L=L, a=a, dt=dt)
    algebra = make_spin_algebra(d)
    stats = SpeciesStatistics(*eps, *masses)
    if g is None:
        g = default_coupling(algebra.ds, lam)
    return ModelParams(spec, algebra, stats, g, caps)


def apply_on_axis(mat, block, axis):
    """Apply a one-particle matrix to one slot axis of a block."""
    return np.moveaxis(np.tensordot(mat, block, axes=([1], [axis])), 0, axis)


def _pair_creation(params: ModelParams, src, tgt: Sector):
    """Pair-creation term: y at x_j = xbar_jbar converts from the (M-1, Mbar-1, N+1) block."""
    M, Mb, N = tgt
    eps_x, eps_b, eps_y = params.stats.eps
    S, ds = params.spec.n_sites, params.ds
    n = tgt.n
    # src axes: x-others, xbar-others, y, y_new -> split y_new into (site, spin)
    src = src.reshape(src.shape[:-1] + (S, ds))
    tmp = np.einsum("...us,abs->...uab", src, params.g) / params.spec.cell_volume
    embedded = tmp[..., :, :, None, :] * np.eye(S)[:, None, :, None]
    embedded = embedded.reshape(tmp.shape[:-3] + (S * ds, S * ds))
    pref = np.sqrt((N + 1) / (M * Mb)) * eps_y**N
    out = 0
    for j in range(1, M + 1):
        for jb in range(1, Mb + 1):
            sign = eps_x ** (j + 1) * eps_b ** (jb + 1)
            out = out + sign * np.moveaxis(embedded, [n - 2, n - 1], [j - 1, M + jb - 1])
    return pref * out


def _pair_annihilation(params: ModelParams, src, tgt: Sector):
    """Pair-annihilation term: x and xbar both placed at y_k, from the (M+1, Mbar+1, N-1) block."""
    M, Mb, N = tgt
    eps_x, eps_b, eps_y = params.stats.eps
    S, ds = params.spec.n_sites, params.ds
    # src axes: x (M), x_new, xbar (Mb), xbar_new, y (N-1)
    moved = np.moveaxis(src, [M, M + 1 + Mb], [-2, -1])
    moved = moved.reshape(moved.shape[:-2] + (S, ds, S, ds))
    diag = np.diagonal(moved, axis1=-4, axis2=-2)  # (..., ds, ds, S)
    contracted = np.einsum("...abu,abs->...us", diag, params.g.conj())
    contracted = contracted.reshape(contracted.shape[:-2] + (S * ds,))
    pref = np.sqrt((M + 1) * (Mb + 1) / N) * eps_x**M * eps_b**Mb
    out = 0
    for k in range(1, N + 1):
        out = out + eps_y ** (k + 1) * np.moveaxis(contracted, -1, M + Mb + k - 1)
    return pref * out


def apply_H(params: ModelParams, psi: FockState, track_leakage: bool = False) -> FockState:
    """Apply the single-time Hamiltonian by direct transcription of its sector formula.

    Contributions into sectors outside ``psi.space`` are dropped; with
    ``track_leakage`` their norm is stored in the result's ``leakage``.
    """
    space = psi.space
    out = {}
    for tgt in space.sectors:
        blk = np.zeros(space.block_shape(tgt), dtype=complex)
        for axis, sp in enumerate(tgt.slot_species()):
            blk += apply_on_axis(params.free[sp], psi.blocks[tgt], axis)
        out[tgt] = blk + _interaction_into(params, psi.blocks, tgt, space)
    leak = 0.0
    if track_leakage:
        leak = _leakage_norm(params, psi)
    return FockState(space, out, psi.leakage + leak)


def _interaction_into(params, blocks, tgt: Sector, space) -> np.ndarray:
    M, Mb, N = tgt
    res = 0
    src = Sector(M - 1, Mb - 1, N + 1)
    if M >= 1 and Mb >= 1 and src in space:
        res = res + _pair_creation(params, blocks[src], tgt)
    src = Sector(M + 1, Mb + 1, N - 1)
    if N >= 1 and src in space:
        res = res + _pair_annihilation(params, blocks[src], tgt)
    return res


def _leakage_norm(params, psi: FockState) -> float:
    """Norm of the part of ``H psi`` that lands in sectors missing from the space."""
    space = psi.space
    missing = set()
    for s in space.sectors:
        for cand in (Sector(s.M + 1, s.Mbar + 1, s.N - 1), Sector(s.M - 1, s.Mbar - 1, s.N + 1)):
            if min(cand) >= 0 and cand not in space:
                missing.add(cand)
    total = 0.0
    w = space.spec.cell_volume
    for tgt in missing:
        extra = _interaction_into(params, psi.blocks, tgt, space)
        if not np.isscalar(extra):
            total += w**tgt.n * np.vdot(extra, extra).real
    return float(np.sqrt(total))


def apply_H_ladder(params: ModelParams, psi: FockState) -> FockState:
    """Same Hamiltonian assembled only from creation/annihilation operators.

    ``H = sum a^d a^dag h a`` per species plus
    ``sum_x a^d (g a^dag abar^dag b + g* a abar b^dag)``.  Slow; a cross-check only.
    """
    space = psi.space
    S, ds = params.spec.n_sites, params.ds
    vol = params.spec.cell_volume
    total = FockState.zeros(space)
    for sp in range(3):
        h = params.free[sp]
        for col in range(S * ds):
            lowered = annihilate(sp, col // ds, col % ds, psi)
            for row in np.nonzero(np.abs(h[:, col]) > 0)[0]:
                total = total + (vol * h[row, col]) * create(sp, row // ds, row % ds, lowered)
    g = params.g
    for x in range(S):
        for s in range(ds):
            down = annihilate(2, x, s, psi)
            up = create(2, x, s, psi)
            for r in range(ds):
                for rb in range(ds):
                    if g[r, rb, s] != 0:
                        term = create(0, x, r, create(1, x, rb, down))
                        total = total + (vol * g[r, rb, s]) * term
                        term = annihilate(0, x, r, annihilate(1, x, rb, up))
                        total = total + (vol * np.conj(g[r, rb, s])) * term
    total.leakage = psi.leakage
    return total


def hamiltonian_matrix(params: ModelParams, space: FockSpace) -> np.ndarray:
    dim = space.dim
    mat = np.zeros((dim, dim), dtype=complex)
    for col in range(dim):
        e = np.zeros(dim, dtype=complex)
        e[col] = 1.0
        mat[:, col] = apply_H(params, FockState.from_vector(space, e)).to_vector()
    return mat


class IntegratorError(RuntimeError):
    """Raised when the norm drift of an evolution exceeds its bound."""


@dataclass
class Evolution:
    times: np.ndarray
    states: list
    norms: np.ndarray
    leakage: np.ndarray
    method: str

    @property
    def final(self) -> FockState:
        return self.states[-1]

    def sector_probabilities(self) -> list:
        return [st.sector_probabilities() for st in self.states]


def _metric(space: FockSpace) -> np.ndarray:
    w = space.spec.cell_volume
    return np.concatenate([np.full(space.n1**s.n, w**s.n) for s in space.sectors])


class SingleTimePropagator:
    """Exact propagator ``exp(-i H t)`` on a Fock space.

    Uses a dense eigendecomposition when ``space.dim <= dense_limit`` and
    ``expm_multiply`` on the matrix-free operator otherwise.
    """

    def __init__(self, params: ModelParams, space: FockSpace, dense_limit: int = 3000):
        self.params, self.space = params, space
        self.dense = space.dim <= dense_limit
        if self.dense:
            H = hamiltonian_matrix(params, space)
            # the lattice metric is a^(d n) per sector; symmetrize before eigh
            w = np.sqrt(_metric(space))
            self.energies, vecs = scipy.linalg.eigh((w[:, None] * H) / w[None, :])
            self._w = w
            self._vecs = vecs
        else:
            dim = space.dim
            w = np.sqrt(_metric(space))
            self._w = w

            # -iH in the metric-scaled basis is anti-Hermitian, so rmatvec is -matvec
            def mv(u):
                v = u.ravel() / w
                return w * (-1j) * apply_H(params, FockState.from_vector(space, v)).to_vector()

            self._op = spla.LinearOperator((dim, dim), dtype=complex, matvec=mv, rmatvec=lambda u: -mv(u))

    def __call__(self, psi: FockState, t: float) -> FockState:
        v = psi.to_vector()
        if self.dense:
            c = self._vecs.conj().T @ (self._w * v)
            out = (self._vecs @ (np.exp(-1j * self.energies * t) * c)) / self._w
        else:
            out = spla.expm_multiply(self._op * t, self._w * v, traceA=0.0) / self._w
        return FockState.from_vector(self.space, out)

    def matrix(self, t: float) -> np.ndarray:
        if not self.dense:
            raise ValueError("propagator matrix only available in dense mode")
        U = (self._vecs * np.exp(-1j * self.energies * t)) @ self._vecs.conj().T
        return U * (1 / self._w)[:, None] * self._w[None, :]


def _rk4_step(params, psi: FockState, h: float) -> FockState:
    def f(st):
        return apply_H(params, st) * (-1j)

    k1 = f(psi)
    k2 = f(psi + k1 * (h / 2))
    k3 = f(psi + k2 * (h / 2))
    k4 = f(psi + k3 * h)
    return psi + (k1 + 2 * k2 + 2 * k3 + k4) * (h / 6)


def evolve_single(params: ModelParams, psi0: FockState, t: float, steps: int = 1,
                  method: str = "auto", max_norm_drift: float = 1e-6,
                  dense_limit: int = 3000) -> Evolution:
    """Integrate ``i dpsi/dt = H psi`` from 0 to ``t``, recording ``steps`` intervals.

    ``method`` is ``"exact"`` (eigendecomposition or ``expm_multiply``),
    ``"rk4"`` (classic fourth-order stepper with step ``t/steps``) or ``"auto"``.
    """
    if t < 0 or steps < 1:
        raise ValueError("need t >= 0 and steps >= 1")
    times = np.linspace(0.0, t, steps + 1)
    if method == "auto":
        method = "exact"
    states = [psi0.copy()]
    if method == "exact":
        prop = SingleTimePropagator(params, psi0.space, dense_limit)
        for tn in times[1:]:
            states.append(prop(psi0, tn))
    elif method == "rk4":
        h = t / steps
        for _ in times[1:]:
            states.append(_rk4_step(params, states[-1], h))
    else:
        raise ValueError(f"unknown method {method!r}")
    norms = np.array([s.norm() for s in states])
    rates = np.array([_leakage_norm(params, s) for s in states])
    leakage = np.concatenate([[0.0], np.cumsum(0.5 * (rates[1:] + rates[:-1]) * np.diff(times))])
    for s, lk in zip(states, leakage):
        s.leakage = psi0.leakage + float(lk)
    drift = float(np.abs(norms - norms[0]).max())
    if drift > max_norm_drift:
        raise IntegratorError(f"norm drift {drift:.3e} exceeds bound {max_norm_drift:.1e} "
                              f"(method={method}, steps={steps}, t={t})")
    log.debug("evolve_single: method=%s drift=%.2e leakage=%.2e", method, drift, leakage[-1])
    return Evolution(times, states, norms, leakage, method)


def expectation(params, psi: FockState) -> float:
    return float(inner_product(psi, apply_H(params, psi)).real)
