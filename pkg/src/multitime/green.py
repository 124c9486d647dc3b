"""Lattice Green functions with delta-spinor initial data weighted by the coupling."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeSpec

CSV_HEADER = ("t", "z", "r", "rbar", "s", "re", "im")


class GreenFunction:
    """Exact lattice Green function ``G`` (``which="G"``) or ``Gbar`` (``which="Gbar"``).

    ``G[z, r, rbar, s](t)`` solves the free Dirac equation of x in ``(z, r)``;
    ``Gbar`` solves the xbar equation in ``(z, rbar)``.  Both start from
    ``g[r, rbar, s] * delta_{z,0} / a**d``.  Slices are computed from an
    eigendecomposition of the one-particle operator, so any real ``t`` works.
    """

    def __init__(self, params, which: str = "G"):
        if which not in ("G", "Gbar"):
            raise ValueError(f"which must be 'G' or 'Gbar', got {which!r}")
        self.params, self.which = params, which
        self.spec: LatticeSpec = params.spec
        ds = params.ds
        h = params.free[0 if which == "G" else 1]
        self.energies, self.vecs = np.linalg.eigh(h)
        # rows of V^dagger belonging to the origin site
        self._origin_rows = self.vecs.conj().T[:, :ds]
        self._cache = {}

    def propagator_columns(self, t: float) -> np.ndarray:
        """``exp(-i h t)[:, origin spins]`` reshaped to (n_sites, ds, ds)."""
        cols = (self.vecs * np.exp(-1j * self.energies * t)) @ self._origin_rows
        return cols.reshape(self.spec.n_sites, self.params.ds, self.params.ds)

    def slice(self, t: float) -> np.ndarray:
        key = round(float(t), 12)
        out = self._cache.get(key)
        if out is None:
            U = self.propagator_columns(t)
            g = self.params.g / self.spec.cell_volume
            if self.which == "G":
                out = np.einsum("zrq,qbs->zrbs", U, g)
            else:
                out = np.einsum("zbq,rqs->zrbs", U, g)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = out
        return out

    def value(self, t: float, z: int) -> np.ndarray:
        return self.slice(t)[z]


@dataclass
class GreenTable:
    """Green function tabulated on ``t_n = n dt`` for ``n = -nT .. nT``."""

    values: np.ndarray  # (2 nT + 1, n_sites, ds, ds, ds)
    dt: float
    nT: int
    which: str
    spec: LatticeSpec

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(-self.nT, self.nT + 1)

    @property
    def T(self) -> float:
        return self.nT * self.dt

    def index(self, t: float) -> int:
        n = t / self.dt
        k = int(round(n))
        if abs(n - k) > 1e-9 or abs(k) > self.nT:
            raise ValueError(f"time {t} is not on the table grid (dt={self.dt}, T={self.T})")
        return k + self.nT

    def slice(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]

    def value(self, t: float, z: int) -> np.ndarray:
        return self.values[self.index(t), z]

    def time_derivative(self, t: float) -> np.ndarray:
        """Centered difference in time of the slice at ``t``."""
        return (self.slice(t + self.dt) - self.slice(t - self.dt)) / (2 * self.dt)

    def csv_rows(self):
        """Rows ``(t, z, r, rbar, s, re, im)`` in table order."""
        ds = self.values.shape[-1]
        for it, t in enumerate(self.times):
            for z in range(self.spec.n_sites):
                for r in range(ds):
                    for rb in range(ds):
                        for s in range(ds):
                            v = self.values[it, z, r, rb, s]
                            yield (float(t), z, r, rb, s, float(v.real), float(v.imag))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for row in self.csv_rows():
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def compute_green(params, T: float, which: str = "G", dt: float | None = None) -> GreenTable:
    """Tabulate ``G`` or ``Gbar`` on ``[-T, T]`` with the exact one-particle propagator."""
    spec = params.spec
    dt = spec.dt if dt is None else dt
    if T > spec.L * spec.a / 4 + 1e-12:
        raise ValueError(f"T={T} > L a / 4 = {spec.L * spec.a / 4}: tail would wrap around the torus")
    nT = int(round(T / dt))
    if abs(nT * dt - T) > 1e-9:
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    fn = GreenFunction(params, which)
    times = dt * np.arange(-nT, nT + 1)
    values = np.stack([fn.slice(t) for t in times])
    return GreenTable(values, dt, nT, which, spec)


def spacelike_residual(table: GreenTable, margin: float) -> float:
    """Largest ``|G(t, z)|`` with ``|z| >= |t| + margin`` (and ``|z| > |t|``), relative to ``max |G|``.

    ``|z|`` is the minimum-image length of the lattice offset.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    mag = np.abs(table.values).max(axis=(2, 3, 4))  # (nt, n_sites)
    dist = table.spec.offset_length[None, :]
    t = np.abs(table.times)[:, None]
    region = (dist >= t + margin - 1e-12) & (dist > t + 1e-12)
    if not region.any():
        raise ValueError(f"no spacelike table entries at margin {margin}")
    return float(mag[region].max() / mag.max())


def spacelike_abs_max(table: GreenTable, margin: float) -> float:
    """Same region as :func:`spacelike_residual` but the absolute maximum entry."""
    mag = np.abs(table.values).max(axis=(2, 3, 4))
    dist = table.spec.offset_length[None, :]
    t = np.abs(table.times)[:, None]
    region = (dist >= t + margin - 1e-12) & (dist > t + 1e-12)
    if not region.any():
        raise ValueError(f"no spacelike table entries at margin {margin}")
    return float(mag[region].max())


def evolution_residual(table: GreenTable, params) -> np.ndarray:
    """``|| i dG/dt - h G ||_max`` per interior time slice (centered differences)."""
    h = params.free[0 if table.which == "G" else 1]
    S, ds = table.spec.n_sites, params.ds
    out = []
    for t in table.times[1:-1]:
        G = table.slice(t)
        if table.which == "G":
            hG = np.einsum("pq,qbs->pbs", h, G.reshape(S * ds, ds, ds)).reshape(G.shape)
        else:
            Gt = np.moveaxis(G, 2, 1).reshape(S * ds, ds, ds)  # (z, rbar), r, s
            hG = np.moveaxis(np.einsum("pq,qrs->prs", h, Gt).reshape(S, ds, ds, ds), 1, 2)
        res = 1j * table.time_derivative(t) - hG
        out.append(np.abs(res).max())
    return np.array(out)
