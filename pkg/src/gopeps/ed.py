"""Exact diagonalization of the J1-J2 model in a fixed Sz sector.

Configurations are bit codes with bit ``N-1-k`` set when site ``k``
(row-major) is down, so the code equals the index of the state in the
Kronecker-ordered full Hilbert space. Within a sector the basis is the
ascending list of codes; a code's position is its colexicographic rank.
Ranks are summed from per-12-bit-chunk tables of binomial partial sums,
which costs a few KB instead of a full code-to-index map.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse.linalg as sla

from .contraction import amplitude_bruteforce
from .lattice import LatticeSpec, build_bonds
from .peps import PepsState

__all__ = [
    "SectorBasis",
    "EdResult",
    "EdError",
    "apply_hamiltonian",
    "exact_ground_energy",
    "expand_peps",
    "rayleigh_quotient",
    "dense_hamiltonian",
]

logger = logging.getLogger(__name__)

MAX_SPARSE_SITES = 24
MAX_DENSE_SITES = 16
MAX_EXPAND_SITES = 12


class EdError(RuntimeError):
    pass


def _binomial_table(n: int) -> np.ndarray:
    table = np.zeros((n + 1, n + 2), dtype=np.int64)
    for i in range(n + 1):
        for k in range(n + 2):
            table[i, k] = math.comb(i, k)
    return table


@dataclass
class SectorBasis:
    """Ascending bit codes of all configurations with total Sz = ``sz``."""

    n_sites: int
    sz: int
    codes: np.ndarray
    binom: np.ndarray
    _tables: tuple | None = field(default=None, repr=False)

    @property
    def tables(self) -> tuple:
        if self._tables is None:
            self._tables = _rank_tables(self.n_sites, self.binom) + (min(self.n_sites, HALF),)
        return self._tables

    @classmethod
    def build(cls, n_sites: int, sz: int = 0) -> SectorBasis:
        twice = n_sites - 2 * sz
        if twice != int(twice) or int(twice) % 2 or not 0 <= int(twice) // 2 <= n_sites:
            raise ValueError(f"Sz={sz} is impossible on {n_sites} sites")
        return cls.with_down(n_sites, int(twice) // 2)

    @classmethod
    def with_down(cls, n_sites: int, n_down: int) -> SectorBasis:
        sz = (n_sites - 2 * n_down) / 2
        sz = int(sz) if sz == int(sz) else sz
        return cls(n_sites, sz, _sector_codes(n_sites, n_down), _binomial_table(n_sites))

    @property
    def n_down(self) -> int:
        return int(round(self.n_sites - 2 * self.sz)) // 2

    def __len__(self) -> int:
        return self.codes.size

    def index(self, code: int) -> int:
        return int(_rank(np.int64(code), self.n_sites, self.binom))


def _sector_codes(n: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(1, dtype=np.int64)
    out = np.empty(math.comb(n, k), dtype=np.int64)
    _fill_codes(n, k, out)
    return out


@numba.njit(cache=True)
def _fill_codes(n, k, out):
    # Gosper's hack enumerates k-subsets in ascending integer order
    x = (np.int64(1) << k) - 1
    for i in range(out.size):
        out[i] = x
        c = x & -x
        r = x + c
        x = (((r ^ x) >> 2) // c) | r


@numba.njit(cache=True)
def _rank(code, n, binom):
    rank = 0
    j = 0
    for bit in range(n):
        if (code >> bit) & 1:
            j += 1
            rank += binom[bit, j]
    return rank


HALF = 12


def _rank_tables(n: int, binom: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split colex ranking into a low half and a high half indexed by the low popcount."""
    low_n = min(n, HALF)
    high_n = max(n - HALF, 0)
    low = np.zeros(1 << low_n, dtype=np.int64)
    pop = np.zeros(1 << low_n, dtype=np.int64)
    for code in range(1 << low_n):
        low[code] = _rank(np.int64(code), low_n, binom)
        pop[code] = bin(code).count("1")
    high = np.zeros((1 << high_n, low_n + 1), dtype=np.int64)
    for code in range(1 << high_n):
        for p in range(low_n + 1):
            j, r = p, 0
            for bit in range(high_n):
                if (code >> bit) & 1:
                    j += 1
                    r += binom[bit + low_n, j]
            high[code, p] = r
    return low, pop, high


@numba.njit(cache=True)
def _apply(codes, x, y, pos_a, pos_b, coupling, low, pop, high, half):
    mask = (np.int64(1) << half) - 1
    for i in range(codes.size):
        code = codes[i]
        diag = 0.0
        acc = 0.0
        for b in range(pos_a.size):
            J = coupling[b]
            if J == 0.0:
                continue
            ba = (code >> pos_a[b]) & 1
            bb = (code >> pos_b[b]) & 1
            if ba == bb:
                diag += 0.25 * J
            else:
                diag -= 0.25 * J
                flipped = code ^ ((np.int64(1) << pos_a[b]) | (np.int64(1) << pos_b[b]))
                lo = flipped & mask
                acc += 0.5 * J * x[low[lo] + high[flipped >> half, pop[lo]]]
        y[i] = diag * x[i] + acc


def _bond_arrays(spec: LatticeSpec):
    n = spec.n_sites
    nn, nnn = build_bonds(spec)
    bonds = [b for b in nn + nnn if b.coupling != 0.0]
    pos = lambda s: n - 1 - (s[0] * spec.cols + s[1])
    return (np.array([pos(b.site_a) for b in bonds], dtype=np.int64),
            np.array([pos(b.site_b) for b in bonds], dtype=np.int64),
            np.array([b.coupling for b in bonds], dtype=float))


def apply_hamiltonian(spec: LatticeSpec, basis: SectorBasis, x: np.ndarray) -> np.ndarray:
    """``H @ x`` for a vector ``x`` over ``basis``."""
    pa, pb, J = _bond_arrays(spec)
    y = np.empty_like(x, dtype=float)
    _apply(basis.codes, np.ascontiguousarray(x, dtype=float), y, pa, pb, J, *basis.tables)
    return y


def dense_hamiltonian(spec: LatticeSpec, basis: SectorBasis) -> np.ndarray:
    """Sector Hamiltonian as a dense matrix (columns are ``H`` applied to unit vectors)."""
    if spec.n_sites > MAX_DENSE_SITES:
        raise ValueError(f"dense Hamiltonian limited to {MAX_DENSE_SITES} sites")
    n = len(basis)
    eye = np.eye(n)
    return np.column_stack([apply_hamiltonian(spec, basis, eye[:, i]) for i in range(n)])


@dataclass
class EdResult:
    energy: float
    n_sites: int
    sector: int
    iterations: int
    residual: float
    vector: np.ndarray | None = None
    basis: SectorBasis | None = None

    @property
    def energy_per_site(self) -> float:
        return self.energy / self.n_sites


def exact_ground_energy(spec: LatticeSpec, sector_sz: int = 0, *, return_vector: bool = False,
                        seed: int = 0, tol: float = 1e-9, max_iterations: int = 10000) -> EdResult:
    """Lowest eigenvalue of ``H`` in the sector by Lanczos (ARPACK) on a matrix-free apply.

    Small sectors (dimension <= 400) are diagonalized densely instead.
    """
    n = spec.n_sites
    if n > MAX_SPARSE_SITES:
        raise ValueError(f"exact diagonalization limited to {MAX_SPARSE_SITES} sites, got {n}")
    basis = SectorBasis.build(n, sector_sz)
    dim = len(basis)
    pa, pb, J = _bond_arrays(spec)
    tables = basis.tables
    count = [0]

    def matvec(v):
        count[0] += 1
        v = np.ascontiguousarray(np.ravel(v), dtype=float)
        y = np.empty_like(v)
        _apply(basis.codes, v, y, pa, pb, J, *tables)
        return y

    if dim <= 400:
        h = np.column_stack([matvec(e) for e in np.eye(dim)])
        w, v = np.linalg.eigh(h)
        energy, vec = float(w[0]), v[:, 0]
    else:
        op = sla.LinearOperator((dim, dim), matvec=matvec, dtype=float)
        v0 = np.random.default_rng(seed).standard_normal(dim)
        try:
            w, v = sla.eigsh(op, k=1, which="SA", v0=v0, tol=tol * 1e-3, maxiter=max_iterations, ncv=min(dim, 40))
        except sla.ArpackNoConvergence as exc:
            raise EdError(f"Lanczos did not converge after {max_iterations} restarts") from exc
        energy, vec = float(w[0]), v[:, 0]
    residual = float(np.linalg.norm(matvec(vec) - energy * vec))
    if residual > max(tol, 1e-12) * max(1.0, abs(energy)):
        raise EdError(f"eigenvector residual {residual:.3g} above tolerance")
    return EdResult(energy, n, sector_sz, count[0], residual,
                    vec if return_vector else None, basis if return_vector else None)


def expand_peps(state: PepsState) -> np.ndarray:
    """Dense vector over all ``2^N`` basis states with components ``W(S)``."""
    spec = state.spec
    n = spec.n_sites
    if n > MAX_EXPAND_SITES:
        raise ValueError(f"expand_peps limited to {MAX_EXPAND_SITES} sites")
    codes = np.arange(2 ** n)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)) & 1
    spins = (1 - 2 * bits).reshape(-1, *spec.shape)
    return np.array([amplitude_bruteforce(state, s) for s in spins])


def rayleigh_quotient(state: PepsState, sector_sz: int | None = 0) -> float:
    """Exact ``<Psi|H|Psi>/<Psi|Psi>``, projected onto a sector unless ``sector_sz`` is None."""
    spec = state.spec
    psi = expand_peps(state)
    n = spec.n_sites
    if sector_sz is None:
        bases = [SectorBasis.with_down(n, k) for k in range(n + 1)]
    else:
        bases = [SectorBasis.build(n, sector_sz)]
    num = den = 0.0
    for basis in bases:
        part = psi[basis.codes]
        num += float(part @ apply_hamiltonian(spec, basis, part))
        den += float(part @ part)
    if den == 0.0:
        raise ValueError("state has zero norm in the requested sector")
    return num / den
