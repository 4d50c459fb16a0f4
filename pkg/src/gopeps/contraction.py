"""Single-layer contraction of a PEPS at fixed spin configurations.

Everything here works on a batch of configurations at once: every array
carries a leading walker axis ``w``. Boundary MPS tensors have layout
``(w, left, phys, right)`` and site tensors at fixed spin ``(w, l, r, u, d)``.

A :class:`WalkerBatch` owns the configurations and lazily caches the top and
bottom boundary-MPS stacks. Amplitude ratios for local changes are evaluated
inside a "strip" (one or two rows sandwiched between a top and a bottom
boundary), so the numerator and denominator see the same environment.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lattice import LatticeSpec, build_bonds, spins_to_index
from .peps import PepsState
from .tensors import batched_tensordot as btd

__all__ = [
    "BoundaryMps",
    "Amplitude",
    "ContractionError",
    "WalkerBatch",
    "row_absorb",
    "amplitude",
    "single_layer_environments",
    "amplitude_bruteforce",
]

logger = logging.getLogger(__name__)


class ContractionError(RuntimeError):
    """Non-finite values appeared while contracting."""


@dataclass
class BoundaryMps:
    """Batched boundary MPS; tensors are ``(w, left, phys, right)``."""

    tensors: list[np.ndarray]
    log_scale: np.ndarray

    @classmethod
    def trivial(cls, cols: int, batch: int = 1) -> BoundaryMps:
        return cls([np.ones((batch, 1, 1, 1)) for _ in range(cols)], np.zeros(batch))

    @property
    def batch(self) -> int:
        return self.tensors[0].shape[0]

    def bond_dims(self) -> list[int]:
        return [t.shape[3] for t in self.tensors[:-1]]


@dataclass(frozen=True)
class Amplitude:
    """``W = sign * exp(log_magnitude)``; ``sign == 0`` marks an exact zero."""

    log_magnitude: float
    sign: int

    @property
    def value(self) -> float:
        return 0.0 if self.sign == 0 else self.sign * float(np.exp(self.log_magnitude))


def _compress(tensors: list[np.ndarray], Dc: int) -> tuple[list[np.ndarray], np.ndarray]:
    """QR sweep left to right, truncated SVD sweep right to left, normalize."""
    ts = list(tensors)
    w = ts[0].shape[0]
    n = len(ts)
    for c in range(n - 1):
        _, a, p, b = ts[c].shape
        q, r = np.linalg.qr(ts[c].reshape(w, a * p, b))
        k = q.shape[2]
        ts[c] = q.reshape(w, a, p, k)
        nxt = ts[c + 1]
        ts[c + 1] = np.matmul(r, nxt.reshape(w, b, -1)).reshape(w, k, nxt.shape[2], nxt.shape[3])
    for c in range(n - 1, 0, -1):
        _, a, p, b = ts[c].shape
        u, s, vt = np.linalg.svd(ts[c].reshape(w, a, p * b), full_matrices=False)
        k = min(Dc, s.shape[1])
        ts[c] = np.ascontiguousarray(vt[:, :k]).reshape(w, k, p, b)
        prev = ts[c - 1]
        us = u[:, :, :k] * s[:, None, :k]
        ts[c - 1] = np.matmul(prev.reshape(w, -1, a), us).reshape(w, prev.shape[1], prev.shape[2], k)
    norm = np.sqrt(np.einsum("wi,wi->w", ts[0].reshape(w, -1), ts[0].reshape(w, -1)))
    zero = norm == 0.0
    safe = np.where(zero, 1.0, norm)
    ts[0] = ts[0] / safe[:, None, None, None]
    with np.errstate(divide="ignore"):
        log_norm = np.where(zero, -np.inf, np.log(safe))
    return ts, log_norm


def _absorb(bmps: BoundaryMps, sites: Sequence[np.ndarray], Dc: int, from_top: bool) -> BoundaryMps:
    new = []
    for t, a in zip(bmps.tensors, sites):
        w, al, _, ar = t.shape
        _, l, r, u, d = a.shape
        if from_top:
            x = btd(t, a, ([1], [2]))  # (a, b, l, r, d)
            new.append(x.transpose(0, 1, 3, 5, 2, 4).reshape(w, al * l, d, ar * r))
        else:
            x = btd(t, a, ([1], [3]))  # (a, b, l, r, u)
            new.append(x.transpose(0, 1, 3, 5, 2, 4).reshape(w, al * l, u, ar * r))
    ts, log_norm = _compress(new, Dc)
    return BoundaryMps(ts, bmps.log_scale + log_norm)


def _batched_row(row: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [a[None] if a.ndim == 4 else a for a in row]


def row_absorb(bmps: BoundaryMps, row: Sequence[np.ndarray], Dc: int, from_top: bool = True) -> BoundaryMps:
    """Absorb one row of spin-fixed ``(l, r, u, d)`` tensors and recompress to ``Dc``."""
    if Dc < 1:
        raise ValueError("Dc must be >= 1")
    row = _batched_row(row)
    if len(row) != len(bmps.tensors):
        raise ValueError(f"row has {len(row)} columns, boundary has {len(bmps.tensors)}")
    return _absorb(bmps, row, Dc, from_top)


def _lstep(L, top_t, sites, bot_t):
    """Extend a left partial ``(w, t, l1..lk, b)`` by one column."""
    k = len(sites)
    x = btd(L, top_t, ([0], [0]))
    x = btd(x, sites[0], ([0, k + 1], [0, 2]))
    for a in sites[1:]:
        x = btd(x, a, ([0, x.ndim - 2], [0, 2]))
    return btd(x, bot_t, ([0, x.ndim - 2], [0, 1]))


def _rstep(R, top_t, sites, bot_t):
    """Extend a right partial ``(w, t, l1..lk, b)`` by one column to the left."""
    x = btd(top_t, R, ([2], [0]))
    x = btd(x, sites[0], ([1, 2], [2, 1]))
    for a in sites[1:]:
        x = btd(x, a, ([1, x.ndim - 2], [1, 2]))
    return btd(x, bot_t, ([1, x.ndim - 2], [2, 1]))


def _close(L, R):
    w = L.shape[0]
    return np.einsum("wi,wi->w", L.reshape(w, -1), R.reshape(w, -1))


def _ones(w, k):
    return np.ones((w,) + (1,) * (k + 2))


class Strip:
    """``k`` consecutive rows between a top and a bottom boundary.

    Right partials are built eagerly, left partials on demand. ``value`` is
    the strip contraction relative to ``exp(log_scale)``.
    """

    def __init__(self, top: BoundaryMps, rows: list[list[np.ndarray]], bottom: BoundaryMps):
        self.top = top.tensors
        self.bot = bottom.tensors
        self.rows = rows
        self.log_scale = top.log_scale + bottom.log_scale
        self.k = len(rows)
        self.cols = len(self.top)
        w = self.top[0].shape[0]
        self.right = [None] * (self.cols + 1)
        self.right[self.cols] = _ones(w, self.k)
        for c in range(self.cols - 1, -1, -1):
            self.right[c] = _rstep(self.right[c + 1], self.top[c], self.column(c), self.bot[c])
        self._left = [_ones(w, self.k)]
        self.value = self.right[0].reshape(w)

    def column(self, c):
        return [row[c] for row in self.rows]

    def left(self, c: int) -> np.ndarray:
        while len(self._left) <= c:
            j = len(self._left) - 1
            self._left.append(_lstep(self._left[j], self.top[j], self.column(j), self.bot[j]))
        return self._left[c]

    def modified_value(self, c0: int, columns: list[list[np.ndarray]]) -> np.ndarray:
        """Strip value with columns ``c0 .. c0+len(columns)-1`` replaced."""
        L = self.left(c0)
        for i, col in enumerate(columns):
            L = _lstep(L, self.top[c0 + i], col, self.bot[c0 + i])
        return _close(L, self.right[c0 + len(columns)])

    def ratio(self, c0: int, columns: list[list[np.ndarray]]) -> np.ndarray:
        return _ratio(self.modified_value(c0, columns), self.value)

    def environment(self, c: int) -> np.ndarray:
        """Single-row strips only: ``(w, l, r, u, d)`` contraction of all but column ``c``."""
        x = btd(self.left(c), self.top[c], ([0], [0]))  # (l, b, u, t')
        x = btd(x, self.right[c + 1], ([3], [0]))  # (l, b, u, r, b')
        x = btd(x, self.bot[c], ([1, 4], [0, 2]))  # (l, u, r, d)
        return x.transpose(0, 1, 3, 2, 4)


class WalkerBatch:
    """A batch of spin configurations of one PEPS with lazily cached environments.

    ``configs`` holds physical indices (0 = up, 1 = down) with shape
    ``(w, rows, cols)``. The top stack entry ``r`` has rows ``0..r`` absorbed,
    the bottom stack entry ``r`` rows ``r..rows-1``.
    """

    def __init__(self, state: PepsState, configs: np.ndarray, Dc: int):
        if Dc < 1:
            raise ValueError("Dc must be >= 1")
        configs = np.asarray(configs)
        if configs.ndim == 2:
            configs = configs[None]
        if configs.shape[1:] != state.shape:
            raise ValueError(f"configuration shape {configs.shape[1:]} does not match {state.shape}")
        self.state = state
        self.rows, self.cols = state.shape
        self.Dc = Dc
        self.At = state.spin_major()
        self.configs = configs.astype(np.intp, copy=True)
        self.batch = self.configs.shape[0]
        self._top: list[BoundaryMps | None] = [None] * (self.rows + 1)
        self._bottom: list[BoundaryMps | None] = [None] * (self.rows + 1)
        self._top[0] = BoundaryMps.trivial(self.cols, self.batch)
        self._bottom[self.rows] = BoundaryMps.trivial(self.cols, self.batch)

    # -- site tensors -------------------------------------------------
    def site(self, r: int, c: int, flip: bool = False) -> np.ndarray:
        idx = self.configs[:, r, c]
        return self.At[r][c][1 - idx if flip else idx]

    def row(self, r: int, flips: Sequence[int] = ()) -> list[np.ndarray]:
        return [self.site(r, c, c in flips) for c in range(self.cols)]

    # -- boundary stacks ----------------------------------------------
    def top(self, r: int) -> BoundaryMps:
        """Boundary with rows ``0..r`` absorbed (``r = -1`` is trivial)."""
        if self._top[r + 1] is None:
            prev = self.top(r - 1)
            self._top[r + 1] = self._checked(_absorb(prev, self.row(r), self.Dc, True))
        return self._top[r + 1]

    def bottom(self, r: int) -> BoundaryMps:
        """Boundary with rows ``r..rows-1`` absorbed (``r = rows`` is trivial)."""
        if self._bottom[r] is None:
            nxt = self.bottom(r + 1)
            self._bottom[r] = self._checked(_absorb(nxt, self.row(r), self.Dc, False))
        return self._bottom[r]

    @staticmethod
    def _checked(bmps: BoundaryMps) -> BoundaryMps:
        if not all(np.all(np.isfinite(t)) for t in bmps.tensors):
            raise ContractionError("non-finite boundary MPS entries")
        return bmps

    def invalidate_rows(self, r_min: int, r_max: int):
        """Drop cached boundaries that include any row in ``r_min..r_max``."""
        for r in range(r_min, self.rows):
            self._top[r + 1] = None
        for r in range(0, r_max + 1):
            self._bottom[r] = None

    def set_configs(self, configs: np.ndarray):
        changed = np.any(configs != self.configs, axis=(0, 2))
        self.configs = np.asarray(configs, dtype=np.intp).copy()
        if changed.any():
            rows = np.flatnonzero(changed)
            self.invalidate_rows(int(rows[0]), int(rows[-1]))

    def strip(self, r: int, k: int = 1) -> Strip:
        return Strip(self.top(r - 1), [self.row(r + i) for i in range(k)], self.bottom(r + k))

    # -- amplitudes ---------------------------------------------------
    def log_amplitude(self) -> tuple[np.ndarray, np.ndarray]:
        """``(sign, log|W|)`` from the full top-down contraction."""
        bm = self.top(self.rows - 1)
        v = bm.tensors[0].reshape(self.batch, 1, -1)
        for t in bm.tensors[1:]:
            v = np.matmul(v, t.reshape(self.batch, t.shape[1], -1))
        v = v.reshape(self.batch)
        if not np.all(np.isfinite(v)):
            raise ContractionError("non-finite amplitude")
        with np.errstate(divide="ignore"):
            return np.sign(v), np.log(np.abs(v)) + bm.log_scale

    def exchange_ratio(self, site_i, site_j) -> np.ndarray:
        """``W(S')/W(S)`` where ``S'`` flips both sites (an exchange if anti-aligned)."""
        (r1, c1), (r2, c2) = sorted([tuple(site_i), tuple(site_j)])
        if r2 - r1 <= 1:
            strip = self.strip(r1, r2 - r1 + 1)
            c_lo, c_hi = min(c1, c2), max(c1, c2)
            flips = {(r1, c1), (r2, c2)}
            cols = [
                [self.site(r1 + i, c, (r1 + i, c) in flips) for i in range(strip.k)]
                for c in range(c_lo, c_hi + 1)
            ]
            return _ratio(strip.modified_value(c_lo, cols), strip.value)
        # far apart: absorb the modified rows r1..r2-1 along the same route as the stack
        bm = self.top(r1 - 1)
        for r in range(r1, r2):
            bm = _absorb(bm, self.row(r, [c1] if r == r1 else []), self.Dc, True)
        ref = self.strip(r2, 1)
        mod = Strip(bm, [self.row(r2, [c2])], self.bottom(r2 + 1))
        return _ratio(mod.value * np.exp(bm.log_scale - self.top(r2 - 1).log_scale), ref.value)

    # -- measurements -------------------------------------------------
    def local_energy(self, spec: LatticeSpec) -> np.ndarray:
        """``E(S)`` for every walker, ratios taken from cached strips."""
        cfg = self.configs
        s = 1 - 2 * cfg
        flip = self.site
        energy = np.zeros(self.batch)

        def add(coupling, a, b, strip, c0, columns):
            nonlocal energy
            energy += coupling * s[:, a[0], a[1]] * s[:, b[0], b[1]] / 4.0
            anti = cfg[:, a[0], a[1]] != cfg[:, b[0], b[1]]
            if anti.any():
                energy += np.where(anti, 0.5 * coupling * strip().ratio(c0, columns()), 0.0)

        for r in range(self.rows):
            strip = _lazy(lambda r=r: self.strip(r, 1))
            for c in range(self.cols - 1):
                add(spec.j1, (r, c), (r, c + 1), strip, c,
                    lambda: [[flip(r, c, True)], [flip(r, c + 1, True)]])
        for r in range(self.rows - 1):
            strip = _lazy(lambda r=r: self.strip(r, 2))
            for c in range(self.cols):
                add(spec.j1, (r, c), (r + 1, c), strip, c,
                    lambda: [[flip(r, c, True), flip(r + 1, c, True)]])
                if spec.j2 == 0.0 or c + 1 >= self.cols:
                    continue
                add(spec.j2, (r, c), (r + 1, c + 1), strip, c, lambda: [
                    [flip(r, c, True), flip(r + 1, c)],
                    [flip(r, c + 1), flip(r + 1, c + 1, True)],
                ])
                add(spec.j2, (r, c + 1), (r + 1, c), strip, c, lambda: [
                    [flip(r, c), flip(r + 1, c, True)],
                    [flip(r, c + 1, True), flip(r + 1, c + 1)],
                ])
        return energy

    def log_derivatives(self) -> list[list[np.ndarray]]:
        """``Delta = B / W`` at the sampled spin of every site, ``(w, l, r, u, d)``."""
        out = []
        for r in range(self.rows):
            strip = self.strip(r, 1)
            inv = _ratio(np.ones(self.batch), strip.value)
            out.append([strip.environment(c) * inv[:, None, None, None, None] for c in range(self.cols)])
        return out

    # -- Metropolis ---------------------------------------------------
    def sweep(self, uniforms: np.ndarray) -> np.ndarray:
        """One sequential exchange sweep over all NN bonds.

        Bonds are visited row by row: the horizontal bonds of row ``r``
        left to right, then the vertical bonds between ``r`` and ``r+1``.
        ``uniforms`` has shape ``(w, n_nn_bonds)``; returns accepted counts.
        """
        accepted = np.zeros(self.batch, dtype=np.int64)
        k = 0
        for r in range(self.rows):
            # horizontal bonds inside row r
            if self.cols > 1:
                top, bot = self.top(r - 1), self.bottom(r + 1)
                row = self.row(r)
                strip = Strip(top, [row], bot)
                L = strip.left(0)
                changed = False
                for c in range(self.cols - 1):
                    anti = self.configs[:, r, c] != self.configs[:, r, c + 1]
                    if anti.any():
                        cur = [[row[c]], [row[c + 1]]]
                        new = [[self.site(r, c, True)], [self.site(r, c + 1, True)]]
                        acc = self._accept(L, c, cur, new, strip, anti, uniforms[:, k])
                        if acc.any():
                            changed = True
                            accepted += acc
                            self.configs[acc, r, c] ^= 1
                            self.configs[acc, r, c + 1] ^= 1
                            row[c], row[c + 1] = self.site(r, c), self.site(r, c + 1)
                    L = _lstep(L, top.tensors[c], [row[c]], bot.tensors[c])
                    k += 1
                if changed:
                    self.invalidate_rows(r, r)
            # vertical bonds between r and r+1
            if r + 1 < self.rows:
                top, bot = self.top(r - 1), self.bottom(r + 2)
                rows2 = [self.row(r), self.row(r + 1)]
                strip = Strip(top, rows2, bot)
                L = strip.left(0)
                changed = False
                for c in range(self.cols):
                    anti = self.configs[:, r, c] != self.configs[:, r + 1, c]
                    if anti.any():
                        cur = [[rows2[0][c], rows2[1][c]]]
                        new = [[self.site(r, c, True), self.site(r + 1, c, True)]]
                        acc = self._accept(L, c, cur, new, strip, anti, uniforms[:, k])
                        if acc.any():
                            changed = True
                            accepted += acc
                            self.configs[acc, r, c] ^= 1
                            self.configs[acc, r + 1, c] ^= 1
                            rows2[0][c], rows2[1][c] = self.site(r, c), self.site(r + 1, c)
                    L = _lstep(L, top.tensors[c], [rows2[0][c], rows2[1][c]], bot.tensors[c])
                    k += 1
                if changed:
                    self.invalidate_rows(r, r + 1)
            self.top(r)
        return accepted

    @staticmethod
    def _accept(L, c0, cur, new, strip, anti, u):
        Lc, Ln = L, L
        for i in range(len(cur)):
            Lc = _lstep(Lc, strip.top[c0 + i], cur[i], strip.bot[c0 + i])
            Ln = _lstep(Ln, strip.top[c0 + i], new[i], strip.bot[c0 + i])
        R = strip.right[c0 + len(cur)]
        w_cur, w_new = _close(Lc, R), _close(Ln, R)
        ratio = _ratio(w_new, w_cur)
        return anti & (u < ratio * ratio)


def _lazy(factory):
    cache = []

    def get():
        if not cache:
            cache.append(factory())
        return cache[0]

    return get


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(den == 0.0, np.where(num == 0.0, 0.0, np.inf), out)


def _single(state: PepsState, config, Dc: int) -> WalkerBatch:
    config = np.asarray(config)
    if config.shape != state.shape:
        raise ValueError(f"configuration shape {config.shape} does not match {state.shape}")
    return WalkerBatch(state, spins_to_index(config)[None], Dc)


def amplitude(state: PepsState, config, Dc: int) -> Amplitude:
    """``W(S)`` for a ``+-1`` configuration via top-down boundary-MPS contraction."""
    sign, logabs = _single(state, config, Dc).log_amplitude()
    return Amplitude(float(logabs[0]), int(sign[0]))


def single_layer_environments(state: PepsState, config, Dc: int) -> list[list[np.ndarray]]:
    """``B^{s_m}(S)`` as ``(l, r, u, d)`` arrays: contracting ``B`` with the spin-fixed site gives ``W``."""
    batch = _single(state, config, Dc)
    out = []
    for r in range(batch.rows):
        strip = batch.strip(r, 1)
        scale = np.exp(strip.log_scale[0])
        out.append([strip.environment(c)[0] * scale for c in range(batch.cols)])
    return out


def amplitude_bruteforce(state: PepsState, config) -> float:
    """Exact ``W(S)`` by one uncompressed einsum over the whole network."""
    rows, cols = state.shape
    if rows * cols > 12 or state.bond_dim > 3:
        raise ValueError("amplitude_bruteforce is limited to <= 12 sites and D <= 3")
    idx = spins_to_index(np.asarray(config))
    if idx.shape != state.shape:
        raise ValueError(f"configuration shape {idx.shape} does not match {state.shape}")
    letters = iter("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
    h = [[next(letters) for _ in range(cols + 1)] for _ in range(rows)]
    v = [[next(letters) for _ in range(cols)] for _ in range(rows + 1)]
    terms, operands = [], []
    for r in range(rows):
        for c in range(cols):
            terms.append(h[r][c] + h[r][c + 1] + v[r][c] + v[r + 1][c])
            operands.append(state.tensors[r][c][..., idx[r, c]])
    return float(np.einsum(",".join(terms) + "->", *operands, optimize="greedy"))


def nn_bond_count(spec: LatticeSpec) -> int:
    return len(build_bonds(spec)[0])
