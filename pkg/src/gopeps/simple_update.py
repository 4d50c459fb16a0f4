"""Imaginary-time evolution with the simple-update environment.

Internally the state is kept in the Vidal form: bare site tensors ``Gamma``
plus one diagonal ``lambda`` vector per bond. A bond update absorbs the
spectator lambdas, applies the gate to the reduced (QR) cluster, splits it
back by a truncated SVD and divides the spectators out again.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .lattice import Bond, LatticeSpec, build_bonds
from .peps import PHYS_DIM, PepsState, grow_bond_dimension, random_init
from .tensors import qr_split, svd_truncate

__all__ = [
    "SuEnvironment",
    "SuSchedule",
    "SuLogEntry",
    "SuError",
    "heisenberg_term",
    "trotter_gate",
    "su_bond_update",
    "su_nnn_update",
    "run_simple_update",
    "ramp_simple_update",
    "write_su_log",
]

logger = logging.getLogger(__name__)

LAMBDA_CUTOFF = 1e-12

# axis of a site tensor (l, r, u, d, s) that points along each direction
LEFT, RIGHT, UP, DOWN, PHYS = 0, 1, 2, 3, 4
_OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, UP: DOWN, DOWN: UP}


class SuError(RuntimeError):
    """Raised when the evolution produces non-finite tensors or a zero spectrum."""


def heisenberg_term() -> np.ndarray:
    """``S_i . S_j`` as a 4x4 matrix on ``(s_i, s_j)`` with index 0 = up."""
    sz = np.diag([0.5, -0.5])
    sp = np.array([[0.0, 1.0], [0.0, 0.0]])
    return np.kron(sz, sz) + 0.5 * (np.kron(sp, sp.T) + np.kron(sp.T, sp))


def trotter_gate(coupling: float, dtau: float) -> np.ndarray:
    """``exp(-dtau * coupling * S_i.S_j)`` with indices ``(s_i', s_j', s_i, s_j)``.

    The matrix is real symmetric, so input and output index pairs may be
    read in either order.
    """
    if not dtau > 0:
        raise ValueError("dtau must be positive")
    return scipy.linalg.expm(-dtau * coupling * heisenberg_term()).reshape(2, 2, 2, 2)


@dataclass
class SuEnvironment:
    """Bond spectra: ``horizontal[r][c]`` joins (r, c)-(r, c+1), ``vertical[r][c]`` joins (r, c)-(r+1, c)."""

    horizontal: list[list[np.ndarray]]
    vertical: list[list[np.ndarray]]

    @classmethod
    def from_state(cls, state: PepsState) -> SuEnvironment:
        rows, cols = state.shape
        t = state.tensors
        return cls(
            [[np.ones(t[r][c].shape[RIGHT]) for c in range(cols - 1)] for r in range(rows)],
            [[np.ones(t[r][c].shape[DOWN]) for c in range(cols)] for r in range(rows - 1)],
        )

    def copy(self) -> SuEnvironment:
        return SuEnvironment([[x.copy() for x in row] for row in self.horizontal],
                             [[x.copy() for x in row] for row in self.vertical])

    def get(self, site, axis) -> np.ndarray | None:
        """Spectrum on leg ``axis`` of ``site``; ``None`` on an open edge."""
        r, c = site
        rows, cols = len(self.horizontal), len(self.horizontal[0]) + 1
        if axis == RIGHT:
            return self.horizontal[r][c] if c + 1 < cols else None
        if axis == LEFT:
            return self.horizontal[r][c - 1] if c > 0 else None
        if axis == DOWN:
            return self.vertical[r][c] if r + 1 < rows else None
        return self.vertical[r - 1][c] if r > 0 else None

    def set(self, site, axis, value: np.ndarray) -> None:
        r, c = site
        if axis == RIGHT:
            self.horizontal[r][c] = value
        elif axis == LEFT:
            self.horizontal[r][c - 1] = value
        elif axis == DOWN:
            self.vertical[r][c] = value
        else:
            self.vertical[r - 1][c] = value

    def spectra(self) -> list[np.ndarray]:
        return [x for row in self.horizontal for x in row] + [x for row in self.vertical for x in row]


@dataclass(frozen=True)
class SuSchedule:
    """Stages of ``(dtau, convergence_tol, max_sweeps)`` with strictly decreasing ``dtau``."""

    stages: tuple[tuple[float, float, int], ...] = ((0.01, 1e-6, 20000), (0.001, 1e-6, 20000))

    def __post_init__(self):
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        taus = [s[0] for s in self.stages]
        if any(t <= 0 for t in taus) or any(b >= a for a, b in zip(taus, taus[1:])):
            raise ValueError("dtau must be positive and strictly decreasing")
        if any(s[1] <= 0 or s[2] < 1 for s in self.stages):
            raise ValueError("tolerances and max_sweeps must be positive")


@dataclass
class SuLogEntry:
    sweep: int
    dtau: float
    max_change: float
    truncation_error: float = 0.0


def _scale(t: np.ndarray, axis: int, vec: np.ndarray | None, power: float) -> np.ndarray:
    if vec is None:
        return t
    shape = [1] * t.ndim
    shape[axis] = vec.size
    return t * (vec ** power).reshape(shape)


def _spectators(t, site, env, skip, power):
    for axis in (LEFT, RIGHT, UP, DOWN):
        if axis not in skip:
            t = _scale(t, axis, env.get(site, axis), power)
    return t


def _normalize(s: np.ndarray) -> np.ndarray:
    if s.size == 0 or not np.isfinite(s).all() or s[0] <= 0:
        raise SuError("bond spectrum vanished or is non-finite")
    s = s / s[0]
    keep = max(1, int(np.sum(s > LAMBDA_CUTOFF)))
    return s[:keep]


def _check_env(site, env, skip):
    for axis in (LEFT, RIGHT, UP, DOWN):
        if axis in skip:
            continue
        lam = env.get(site, axis)
        if lam is not None and np.any(lam <= 0):
            raise SuError(f"zero lambda on spectator bond of {site}")


def _to_front(t: np.ndarray, axis: int) -> tuple[np.ndarray, list[int]]:
    """Move ``axis`` and the physical axis to the back: ``(others..., axis, s)``."""
    order = [a for a in range(4) if a != axis] + [axis, PHYS]
    return np.transpose(t, order), order


def _from_front(t: np.ndarray, order: list[int]) -> np.ndarray:
    return np.ascontiguousarray(np.transpose(t, np.argsort(order)))


def _bond_axes(bond: Bond) -> tuple[int, int]:
    (ra, ca), (rb, cb) = bond.site_a, bond.site_b
    if ra == rb and cb == ca + 1:
        return RIGHT, LEFT
    if ca == cb and rb == ra + 1:
        return DOWN, UP
    raise ValueError(f"{bond} is not a nearest-neighbour bond in canonical order")


def su_bond_update(a: np.ndarray, b: np.ndarray, env: SuEnvironment, bond: Bond, gate: np.ndarray,
                   D: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Apply ``gate`` on a nearest-neighbour bond of a Vidal-form state.

    ``a`` and ``b`` are the bare tensors of ``bond.site_a`` / ``bond.site_b``;
    spectator spectra are read from ``env``. Returns the new bare tensors, the
    new bond spectrum (max 1) and the discarded weight. ``env`` is not modified.
    """
    ax_a, ax_b = _bond_axes(bond)
    _check_env(bond.site_a, env, (ax_a,))
    _check_env(bond.site_b, env, (ax_b,))
    lam = env.get(bond.site_a, ax_a)
    ta, order_a = _to_front(_spectators(a, bond.site_a, env, (ax_a,), 1.0), ax_a)
    tb, order_b = _to_front(_spectators(b, bond.site_b, env, (ax_b,), 1.0), ax_b)
    qa, ra = qr_split(ta, 3)  # ra: (ka, x, s)
    qb, rb = qr_split(tb, 3)  # rb: (kb, x, t)
    theta = np.einsum("axs,x,bxt->asbt", ra, lam, rb)
    theta = np.einsum("pqst,asbt->apbq", gate, theta)
    svd = svd_truncate(theta, 2, D)
    s = svd.singular_values
    keep = _normalize(s).size
    new_lam = s[:keep] / s[0]
    u = svd.u[..., :keep]  # (ka, s, chi)
    vt = svd.vt[:keep]  # (chi, kb, t)
    new_a = s[0] * np.einsum("xyza,asc->xyzcs", qa, u)
    new_b = np.einsum("xyzb,cbt->xyzct", qb, vt)
    new_a = _spectators(_from_front(new_a, order_a), bond.site_a, env, (ax_a,), -1.0)
    new_b = _spectators(_from_front(new_b, order_b), bond.site_b, env, (ax_b,), -1.0)
    return _finite(new_a), _finite(new_b), new_lam, svd.truncation_error


def _finite(t: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise SuError("non-finite tensor produced by the update")
    return t


def _direction(src, dst) -> int:
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    return {(0, 1): RIGHT, (0, -1): LEFT, (1, 0): DOWN, (-1, 0): UP}[(dr, dc)]


def su_nnn_update(tensors: dict, env: SuEnvironment, site_a, site_m, site_b, gate: np.ndarray,
                  D: int) -> tuple[dict, float]:
    """Apply a two-site ``gate`` on the diagonal pair ``(site_a, site_b)`` through ``site_m``.

    ``tensors`` maps the three sites to bare tensors. The cluster
    ``a - m - b`` is contracted (after reducing ``a`` and ``b`` by QR),
    gated, and split back by two sequential truncated SVDs. ``env`` is
    updated in place with the two new spectra; the new bare tensors and the
    total discarded weight are returned.
    """
    ax_am, ax_ma = _direction(site_a, site_m), _direction(site_m, site_a)
    ax_mb, ax_bm = _direction(site_m, site_b), _direction(site_b, site_m)
    _check_env(site_a, env, (ax_am,))
    _check_env(site_b, env, (ax_bm,))
    _check_env(site_m, env, (ax_ma, ax_mb))
    lam1 = env.get(site_a, ax_am)
    lam2 = env.get(site_b, ax_bm)
    ta, order_a = _to_front(_spectators(tensors[site_a], site_a, env, (ax_am,), 1.0), ax_am)
    tb, order_b = _to_front(_spectators(tensors[site_b], site_b, env, (ax_bm,), 1.0), ax_bm)
    m = _spectators(tensors[site_m], site_m, env, (ax_ma, ax_mb), 1.0)
    ext = [x for x in range(4) if x not in (ax_ma, ax_mb)]
    order_m = [ax_ma] + ext + [PHYS, ax_mb]
    tm = np.transpose(m, order_m)  # (x1, e1, e2, s_m, x2)
    qa, ra = qr_split(ta, 3)  # (ka, x1, s_a)
    qb, rb = qr_split(tb, 3)  # (kb, x2, s_b)
    theta = np.einsum("aip,i,iefmj,j,bjq->apefmbq", ra, lam1, tm, lam2, rb)
    theta = np.einsum("xypq,apefmbq->axefmby", gate, theta)
    first = svd_truncate(theta, 2, D)
    k1 = _normalize(first.singular_values).size
    s1 = first.singular_values[:k1]
    rest = s1[:, None, None, None, None, None] * first.vt[:k1]  # (c1, e1, e2, m, kb, s_b)
    second = svd_truncate(rest, 4, D)
    k2 = _normalize(second.singular_values).size
    s2 = second.singular_values[:k2]
    new_a = np.einsum("xyza,apc->xyzcp", qa, first.u[..., :k1])
    new_b = np.einsum("xyzb,cbq->xyzcq", qb, second.vt[:k2])
    # the normalized spectra drop s1[0]*s2[0]; the middle tensor keeps it
    mid = second.u[..., :k2] * (s1[0] * s2[0] / s1[:, None, None, None, None])  # (c1, e1, e2, m, c2)
    new_m = np.ascontiguousarray(np.transpose(mid, np.argsort(order_m)))
    out = {
        site_a: _spectators(_from_front(new_a, order_a), site_a, env, (ax_am,), -1.0),
        site_b: _spectators(_from_front(new_b, order_b), site_b, env, (ax_bm,), -1.0),
        site_m: _spectators(new_m, site_m, env, (ax_ma, ax_mb), -1.0),
    }
    env.set(site_a, ax_am, s1 / s1[0])
    env.set(site_b, ax_bm, s2 / s2[0])
    err = float(np.hypot(first.truncation_error, second.truncation_error))
    return {k: _finite(v) for k, v in out.items()}, err


def _normalize_tensor(t: np.ndarray) -> np.ndarray:
    m = np.max(np.abs(t))
    if not np.isfinite(m) or m == 0:
        raise SuError("tensor vanished or diverged")
    return t / m


def _nnn_paths(bond: Bond) -> list:
    (ra, ca), (rb, cb) = bond.site_a, bond.site_b
    return [(ra, cb), (rb, ca)]


def _sweep(gammas, env: SuEnvironment, spec: LatticeSpec, gates: dict, D: int) -> float:
    nn, nnn = build_bonds(spec)
    horizontal = [b for b in nn if b.site_a[0] == b.site_b[0]]
    vertical = [b for b in nn if b.site_a[0] != b.site_b[0]]
    err = 0.0
    for bond in horizontal + vertical:
        ax_a, _ = _bond_axes(bond)
        (ra, ca), (rb, cb) = bond.site_a, bond.site_b
        a, b, lam, e = su_bond_update(gammas[ra][ca], gammas[rb][cb], env, bond, gates["nn"], D)
        gammas[ra][ca], gammas[rb][cb] = _normalize_tensor(a), _normalize_tensor(b)
        env.set(bond.site_a, ax_a, lam)
        err = max(err, e)
    if "nnn" in gates:
        for bond in nnn:
            for mid in _nnn_paths(bond):
                sites = {s: gammas[s[0]][s[1]] for s in (bond.site_a, mid, bond.site_b)}
                new, e = su_nnn_update(sites, env, bond.site_a, mid, bond.site_b, gates["nnn"], D)
                for (r, c), t in new.items():
                    gammas[r][c] = _normalize_tensor(t)
                err = max(err, e)
    return err


def _spectrum_change(old: list[np.ndarray], new: list[np.ndarray]) -> float:
    change = 0.0
    for x, y in zip(old, new):
        n = max(x.size, y.size)
        xp = np.pad(x, (0, n - x.size))
        yp = np.pad(y, (0, n - y.size))
        change = max(change, float(np.max(np.abs(xp - yp))))
    return change


def absorb_environment(gammas, env: SuEnvironment, spec: LatticeSpec, D: int) -> PepsState:
    """Plain PEPS with ``sqrt(lambda)`` absorbed into both tensors of each bond."""
    tensors = []
    for r in range(spec.rows):
        row = []
        for c in range(spec.cols):
            t = gammas[r][c]
            for axis in (LEFT, RIGHT, UP, DOWN):
                t = _scale(t, axis, env.get((r, c), axis), 0.5)
            row.append(_normalize_tensor(t))
        tensors.append(row)
    return PepsState(spec, D, tensors)


def run_simple_update(state: PepsState, spec: LatticeSpec, schedule: SuSchedule | None = None,
                      D: int | None = None) -> tuple[PepsState, list[SuLogEntry]]:
    """Evolve ``state`` in imaginary time and return it with the spectra absorbed.

    Each sweep updates horizontal NN bonds row-major, then vertical ones, then
    (for ``j2 != 0``) every diagonal bond as two half-steps, one through each
    intermediate site. A stage ends when the largest change of any bond
    spectrum over one sweep drops below its tolerance.
    """
    schedule = schedule or SuSchedule()
    D = D or state.bond_dim
    if state.shape != spec.shape:
        raise ValueError("state and lattice shapes differ")
    gammas = [[t.copy() for t in row] for row in state.tensors]
    env = SuEnvironment.from_state(state)
    log: list[SuLogEntry] = []
    sweep = 0
    for dtau, tol, max_sweeps in schedule.stages:
        gates = {"nn": trotter_gate(spec.j1, dtau)}
        if spec.j2 != 0.0:
            gates["nnn"] = trotter_gate(spec.j2, dtau / 2.0)
        for k in range(max_sweeps):
            before = [x.copy() for x in env.spectra()]
            err = _sweep(gammas, env, spec, gates, D)
            sweep += 1
            change = _spectrum_change(before, env.spectra())
            log.append(SuLogEntry(sweep, dtau, change, err))
            if change < tol:
                break
        else:
            logger.warning("simple update at dtau=%g did not converge in %d sweeps", dtau, max_sweeps)
    return absorb_environment(gammas, env, spec, D), log


def ramp_simple_update(spec: LatticeSpec, D: int, schedule: SuSchedule | None = None, seed: int = 0,
                       start_D: int = 2, noise: float = 1e-2) -> tuple[PepsState, list[SuLogEntry]]:
    """Converge at ``start_D`` from a random state, then reuse it for each larger D."""
    start_D = min(start_D, D)
    state, log = run_simple_update(random_init(spec, start_D, seed), spec, schedule, start_D)
    for d in range(start_D + 1, D + 1):
        state = grow_bond_dimension(state, d, noise=noise, seed=seed + d)
        state, more = run_simple_update(state, spec, schedule, d)
        offset = log[-1].sweep if log else 0
        log += [SuLogEntry(e.sweep + offset, e.dtau, e.max_change, e.truncation_error) for e in more]
    return state, log


def write_su_log(path, log: list[SuLogEntry]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sweep", "dtau", "max_relative_change", "truncation_error"])
        for e in log:
            out.writerow([e.sweep, repr(e.dtau), repr(e.max_change), repr(e.truncation_error)])
