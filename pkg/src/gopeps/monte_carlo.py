"""Metropolis sampling of spin configurations with weight W(S)^2.

Walkers run in lockstep as one :class:`~gopeps.contraction.WalkerBatch`;
each walker draws from its own generator, spawned from the root seed with
``numpy.random.SeedSequence(seed).spawn(walkers)``. Results therefore depend
on ``(state, params)`` only, not on how walkers are split over processes.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .contraction import ContractionError, WalkerBatch, amplitude
from .lattice import LatticeSpec, build_bonds, index_to_spins, neel_config, spins_to_index
from .peps import PHYS_DIM, PepsState

__all__ = [
    "McParams",
    "Estimator",
    "GradientEstimate",
    "SamplingRun",
    "propose_exchange",
    "metropolis_step",
    "local_energy",
    "sample_energy",
    "sample_gradient",
    "run_sampler",
    "sector_config",
    "enumerate_configs",
    "enumerate_energy",
    "enumerate_gradient",
    "write_diagnostics",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McParams:
    """Sampling parameters.

    ``sweeps`` is per walker, so the total sample count is
    ``walkers * sweeps``. ``bin_size`` defaults to ``min(100, sweeps)``.
    ``sweep_mode`` is ``"sequential"`` (every NN bond once per sweep, in a
    fixed order) or ``"random"`` (``rows*cols`` uniformly random proposals).
    """

    sweeps: int
    walkers: int = 1
    Dc: int = 4
    seed: int = 0
    equilibration_sweeps: int | None = None
    bin_size: int | None = None
    sector: int = 0
    sweep_mode: str = "sequential"
    use_cache: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.sweeps < 1 or self.walkers < 1:
            raise ValueError("sweeps and walkers must be positive")
        if self.Dc < 1:
            raise ValueError("Dc must be >= 1")
        if self.equilibration_sweeps is not None and self.equilibration_sweeps < 0:
            raise ValueError("equilibration_sweeps must be >= 0")
        if self.sweeps % self.bins_per_walker_size:
            raise ValueError(f"bin_size {self.bins_per_walker_size} does not divide sweeps {self.sweeps}")
        if self.sweep_mode not in ("sequential", "random"):
            raise ValueError(f"unknown sweep_mode {self.sweep_mode!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def bins_per_walker_size(self) -> int:
        size = self.bin_size if self.bin_size is not None else min(100, self.sweeps)
        if size < 1:
            raise ValueError("bin_size must be positive")
        return size

    @property
    def n_equilibration(self) -> int:
        if self.equilibration_sweeps is not None:
            return self.equilibration_sweeps
        return max(1, self.sweeps // 10)

    @property
    def total_samples(self) -> int:
        return self.walkers * self.sweeps


@dataclass(frozen=True)
class Estimator:
    mean: float
    std_error: float
    n_bins: int

    @classmethod
    def from_bins(cls, bin_means: np.ndarray) -> Estimator:
        bin_means = np.asarray(bin_means, dtype=float).ravel()
        n = bin_means.size
        err = float(np.std(bin_means, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(bin_means)), err, n)


@dataclass
class GradientEstimate:
    """Accumulated ``<Delta E>``, ``<Delta>``, ``<E>`` and the assembled gradient.

    All grids are ``rows x cols`` lists of arrays shaped like the site tensors.
    """

    mean_delta_energy: list[list[np.ndarray]]
    mean_delta: list[list[np.ndarray]]
    mean_energy: float
    gradient: list[list[np.ndarray]]
    std_error: list[list[np.ndarray]]
    n_samples: int

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for row in self.gradient for g in row])

    def flat_error(self) -> np.ndarray:
        return np.concatenate([g.ravel() for row in self.std_error for g in row])


@dataclass
class SamplingRun:
    """Raw output of :func:`run_sampler`."""

    energies: np.ndarray  # (walkers, sweeps)
    acceptance: np.ndarray  # (walkers, bins per walker)
    bin_size: int
    final_configs: np.ndarray  # (walkers, rows, cols) physical indices
    grad_bins: tuple | None = None  # (sum Delta*E, sum Delta) per bin, per site
    pair_values: np.ndarray | None = None  # (walkers, sweeps, n_pairs)
    config_counts: dict = field(default_factory=dict)

    def energy_bins(self) -> np.ndarray:
        w, n = self.energies.shape
        return self.energies.reshape(w, n // self.bin_size, self.bin_size).mean(axis=2).ravel()

    def energy_estimator(self) -> Estimator:
        return Estimator.from_bins(self.energy_bins())


def sector_config(spec: LatticeSpec, sector: int = 0) -> np.ndarray:
    """Neel configuration with the first ``|sector|`` minority spins flipped."""
    n = spec.n_sites
    n_up = n // 2 + sector if n % 2 == 0 else (n + 1) // 2 + sector
    if not 0 <= n_up <= n:
        raise ValueError(f"sector Sz={sector} impossible on {n} sites")
    if n % 2 == 0:
        cfg = neel_config(spec)
    else:
        r, c = np.indices(spec.shape)
        cfg = np.where((r + c) % 2 == 0, 1, -1).astype(np.int8)
    flat = cfg.ravel()
    diff = n_up - int(np.sum(flat == 1))
    src = -1 if diff > 0 else 1
    pos = np.flatnonzero(flat == src)[: abs(diff)]
    flat[pos] = -src
    return flat.reshape(spec.shape)


def propose_exchange(config: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, tuple]:
    """Pick one NN bond uniformly; exchange its spins if they differ.

    Returns ``(new_config, touched_sites)``. An aligned bond gives a null
    proposal with no touched sites, which keeps the proposal symmetric.
    """
    config = np.asarray(config)
    rows, cols = config.shape
    n_h = rows * (cols - 1)
    n_v = (rows - 1) * cols
    if not (np.any(config[:, 1:] != config[:, :-1]) or np.any(config[1:, :] != config[:-1, :])):
        raise ValueError("configuration has no exchangeable nearest-neighbour pair")
    k = int(rng.integers(n_h + n_v))
    if k < n_h:
        a = (k // (cols - 1), k % (cols - 1))
        b = (a[0], a[1] + 1)
    else:
        k -= n_h
        a = (k // cols, k % cols)
        b = (a[0] + 1, a[1])
    if config[a] == config[b]:
        return config.copy(), ()
    new = config.copy()
    new[a], new[b] = config[b], config[a]
    return new, (a, b)


def metropolis_step(state: PepsState, config: np.ndarray, Dc: int, rng: np.random.Generator,
                    batch: WalkerBatch | None = None, use_cache: bool = True) -> tuple[np.ndarray, bool]:
    """One exchange proposal accepted with probability ``min(1, (W(S')/W(S))^2)``.

    ``batch`` may carry cached environments for ``config``; it is updated in
    place on acceptance.
    """
    new, touched = propose_exchange(config, rng)
    u = rng.random()
    if not touched:
        return np.asarray(config).copy(), False
    try:
        if use_cache:
            if batch is None:
                batch = WalkerBatch(state, spins_to_index(config)[None], Dc)
            ratio = float(batch.exchange_ratio(*touched)[0])
        else:
            old = amplitude(state, config, Dc)
            if old.sign == 0:
                raise ValueError("current configuration has zero amplitude")
            nw = amplitude(state, new, Dc)
            ratio = 0.0 if nw.sign == 0 else nw.sign * old.sign * math.exp(nw.log_magnitude - old.log_magnitude)
    except ContractionError as exc:
        logger.warning("proposal %s rejected: %s", touched, exc)
        return np.asarray(config).copy(), False
    if not np.isfinite(ratio):
        raise ValueError("current configuration has zero amplitude")
    if u < ratio * ratio:
        if batch is not None:
            batch.set_configs(spins_to_index(new)[None])
        return new, True
    return np.asarray(config).copy(), False


def local_energy(state: PepsState, config: np.ndarray, spec: LatticeSpec, Dc: int, use_cache: bool = True) -> float:
    """``E(S) = sum_S' <S'|H|S> W(S')/W(S)`` over NN and NNN bonds."""
    config = np.asarray(config)
    if use_cache:
        batch = WalkerBatch(state, spins_to_index(config)[None], Dc)
        sign, _ = batch.log_amplitude()
        if sign[0] == 0:
            raise ValueError("local energy undefined: W(S) = 0")
        return float(batch.local_energy(spec)[0])
    ref = amplitude(state, config, Dc)
    if ref.sign == 0:
        raise ValueError("local energy undefined: W(S) = 0")
    nn, nnn = build_bonds(spec)
    energy = 0.0
    for bond in nn + nnn:
        a, b = bond.site_a, bond.site_b
        energy += bond.coupling * config[a] * config[b] / 4.0
        if config[a] != config[b] and bond.coupling != 0.0:
            new = config.copy()
            new[a], new[b] = config[b], config[a]
            amp = amplitude(state, new, Dc)
            if amp.sign:
                energy += 0.5 * bond.coupling * amp.sign * ref.sign * math.exp(amp.log_magnitude - ref.log_magnitude)
    return energy


# -- sampler ------------------------------------------------------------------


def _walker_rngs(seed: int, walkers: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(walkers)]


def _chunk_job(args):
    state, spec, params, lo, hi, init, gradient, pairs, count_configs = args
    return _run_chunk(state, spec, params, lo, hi, init, gradient, pairs, count_configs)


def _run_chunk(state, spec, params: McParams, lo: int, hi: int, init, gradient: bool, pairs, count_configs: bool):
    rngs = _walker_rngs(params.seed, params.walkers)[lo:hi]
    w = hi - lo
    if init is None:
        init = np.repeat(spins_to_index(sector_config(spec, params.sector))[None], w, axis=0)
    bin_size = params.bins_per_walker_size
    nbw = params.sweeps // bin_size
    energies = np.empty((w, params.sweeps))
    accepted = np.zeros((w, nbw))
    counts: dict = {}
    grad = None
    if gradient:
        shapes = [[t.shape for t in row] for row in state.tensors]
        grad = (
            [[np.zeros((w, nbw) + s) for s in row] for row in shapes],
            [[np.zeros((w, nbw) + s) for s in row] for row in shapes],
        )
    pair_values = np.empty((w, params.sweeps, len(pairs))) if pairs else None

    if params.sweep_mode == "sequential":
        batches = [WalkerBatch(state, init, params.Dc)]
    else:
        batches = [WalkerBatch(state, init[i:i + 1], params.Dc) for i in range(w)]
    n_nn = len(build_bonds(spec)[0])
    n_prop = spec.n_sites

    def sweep():
        if params.sweep_mode == "sequential":
            u = np.stack([g.random(n_nn) for g in rngs])
            return batches[0].sweep(u)
        acc = np.zeros(w)
        for i, (b, g) in enumerate(zip(batches, rngs)):
            cfg = index_to_spins(b.configs[0])
            for _ in range(n_prop):
                cfg, ok = metropolis_step(state, cfg, params.Dc, g, batch=b if params.use_cache else None,
                                          use_cache=params.use_cache)
                if ok and not params.use_cache:
                    b.set_configs(spins_to_index(cfg)[None])
                acc[i] += ok
        return acc

    def measure():
        if len(batches) == 1:
            return _measure(batches[0], spec, gradient, pairs)
        parts = [_measure(b, spec, gradient, pairs) for b in batches]
        e = np.concatenate([p[0] for p in parts])
        d = None
        if gradient:
            d = [[np.concatenate([p[1][r][c] for p in parts]) for c in range(spec.cols)] for r in range(spec.rows)]
        pv = np.concatenate([p[2] for p in parts]) if pairs else None
        return e, d, pv

    def current_configs():
        return np.concatenate([b.configs for b in batches])

    for _ in range(params.n_equilibration):
        sweep()
    per_accept = n_nn if params.sweep_mode == "sequential" else n_prop
    for t in range(params.sweeps):
        b = t // bin_size
        accepted[:, b] += sweep() / per_accept
        e, delta, pv = measure()
        energies[:, t] = e
        if gradient:
            idx = current_configs()
            onehot = np.eye(PHYS_DIM)[idx]  # (w, rows, cols, 2)
            for r in range(spec.rows):
                for c in range(spec.cols):
                    dfull = delta[r][c][..., None] * onehot[:, r, c, None, None, None, None, :]
                    grad[0][r][c][:, b] += dfull * e[:, None, None, None, None, None]
                    grad[1][r][c][:, b] += dfull
        if pairs:
            pair_values[:, t] = pv
        if count_configs:
            for key in map(bytes, current_configs().astype(np.uint8).reshape(w, -1)):
                counts[key] = counts.get(key, 0) + 1
    accepted /= bin_size
    return energies, accepted, current_configs(), grad, pair_values, counts


def _measure(batch: WalkerBatch, spec: LatticeSpec, gradient: bool, pairs):
    e = batch.local_energy(spec)
    delta = batch.log_derivatives() if gradient else None
    pv = None
    if pairs:
        s = 1 - 2 * batch.configs
        pv = np.empty((batch.batch, len(pairs)))
        for k, (i, j) in enumerate(pairs):
            if i == j:
                pv[:, k] = 0.75
                continue
            zz = s[:, i[0], i[1]] * s[:, j[0], j[1]] / 4.0
            anti = batch.configs[:, i[0], i[1]] != batch.configs[:, j[0], j[1]]
            if anti.any():
                zz = zz + np.where(anti, 0.5 * batch.exchange_ratio(i, j), 0.0)
            pv[:, k] = zz
    return e, delta, pv


def run_sampler(state: PepsState, spec: LatticeSpec, params: McParams, *, gradient: bool = False,
                pairs=None, init_configs: np.ndarray | None = None, count_configs: bool = False) -> SamplingRun:
    """Run all walkers and return the raw per-sample / per-bin accumulators.

    ``init_configs`` (physical indices, ``(walkers, rows, cols)``) warm-starts
    the chains; otherwise every walker starts from the sector's Neel state.
    """
    if state.shape != spec.shape:
        raise ValueError("state and lattice shapes differ")
    pairs = [tuple(map(tuple, p)) for p in pairs] if pairs else None
    n_chunks = min(params.threads, params.walkers)
    edges = np.linspace(0, params.walkers, n_chunks + 1).astype(int)
    jobs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        init = None if init_configs is None else np.asarray(init_configs)[lo:hi]
        jobs.append((state, spec, params, int(lo), int(hi), init, gradient, pairs, count_configs))
    if n_chunks == 1:
        results = [_chunk_job(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=n_chunks) as pool:
            results = list(pool.map(_chunk_job, jobs))
    energies = np.concatenate([r[0] for r in results])
    if not np.all(np.isfinite(energies)):
        raise ContractionError("non-finite local energy encountered")
    grad_bins = None
    if gradient:
        grad_bins = tuple(
            [[np.concatenate([res[3][k][r][c] for res in results]) for c in range(spec.cols)] for r in range(spec.rows)]
            for k in range(2)
        )
    counts: dict = {}
    for res in results:
        for key, v in res[5].items():
            counts[key] = counts.get(key, 0) + v
    return SamplingRun(
        energies=energies,
        acceptance=np.concatenate([r[1] for r in results]),
        bin_size=params.bins_per_walker_size,
        final_configs=np.concatenate([r[2] for r in results]),
        grad_bins=grad_bins,
        pair_values=np.concatenate([r[4] for r in results]) if pairs else None,
        config_counts=counts,
    )


def sample_energy(state: PepsState, spec: LatticeSpec, params: McParams) -> Estimator:
    """Monte Carlo estimate of ``<H>`` with binned error bars."""
    return run_sampler(state, spec, params).energy_estimator()


def gradient_from_run(run: SamplingRun, state: PepsState) -> GradientEstimate:
    sum_de, sum_d = run.grad_bins
    w, nbw = run.energies.shape[0], run.energies.shape[1] // run.bin_size
    e_bins = run.energy_bins()
    e = float(e_bins.mean())
    rows, cols = state.shape
    out = {k: [[None] * cols for _ in range(rows)] for k in ("de", "d", "g", "err")}
    for r in range(rows):
        for c in range(cols):
            a_b = sum_de[r][c].reshape((w * nbw,) + sum_de[r][c].shape[2:]) / run.bin_size
            d_b = sum_d[r][c].reshape(a_b.shape) / run.bin_size
            a, d = a_b.mean(axis=0), d_b.mean(axis=0)
            eb = e_bins.reshape((-1,) + (1,) * (a_b.ndim - 1))
            x_b = 2.0 * (a_b - e * d_b - d * eb + d * e)
            out["de"][r][c], out["d"][r][c] = a, d
            out["g"][r][c] = 2.0 * (a - d * e)
            n = x_b.shape[0]
            out["err"][r][c] = x_b.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(a)
    return GradientEstimate(out["de"], out["d"], e, out["g"], out["err"], int(run.energies.size))


def sample_gradient(state: PepsState, spec: LatticeSpec, params: McParams,
                    init_configs: np.ndarray | None = None) -> tuple[GradientEstimate, Estimator]:
    """Estimate ``dE/dA = 2<Delta E> - 2<Delta><E>`` from one set of samples."""
    run = run_sampler(state, spec, params, gradient=True, init_configs=init_configs)
    return gradient_from_run(run, state), run.energy_estimator()


def write_diagnostics(path, run: SamplingRun) -> None:
    """CSV with one line per (walker, bin): mean energy and acceptance rate."""
    w, n = run.energies.shape
    e_bins = run.energies.reshape(w, n // run.bin_size, run.bin_size).mean(axis=2)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["walker", "bin", "energy", "acceptance_rate"])
        for i in range(w):
            for b in range(e_bins.shape[1]):
                out.writerow([i, b, repr(float(e_bins[i, b])), repr(float(run.acceptance[i, b]))])


# -- exhaustive enumeration ---------------------------------------------------


def enumerate_configs(spec: LatticeSpec, sector: int | None = 0) -> np.ndarray:
    """All ``+-1`` configurations (``sector=None``) or those with total Sz = ``sector``."""
    n = spec.n_sites
    if sector is None:
        codes = np.arange(2 ** n)
        bits = (codes[:, None] >> np.arange(n - 1, -1, -1)) & 1
        return index_to_spins(bits).reshape(-1, *spec.shape)
    n_down = (n - 2 * sector) // 2
    if (n - 2 * sector) % 2 or not 0 <= n_down <= n:
        raise ValueError(f"sector Sz={sector} impossible on {n} sites")
    out = np.ones((math.comb(n, n_down), n), dtype=np.int8)
    for k, downs in enumerate(combinations(range(n), n_down)):
        out[k, list(downs)] = -1
    return out.reshape(-1, *spec.shape)


def _enumerate(state, spec, Dc, sector, gradient, chunk):
    configs = spins_to_index(enumerate_configs(spec, sector))
    logw, energies, deltas, idx_all = [], [], [], []
    for lo in range(0, len(configs), chunk):
        batch = WalkerBatch(state, configs[lo:lo + chunk], Dc)
        sign, la = batch.log_amplitude()
        logw.append(np.where(sign == 0, -np.inf, la))
        energies.append(np.where(sign == 0, 0.0, batch.local_energy(spec)))
        if gradient:
            deltas.append(batch.log_derivatives())
            idx_all.append(batch.configs)
    logw = np.concatenate(logw)
    weights = np.exp(2.0 * (logw - logw.max()))
    weights /= weights.sum()
    return weights, np.concatenate(energies), deltas, idx_all


def enumerate_energy(state: PepsState, spec: LatticeSpec, Dc: int, sector: int | None = 0, chunk: int = 256) -> float:
    """``sum_S W^2 E(S) / sum_S W^2`` over every configuration of the sector."""
    weights, energies, _, _ = _enumerate(state, spec, Dc, sector, False, chunk)
    return float(np.dot(weights, energies))


def enumerate_gradient(state: PepsState, spec: LatticeSpec, Dc: int, sector: int | None = 0,
                       chunk: int = 256) -> tuple[list[list[np.ndarray]], float]:
    """Exact-expectation version of the sampled gradient, plus the energy."""
    weights, energies, deltas, idx_all = _enumerate(state, spec, Dc, sector, True, chunk)
    e = float(np.dot(weights, energies))
    rows, cols = spec.shape
    grad = [[np.zeros(t.shape) for t in row] for row in state.tensors]
    pos = 0
    for dchunk, idx in zip(deltas, idx_all):
        n = idx.shape[0]
        wt = weights[pos:pos + n] * (energies[pos:pos + n] - e)
        onehot = np.eye(PHYS_DIM)[idx]
        for r in range(rows):
            for c in range(cols):
                grad[r][c] += 2.0 * np.einsum("w,wlrud,ws->lruds", wt, dchunk[r][c], onehot[:, r, c])
        pos += n
    return grad, e
