"""Stochastic sign-gradient optimization of a PEPS.

Each step samples the energy gradient and moves every tensor element by
``-p * dt * sign(dE/dA)`` with ``p`` uniform on (0, 1), drawn per element.

Seeding: step ``n`` uses child ``n`` of ``SeedSequence(mc.seed)``. The
sampler seed is ``child.generate_state(1)[0]`` and the update draws come from
``default_rng(child)``; a retried step uses the child's first spawned child.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .contraction import ContractionError
from .lattice import LatticeSpec
from .monte_carlo import GradientEstimate, McParams, gradient_from_run, run_sampler
from .peps import PepsState, rescale, save_checkpoint

__all__ = [
    "GoPhase",
    "GoSchedule",
    "GoRecord",
    "GoTrace",
    "GoError",
    "go_step",
    "run_go",
]

logger = logging.getLogger(__name__)


class GoError(RuntimeError):
    pass


@dataclass(frozen=True)
class GoPhase:
    """``steps`` updates with a fixed ``dt`` or ``decay`` applied to the previous dt.

    Sample counts ramp linearly from ``m_start`` to ``m_end`` (fixed when
    ``m_end`` is None).
    """

    steps: int
    m_start: int
    m_end: int | None = None
    dt: float | None = None
    decay: float | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("a phase needs at least one step")
        if (self.dt is None) == (self.decay is None):
            raise ValueError("give exactly one of dt or decay")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.decay is not None and not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.m_start < 1 or (self.m_end is not None and self.m_end < 1):
            raise ValueError("sample counts must be >= 1")

    def samples(self, k: int) -> int:
        if self.m_end is None or self.steps == 1:
            return self.m_start
        return int(round(self.m_start + (self.m_end - self.m_start) * k / (self.steps - 1)))


@dataclass(frozen=True)
class GoSchedule:
    phases: tuple[GoPhase, ...]
    initial_dt: float = 0.005

    def __post_init__(self):
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        if not self.initial_dt > 0:
            raise ValueError("initial_dt must be positive")

    @classmethod
    def paper(cls) -> GoSchedule:
        return cls((
            GoPhase(50, 50000, 100000, dt=0.005),
            GoPhase(50, 100000, 500000, decay=0.968),
            GoPhase(20, 500000, dt=0.001),
        ))

    @classmethod
    def desk(cls) -> GoSchedule:
        return cls((
            GoPhase(30, 2000, 5000, dt=0.005),
            GoPhase(30, 5000, decay=0.968),
            GoPhase(20, 20000, dt=0.001),
        ))

    @property
    def n_steps(self) -> int:
        return sum(p.steps for p in self.phases)

    def steps(self):
        """Yield ``(dt, M)`` for every step."""
        dt = self.initial_dt
        for phase in self.phases:
            for k in range(phase.steps):
                dt = phase.dt if phase.dt is not None else dt * phase.decay
                yield dt, phase.samples(k)


@dataclass
class GoRecord:
    step: int
    dt: float
    samples: int
    energy: float
    std_error: float
    seconds: float
    best: bool = False


@dataclass
class GoTrace:
    records: list[GoRecord] = field(default_factory=list)
    best_step: int | None = None
    best_energy: float = math.inf

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["step", "dt", "M", "energy", "stderr", "seconds", "best"])
            for r in self.records:
                out.writerow([r.step, repr(r.dt), r.samples, repr(r.energy), repr(r.std_error),
                              f"{r.seconds:.3f}", int(r.best)])


def go_step(state: PepsState, gradient: GradientEstimate | list, dt: float, rng: np.random.Generator) -> PepsState:
    """``A <- A - p * dt * sign(dE/dA)`` elementwise, then rescale each tensor to max-abs 1.

    One uniform is drawn per element in row-major site order whatever the
    gradient, so rescaling the gradient by a positive field gives a bitwise
    identical update.
    """
    grid = gradient.gradient if isinstance(gradient, GradientEstimate) else gradient
    new = []
    for row, grow in zip(state.tensors, grid):
        new_row = []
        for t, g in zip(row, grow):
            g = np.asarray(g)
            if g.shape != t.shape:
                raise ValueError(f"gradient shape {g.shape} does not match tensor {t.shape}")
            if not np.all(np.isfinite(g)):
                raise GoError("non-finite gradient entries")
            p = rng.random(t.shape)
            new_row.append(t - p * dt * np.sign(g))
        new.append(new_row)
    return rescale(state.with_tensors(new))[0]


def run_go(state: PepsState, spec: LatticeSpec, schedule: GoSchedule, mc: McParams, *,
           checkpoint_dir=None, trace_path=None, warm_equilibration: int = 2,
           progress=None) -> tuple[PepsState, GoTrace]:
    """Optimize ``state``; return the lowest-sampled-energy state and the trace.

    ``mc.walkers`` chains are kept across steps (warm start); each step runs
    ``ceil(M / walkers)`` sweeps per walker with one bin per walker.
    """
    trace = GoTrace()
    children = np.random.SeedSequence(mc.seed).spawn(schedule.n_steps)
    configs = None
    best = state
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    current = state
    for n, (dt, m) in enumerate(schedule.steps()):
        t0 = time.perf_counter()
        sweeps = max(1, math.ceil(m / mc.walkers))
        eq = mc.n_equilibration if configs is None else warm_equilibration
        for attempt in range(2):
            child = children[n] if attempt == 0 else children[n].spawn(1)[0]
            params = replace(mc, sweeps=sweeps, bin_size=sweeps, equilibration_sweeps=eq,
                             seed=int(child.generate_state(1)[0]))
            try:
                run = run_sampler(current, spec, params, gradient=True, init_configs=configs)
                grad = gradient_from_run(run, current)
                break
            except (ContractionError, FloatingPointError, ValueError) as exc:
                logger.warning("step %d sampling failed (%s)%s", n, exc, "; retrying" if attempt == 0 else "")
                configs, eq = None, mc.n_equilibration
        else:
            raise GoError(f"sampling failed twice at step {n}")
        energy = run.energy_estimator()
        is_best = energy.mean < trace.best_energy
        if is_best:
            best, trace.best_energy, trace.best_step = current, energy.mean, n
            if ckpt_dir is not None:
                save_checkpoint(current, ckpt_dir / "best.peps")
        configs = run.final_configs
        current = go_step(current, grad, dt, np.random.default_rng(child))
        if ckpt_dir is not None:
            save_checkpoint(current, ckpt_dir / f"step_{n + 1:04d}.peps")
        rec = GoRecord(n, dt, sweeps * mc.walkers, energy.mean, energy.std_error, time.perf_counter() - t0, is_best)
        trace.records.append(rec)
        if trace_path is not None:
            trace.write_csv(trace_path)
        if progress is not None:
            progress(rec)
    return best, trace
