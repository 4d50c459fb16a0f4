"""Run configuration: ``key = value`` text with documented defaults.

Unknown keys are rejected. ``serialize`` writes every key in a fixed order,
so ``parse_config(serialize(cfg)) == cfg``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .lattice import LatticeSpec
from .monte_carlo import McParams
from .optimize import GoSchedule
from .simple_update import SuSchedule

__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize", "load_config", "DEFAULTS_DOC"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    rows: int = 4
    cols: int = 4
    j1: float = 1.0
    j2: float = 0.0
    D: int = 2
    Dc: int | None = None  # resolved to 2*D
    seed: int = 0
    sector: int = 0
    out: str = "run"
    threads: int | None = None  # resolved to the number of available cores
    su_dtaus: tuple[float, ...] = (0.01, 0.001)
    su_tol: float = 1e-6
    su_max_sweeps: int = 20000
    su_start_D: int = 2
    go_schedule: str = "desk"
    walkers: int = 50
    sweeps: int = 2000
    equilibration: int = 100
    bin_size: int = 100
    sweep_mode: str = "sequential"
    margins: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.Dc is None:
            object.__setattr__(self, "Dc", 2 * self.D)
        if self.threads is None:
            object.__setattr__(self, "threads", max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1))
        if self.D < 1:
            raise ConfigError("D must be >= 1")
        if self.Dc < self.D:
            raise ConfigError(f"Dc={self.Dc} must be >= D={self.D}")
        if self.go_schedule not in ("desk", "paper"):
            raise ConfigError("go_schedule must be 'desk' or 'paper'")
        if self.sweep_mode not in ("sequential", "random"):
            raise ConfigError("sweep_mode must be 'sequential' or 'random'")
        if self.threads < 1 or self.walkers < 1 or self.sweeps < 1:
            raise ConfigError("threads, walkers and sweeps must be positive")
        if self.sweeps % self.bin_size:
            raise ConfigError("bin_size must divide sweeps")
        try:
            self.lattice
            self.su_schedule
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def lattice(self) -> LatticeSpec:
        return LatticeSpec(self.rows, self.cols, self.j1, self.j2)

    @property
    def su_schedule(self) -> SuSchedule:
        return SuSchedule(tuple((t, self.su_tol, self.su_max_sweeps) for t in self.su_dtaus))

    @property
    def go(self) -> GoSchedule:
        return GoSchedule.desk() if self.go_schedule == "desk" else GoSchedule.paper()

    def mc(self, **overrides) -> McParams:
        base = McParams(sweeps=self.sweeps, walkers=self.walkers, Dc=self.Dc, seed=self.seed,
                        equilibration_sweeps=self.equilibration, bin_size=self.bin_size,
                        sector=self.sector, sweep_mode=self.sweep_mode, threads=self.threads)
        return replace(base, **overrides)


DEFAULTS_DOC = """\
rows, cols      lattice shape (4, 4)
j1, j2          couplings (1.0, 0.0)
D               PEPS bond dimension (2)
Dc              boundary-MPS cutoff (2*D); must be >= D
seed            root seed for every random stream (0)
sector          total Sz of sampled configurations (0)
out             output directory (run)
threads         worker processes for sampling (available cores)
su_dtaus        comma-separated simple-update time steps (0.01,0.001)
su_tol          spectrum-change convergence threshold (1e-6)
su_max_sweeps   sweep cap per time step (20000)
su_start_D      bond dimension of the first simple-update run (2)
go_schedule     desk | paper (desk)
walkers         parallel Markov chains (50)
sweeps          sweeps per walker for measure (2000)
equilibration   discarded sweeps per walker (100)
bin_size        sweeps per bin; must divide sweeps (100)
sweep_mode      sequential | random (sequential)
margins         comma-separated window margins for m_s^2 (1,2)
"""


def _convert(name: str, raw: str, template):
    kind = type(template) if template is not None else int
    if name in ("Dc", "threads"):
        kind = int
    try:
        if isinstance(template, tuple):
            item = type(template[0])
            return tuple(item(x) for x in raw.split(",") if x.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str) -> RunConfig:
    defaults = RunConfig.__dataclass_fields__
    values: dict = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = _convert(key, raw, defaults[key].default)
    return RunConfig(**values)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
