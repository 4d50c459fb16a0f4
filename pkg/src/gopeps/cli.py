"""Command-line driver: ``gopeps {ed,su,go,measure,amp,bench}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS_DOC, ConfigError, RunConfig, load_config, serialize
from .contraction import amplitude, single_layer_environments
from .ed import exact_ground_energy
from .lattice import LatticeSpec
from .monte_carlo import enumerate_energy, run_sampler, write_diagnostics
from .observables import spin_correlation, staggered_from_correlations, window_sites, write_correlations
from .optimize import run_go
from .peps import CheckpointError, load_checkpoint, random_init, save_checkpoint
from .simple_update import ramp_simple_update, write_su_log

logger = logging.getLogger("gopeps")

ENUMERATE_MAX_SITES = 16


def write_manifest(out: Path, cfg: RunConfig, command: str) -> None:
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    text = f"# created {stamp}\n# gopeps {__version__}\n# command {command}\n" + serialize(cfg)
    (out / "manifest.txt").write_text(text)


def _load_state(path, cfg: RunConfig):
    if path is None:
        raise SystemExit("error: this command needs --checkpoint")
    try:
        state = load_checkpoint(path, cfg.j1, cfg.j2)
    except FileNotFoundError:
        raise SystemExit(f"error: checkpoint {path} not found")
    except CheckpointError as exc:
        raise SystemExit(f"error: {exc}")
    if state.shape != cfg.lattice.shape:
        raise SystemExit(f"error: checkpoint lattice {state.shape} differs from config {cfg.lattice.shape}")
    return state


def _energy_line(state, cfg: RunConfig) -> str:
    spec = cfg.lattice
    if spec.n_sites > ENUMERATE_MAX_SITES:
        return ""
    e = enumerate_energy(state, spec, cfg.Dc, cfg.sector)
    return f"energy {e:.10f} per_site {e / spec.n_sites:.10f} (exact enumeration, Dc={cfg.Dc})"


def cmd_ed(cfg: RunConfig, args, out: Path) -> None:
    res = exact_ground_energy(cfg.lattice, cfg.sector, seed=cfg.seed)
    line = (f"energy {res.energy:.10f} per_site {res.energy_per_site:.10f} "
            f"sector {res.sector} iterations {res.iterations}")
    (out / "ed.txt").write_text(line + "\n")
    print(line)


def cmd_su(cfg: RunConfig, args, out: Path) -> None:
    state, log = ramp_simple_update(cfg.lattice, cfg.D, cfg.su_schedule, seed=cfg.seed, start_D=cfg.su_start_D)
    save_checkpoint(state, out / "su.peps")
    write_su_log(out / "su_log.csv", log)
    print(f"simple update: {len(log)} sweeps, checkpoint {out / 'su.peps'}")
    line = _energy_line(state, cfg)
    if line:
        print(line)


def cmd_go(cfg: RunConfig, args, out: Path) -> None:
    path = args.checkpoint or (out / "su.peps" if (out / "su.peps").exists() else None)
    state = _load_state(path, cfg)
    mc = cfg.mc(sweeps=1, bin_size=1)
    spec = cfg.lattice

    def progress(rec):
        print(f"step {rec.step:4d} dt {rec.dt:.5f} M {rec.samples:7d} "
              f"E/site {rec.energy / spec.n_sites:.6f} +- {rec.std_error / spec.n_sites:.6f}", flush=True)

    best, trace = run_go(state, spec, cfg.go, mc, checkpoint_dir=out / "go_checkpoints",
                         trace_path=out / "go_trace.csv", progress=progress)
    save_checkpoint(best, out / "go.peps")
    print(f"best step {trace.best_step}, checkpoint {out / 'go.peps'}")
    line = _energy_line(best, cfg)
    if line:
        print(line)


def cmd_measure(cfg: RunConfig, args, out: Path) -> None:
    state = _load_state(args.checkpoint, cfg)
    spec = cfg.lattice
    mc = cfg.mc()
    run = run_sampler(state, spec, mc)
    write_diagnostics(out / "diagnostics.csv", run)
    est = run.energy_estimator()
    with open(out / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["energy", "stderr", "per_site", "per_site_stderr", "samples"])
        w.writerow([repr(est.mean), repr(est.std_error), repr(est.mean / spec.n_sites),
                    repr(est.std_error / spec.n_sites), mc.total_samples])
    print(f"energy per site {est.mean / spec.n_sites:.6f} +- {est.std_error / spec.n_sites:.6f}")
    sites = spec.sites()
    pairs = [(a, b) for k, a in enumerate(sites) for b in sites[k:]]
    corr = spin_correlation(state, spec, pairs, mc)
    write_correlations(out / "correlations.csv", corr)
    with open(out / "magnetization.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["margin", "window_sites", "m2", "stderr"])
        for margin in cfg.margins:
            try:
                win = window_sites(spec, margin)
            except ValueError:
                continue
            m2, err = staggered_from_correlations(corr, win)
            w.writerow([margin, len(win), repr(m2), repr(err)])
            print(f"m_s^2 margin {margin}: {m2:.6f} +- {err:.6f}")


def _parse_spins(text: str, spec: LatticeSpec) -> np.ndarray:
    try:
        vals = [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise SystemExit("error: --spins expects integers +1/-1")
    if len(vals) != spec.n_sites or any(abs(v) != 1 for v in vals):
        raise SystemExit(f"error: --spins needs {spec.n_sites} values of +1/-1")
    return np.array(vals, dtype=np.int8).reshape(spec.shape)


def cmd_amp(cfg: RunConfig, args, out: Path) -> None:
    state = _load_state(args.checkpoint, cfg)
    if args.spins is None:
        raise SystemExit("error: amp needs --spins")
    spins = _parse_spins(args.spins, cfg.lattice)
    amp = amplitude(state, spins, cfg.Dc)
    print(f"W {amp.value!r} sign {amp.sign} log_abs {amp.log_magnitude!r}")


def cmd_bench(cfg: RunConfig, args, out: Path) -> None:
    spec = cfg.lattice
    rng = np.random.default_rng(cfg.seed)
    spins = np.where(rng.random(spec.shape) < 0.5, 1, -1)
    rows = []
    for D in args.bond_dims:
        state = random_init(spec, D, cfg.seed)
        for Dc in args.cutoffs:
            if Dc < D:
                continue
            timings = {}
            for name, fn in (("amplitude", amplitude), ("environments", single_layer_environments)):
                fn(state, spins, Dc)
                t0 = time.perf_counter()
                for _ in range(args.repeat):
                    fn(state, spins, Dc)
                timings[name] = (time.perf_counter() - t0) / args.repeat
            rows.append((D, Dc, timings["amplitude"], timings["environments"]))
            print(f"D {D} Dc {Dc:3d} amplitude {timings['amplitude'] * 1e3:9.3f} ms "
                  f"environments {timings['environments'] * 1e3:9.3f} ms", flush=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["D", "Dc", "amplitude_seconds", "environment_seconds"])
        w.writerows(rows)


COMMANDS = {"ed": cmd_ed, "su": cmd_su, "go": cmd_go, "measure": cmd_measure, "amp": cmd_amp, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gopeps", description="Finite PEPS ground states of the J1-J2 model.",
                                     epilog="config keys:\n" + DEFAULTS_DOC,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="key = value file; omitted keys take defaults")
    parser.add_argument("--checkpoint", type=Path, help="PEPS checkpoint for go, measure and amp")
    parser.add_argument("--out", type=Path, help="output directory (overrides the config key)")
    parser.add_argument("--threads", type=int, help="worker processes (overrides the config key)")
    parser.add_argument("--spins", help="amp: row-major +1/-1 values, e.g. --spins=1,-1,-1,1")
    parser.add_argument("--bond-dims", type=lambda s: [int(x) for x in s.split(",")], default=[2, 3, 4])
    parser.add_argument("--cutoffs", type=lambda s: [int(x) for x in s.split(",")], default=[4, 8, 16])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.out is not None:
            cfg = replace(cfg, out=str(args.out))
        if args.threads is not None:
            cfg = replace(cfg, threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, cfg, args.command)
    COMMANDS[args.command](cfg, args, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
