import numpy as np
import pytest

from gopeps.cli import main
from gopeps.config import ConfigError, RunConfig, load_config, parse_config, serialize
from gopeps.lattice import LatticeSpec
from gopeps.peps import PepsState, random_init, save_checkpoint


def test_defaults():
    cfg = parse_config("")
    assert (cfg.rows, cfg.cols, cfg.D, cfg.Dc, cfg.seed) == (4, 4, 2, 4, 0)
    assert cfg.j1 == 1.0 and cfg.j2 == 0.0 and cfg.threads >= 1
    assert cfg.go_schedule == "desk" and cfg.margins == (1, 2)


def test_cutoff_below_bond_dimension():
    with pytest.raises(ConfigError, match="Dc"):
        parse_config("Dc = 3\nD = 4")


@pytest.mark.parametrize("text", ["colour = red", "D = 2\nD = 3", "D two", "D = two", "go_schedule = fast",
                                  "sweeps = 10\nbin_size = 3", "rows = 0"])
def test_rejected_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_round_trip(tmp_path):
    cfg = parse_config("rows = 4\ncols = 6\nj2 = 0.56 # frustrated\nD = 3\nsu_dtaus = 0.05,0.01\nmargins = 1\nthreads = 2")
    assert cfg.Dc == 6 and cfg.su_dtaus == (0.05, 0.01) and cfg.margins == (1,)
    assert parse_config(serialize(cfg)) == cfg
    path = tmp_path / "run.cfg"
    path.write_text(serialize(cfg))
    assert load_config(path) == cfg


def test_mc_overrides():
    mc = RunConfig(D=3, walkers=7, seed=5).mc(sweeps=40, bin_size=20)
    assert (mc.Dc, mc.walkers, mc.seed, mc.sweeps, mc.bin_size) == (6, 7, 5, 40, 20)


def write_cfg(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text + f"\nout = {tmp_path / 'out'}\n")
    return path


def test_cli_ed_reference(tmp_path, capsys):
    assert main(["ed", "--config", str(write_cfg(tmp_path, "rows = 4\ncols = 4"))]) == 0
    out = capsys.readouterr().out
    assert "per_site -0.57432544" in out
    manifest = (tmp_path / "out" / "manifest.txt").read_text().splitlines()
    assert manifest[0].startswith("# created ")
    assert parse_config("\n".join(manifest)) == load_config(tmp_path / "run.cfg")


def test_cli_amp_on_neel_product(tmp_path, capsys):
    spec = LatticeSpec(2, 2)
    up = np.array([1.0, 0.0]).reshape(1, 1, 1, 1, 2)
    down = np.array([0.0, 1.0]).reshape(1, 1, 1, 1, 2)
    save_checkpoint(PepsState(spec, 1, [[up, down], [down, up]]), tmp_path / "neel.peps")
    cfg = write_cfg(tmp_path, "rows = 2\ncols = 2\nD = 1")
    main(["amp", "--config", str(cfg), "--checkpoint", str(tmp_path / "neel.peps"), "--spins", "1,-1,-1,1"])
    assert "W 1.0 sign 1" in capsys.readouterr().out
    main(["amp", "--config", str(cfg), "--checkpoint", str(tmp_path / "neel.peps"), "--spins=-1,1,1,-1"])
    assert "sign 0" in capsys.readouterr().out


def test_cli_checkpoint_errors(tmp_path):
    cfg = str(write_cfg(tmp_path, "rows = 2\ncols = 2"))
    with pytest.raises(SystemExit, match="not found"):
        main(["measure", "--config", cfg, "--checkpoint", str(tmp_path / "missing.peps")])
    bad = tmp_path / "bad.peps"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(SystemExit, match="error"):
        main(["measure", "--config", cfg, "--checkpoint", str(bad)])
    save_checkpoint(random_init(LatticeSpec(2, 3), 2, seed=0), tmp_path / "wide.peps")
    with pytest.raises(SystemExit, match="differs"):
        main(["measure", "--config", cfg, "--checkpoint", str(tmp_path / "wide.peps")])


def test_cli_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("Dc = 3\nD = 4\n")
    assert main(["ed", "--config", str(path)]) == 2
    assert "Dc" in capsys.readouterr().err


def test_cli_measure_outputs(tmp_path):
    save_checkpoint(random_init(LatticeSpec(2, 2), 2, seed=1), tmp_path / "s.peps")
    cfg = write_cfg(tmp_path, "rows = 2\ncols = 2\nwalkers = 2\nsweeps = 20\nbin_size = 10\nequilibration = 5\nmargins = 0\nthreads = 1")
    main(["measure", "--config", str(cfg), "--checkpoint", str(tmp_path / "s.peps")])
    out = tmp_path / "out"
    for name in ("energy.csv", "correlations.csv", "magnetization.csv", "diagnostics.csv", "manifest.txt"):
        assert (out / name).exists()
    assert len((out / "correlations.csv").read_text().splitlines()) == 1 + 10
