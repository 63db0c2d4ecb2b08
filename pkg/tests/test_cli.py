import io

import numpy as np
import pytest

from mvx.cli import main
from mvx.config import ConfigError, ExperimentConfig, load_config, parse_config
from mvx.experiments import fit_log_rate, run_experiment
from mvx.particle import snapshot_csv


def test_minimal_config_defaults():
    cfg = parse_config("[model]\nname = example1\n").resolved()
    assert cfg.dt == 1e-3 and cfg.N == 5000
    assert cfg.T == 4.0 and cfg.rates == "default" and cfg.init == "uniform(-1, 1)"


def test_contraction_beta_out_of_range_rejected():
    text = "[model]\nname = example1\nbeta = 1.2\n[experiment]\nkind = contraction\n"
    with pytest.raises(ConfigError, match="beta"):
        parse_config(text).resolved()


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="'dtt'"):
        parse_config("[sim]\ndtt = 0.01\n")


def test_unknown_section_named():
    with pytest.raises(ConfigError, match=r"\[solver\]"):
        parse_config("[solver]\nx = 1\n")


def test_parse_error_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[sim]\ndt = 0.01\nthis line has no equals sign\n", "bad.ini")


def test_bad_value_named():
    with pytest.raises(ConfigError, match="'particles'"):
        parse_config("[sim]\nparticles = many\n")


def test_bad_initial_law_rejected():
    with pytest.raises(ConfigError, match="init"):
        parse_config("[experiment]\ninit = cauchy(0, 1)\n").resolved()


def test_ini_echo_roundtrip():
    cfg = ExperimentConfig(kind="picard", T=0.25, trunc=5.0, record_times=(0.1, 0.2)).resolved()
    assert parse_config(cfg.to_ini()).resolved() == cfg


def small(kind, **kw):
    base = dict(kind=kind, N=300, dt=1e-2, T=0.5, record_every=0.1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_metadata_roundtrip_reproduces_csv(tmp_path):
    cfg = small("moment-decay", out=str(tmp_path), prefix="a", seed=11, N=2000, T=1.0)
    status, _ = run_experiment(cfg, stream=io.StringIO())
    assert status in (0, 1)
    again = load_config(tmp_path / "a.meta.ini")
    again.prefix = "b"
    run_experiment(again, stream=io.StringIO())
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    meta = (tmp_path / "a.meta.ini").read_text()
    assert "[run]" in meta and "[result]" in meta and "seed = 11" in meta


def test_picard_run_writes_distances(tmp_path):
    cfg = small("picard", out=str(tmp_path), rounds=3, T=0.2, N=200)
    status, res = run_experiment(cfg, stream=io.StringIO())
    lines = (tmp_path / "picard-example1.csv").read_text().splitlines()
    assert lines[0].startswith("round") and len(lines) == 4
    assert status == (0 if res.passed else 1)


# ---------------------------------------------------------------------------
# command line


def test_cli_verify_passes(tmp_path, capsys):
    assert main(["verify", "example2", "--out", str(tmp_path), "--probes", "200"]) == 0
    out = capsys.readouterr().out
    assert "PASS H2" in out


def test_cli_config_error_exit_code(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[sim]\ndtt = 1\n")
    assert main(["verify", "example1", "--config", str(ini)]) == 2
    assert "dtt" in capsys.readouterr().err


def test_cli_beta_rejected(tmp_path):
    assert main(["run", "contraction", "example1", "--beta", "1.2", "--out", str(tmp_path)]) == 2


def test_cli_missing_file_exit_code(tmp_path):
    assert main(["distances", str(tmp_path / "nope.csv"), str(tmp_path / "nope.csv")]) == 3


def test_cli_distances(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 1))
    r = rng.integers(1, 3, size=50)
    snapshot_csv(x, r, tmp_path / "a.csv")
    snapshot_csv(x + 1.0, r, tmp_path / "b.csv")
    assert main(["distances", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"),
                 "--model", "example2", "--trunc", "100", "--bin-width", "0.5"]) == 0
    vals = dict(line.split(" = ") for line in capsys.readouterr().out.strip().splitlines())
    assert float(vals["W1"]) == pytest.approx(1.0, abs=1e-12)
    assert float(vals["W2"]) == pytest.approx(1.0, abs=1e-12)
    assert float(vals["W2_trunc"]) == pytest.approx(1.0, abs=1e-12)
    assert float(vals["W_Vtilde"]) == pytest.approx(1.0, abs=1e-12)
    assert int(vals["tv_occupied_bins"]) > 0


# ---------------------------------------------------------------------------
# rate fitting


def test_fit_log_rate_exact_exponential():
    t = np.linspace(0, 3, 31)
    fit = fit_log_rate(t, 2.0 * np.exp(-1.5 * t))
    assert fit.slope == pytest.approx(-1.5, abs=1e-12)
    assert fit.ci_low <= fit.slope <= fit.ci_high and fit.n_used == 31


def test_fit_log_rate_drops_noise_floor_and_window():
    t = np.linspace(0, 3, 31)
    y = np.exp(-2 * t)
    se = np.full_like(t, 1e-2)
    fit = fit_log_rate(t, y, se=se, window=(0.5, 3.0))
    # y >= 0.1 only up to t = ln(10) / 2
    assert fit.n_used == int(np.sum((t >= 0.5) & (y >= 0.1)))
    with pytest.raises(ValueError, match="usable points"):
        fit_log_rate(t, y, se=np.ones_like(t))


def test_fit_log_rate_noisy_interval_covers_truth():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 3, 61)
    y = np.exp(-1.0 * t + 0.05 * rng.normal(size=t.size))
    fit = fit_log_rate(t, y)
    assert fit.ci_low < -1.0 < fit.ci_high
