import json
import shutil
import subprocess
import warnings

import numpy as np
import pytest

from pvpump.cli import (EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main)
from pvpump.controller import PeriodicReference
from pvpump.forecast import (DailyProfile, Forecaster, NonStationaryFit,
                             SamplingGrid, save_pv_csv)
from pvpump.harness import SyntheticPvGenerator
from pvpump.plant import LinearPlantModel


def write_config(path, **settings):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(settings, fh)
    return str(path)


@pytest.fixture(scope="module")
def run_twice(tmp_path_factory):
    """The same default one-day run executed into two directories."""
    first = tmp_path_factory.mktemp("run_first")
    second = tmp_path_factory.mktemp("run_second")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonStationaryFit)
        assert main(["--out", str(first), "run"]) == EXIT_OK
        assert main(["--out", str(second), "run"]) == EXIT_OK
    return first, second


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("identify", "fit-forecaster", "periodic", "run", "compare"):
        assert name in out


def test_missing_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    assert "COMMAND" in capsys.readouterr().err


def test_identify_reports_fit_quality(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "identify"]) == EXIT_OK
    out = capsys.readouterr().out
    level_line = next(l for l in out.splitlines() if l.startswith("level R^2"))
    scores = [float(v) for v in level_line.split(":")[1].split()]
    assert all(s >= 0.9 for s in scores)
    model = LinearPlantModel.from_json((tmp_path / "model.json").read_text())
    assert model.n_states == 2


def test_identify_outputs_track_the_seed(tmp_path):
    for sub, seed in (("a", 7), ("b", 7), ("c", 1234)):
        assert main(["--seed", str(seed), "--out", str(tmp_path / sub),
                     "identify"]) == EXIT_OK
    first = (tmp_path / "a" / "model.json").read_bytes()
    assert first == (tmp_path / "b" / "model.json").read_bytes()
    assert first != (tmp_path / "c" / "model.json").read_bytes()


def test_fit_forecaster_writes_snapshot(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "fit-forecaster"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "multiplier model:" in out
    snapshot = (tmp_path / "forecaster.json").read_text()
    restored = Forecaster.from_json(snapshot)
    assert restored.arma is not None


def test_fit_forecaster_from_pv_file(tmp_path, capsys):
    grid = SamplingGrid(day_hours=24.0, step_hours=0.25)
    days = SyntheticPvGenerator().generate(20, grid, seed=11)
    pv_path = tmp_path / "panel.csv"
    save_pv_csv(pv_path, days)
    config = write_config(tmp_path / "config.json", pv_file=str(pv_path))
    assert main(["--config", config, "--out", str(tmp_path),
                 "fit-forecaster"]) == EXIT_OK
    assert "observed days: 20" in capsys.readouterr().out
    Forecaster.from_json((tmp_path / "forecaster.json").read_text())


def test_fit_forecaster_rejects_mismatched_pv_grid(tmp_path, capsys):
    coarse = SamplingGrid(day_hours=24.0, step_hours=0.5)
    days = [DailyProfile(samples=np.ones(48), day_index=i) for i in range(12)]
    pv_path = tmp_path / "panel.csv"
    save_pv_csv(pv_path, days)
    del coarse
    config = write_config(tmp_path / "config.json", pv_file=str(pv_path))
    assert main(["--config", config, "--out", str(tmp_path),
                 "fit-forecaster"]) == EXIT_CONFIG
    assert "sub-step grid" in capsys.readouterr().err


def test_periodic_writes_reference(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "periodic"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "periodicity residual" in out
    ref = PeriodicReference.from_json((tmp_path / "periodic.json").read_text())
    assert ref.u.shape == (24, 2)
    assert ref.residual <= 1e-3


def test_run_writes_metrics_and_trace(run_twice):
    first, _ = run_twice
    metrics = json.loads((first / "metrics.json").read_text())
    for key in ("method", "total_cost", "grid_energy_kwh", "pv_share",
                "violations", "per_day"):
        assert key in metrics
    assert metrics["method"] == "so"
    lines = (first / "trace.csv").read_text().strip().split("\n")
    assert len(lines) == 1 + 24
    assert lines[0].split(",")[:4] == ["t", "day", "hour", "method"]


def test_rerun_is_byte_identical(run_twice):
    first, second = run_twice
    for name in ("metrics.json", "trace.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_run_deterministic_method(tmp_path):
    assert main(["--out", str(tmp_path), "run", "--method", "do"]) == EXIT_OK
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["method"] == "do"
    assert 0.0 <= metrics["pv_share"] <= 1.0


def test_compare_writes_ratio_table(tmp_path, capsys):
    config = write_config(tmp_path / "config.json", days=1, cases=[0])
    assert main(["--config", config, "--out", str(tmp_path),
                 "compare"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "total" in out
    lines = (tmp_path / "comparison.csv").read_text().strip().split("\n")
    assert lines[0] == "case,cost_ratio,grid_energy_ratio"
    assert len(lines) == 1 + 1 + 1  # one case plus the aggregate row
    assert lines[-1].split(",")[0] == "total"


def test_unreadable_config_exits_io(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "absent.json"),
                 "identify"]) == EXIT_IO
    capsys.readouterr()
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["--config", str(broken), "identify"]) == EXIT_IO
    assert "cannot parse" in capsys.readouterr().err


def test_invalid_settings_exit_config(tmp_path, capsys):
    array_root = tmp_path / "array.json"
    array_root.write_text("[1, 2, 3]")
    assert main(["--config", str(array_root), "identify"]) == EXIT_CONFIG
    unknown = write_config(tmp_path / "unknown.json", dayz=3)
    assert main(["--config", str(unknown), "identify"]) == EXIT_CONFIG
    bad_value = write_config(tmp_path / "bad.json", days=0)
    assert main(["--config", str(bad_value), "identify"]) == EXIT_CONFIG
    capsys.readouterr()


def test_negative_seed_exits_config(capsys):
    assert main(["--seed", "-1", "identify"]) == EXIT_CONFIG
    assert "nonnegative" in capsys.readouterr().err


def test_unserviceable_demand_exits_numerical(tmp_path, capsys):
    demand = tmp_path / "demand.csv"
    np.savetxt(demand, np.full(24, 500.0), delimiter=",")
    config = write_config(tmp_path / "config.json",
                          demand_file=str(demand))
    assert main(["--config", config, "--out", str(tmp_path),
                 "periodic"]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_profile_file_length_checked(tmp_path, capsys):
    price = tmp_path / "price.csv"
    np.savetxt(price, np.array([0.1, 0.2]), delimiter=",")
    config = write_config(tmp_path / "config.json", price_file=str(price))
    assert main(["--config", config, "identify"]) == EXIT_CONFIG
    assert "24" in capsys.readouterr().err


def test_missing_pv_file_exits_io(tmp_path, capsys):
    config = write_config(tmp_path / "config.json",
                          pv_file=str(tmp_path / "nope.csv"))
    assert main(["--config", config, "fit-forecaster"]) == EXIT_IO
    capsys.readouterr()


def test_console_script_entry_point():
    exe = shutil.which("pvpump")
    assert exe is not None
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "pvpump" in proc.stdout
