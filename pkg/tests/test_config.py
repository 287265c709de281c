import json

import pytest

from src.core.config import SolverConfig
from src.core.solve_clock import SolveClock


def test_defaults():
    config = SolverConfig()
    assert config.tolerance == 1e-8
    assert config.max_iters == 500
    assert config.dual_method == "quasi_newton"
    assert config.debug_mode is False


def test_save_and_load(tmp_path):
    path = tmp_path / "config.json"
    config = SolverConfig()
    config.max_iters = 42
    config.dual_method = "lbfgs"
    assert config.save(str(path))

    loaded = SolverConfig(str(path))
    assert loaded.max_iters == 42
    assert loaded.dual_method == "lbfgs"


def test_unknown_keys_are_ignored(tmp_path, caplog):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"tolerance": 1e-6, "colour": "red"}))
    config = SolverConfig()
    assert config.load(str(path))
    assert config.tolerance == 1e-6
    assert not hasattr(config, "colour")
    assert "colour" in caplog.text


def test_bad_file_reports_failure(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{")
    config = SolverConfig()
    assert not config.load(str(path))
    assert not config.load(str(tmp_path / "missing.json"))
    assert config.tolerance == 1e-8


def test_override_skips_unset_values():
    config = SolverConfig().override(tolerance=None, max_iters=7)
    assert config.tolerance == 1e-8
    assert config.max_iters == 7
    with pytest.raises(AttributeError):
        config.override(colour="red")


def test_clock_accumulates_phases():
    clock = SolveClock()
    for _ in range(3):
        with clock.phase("dual"):
            pass
    with clock.phase("projection"):
        pass
    assert clock.phase_counts == {"dual": 3, "projection": 1}
    assert all(seconds >= 0.0 for seconds in clock.phase_times.values())
    assert clock.summary().startswith("dual=")
    assert clock.tick() >= 0.0
    assert SolveClock().summary() == "no phases"
