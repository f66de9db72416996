from pathlib import Path

import pytest

from lamegap import harness as H

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _sweep(name):
    cfg = H.load_config(CONFIGS / f"{name}.yaml")
    return cfg, H.run_sweep(cfg, cfg.all_eps)


@pytest.fixture(scope="session")
def default_sweep():
    return _sweep("default")


@pytest.fixture(scope="session")
def rigid_sweep():
    return _sweep("rigid")


@pytest.fixture(scope="session")
def example_sweep():
    return _sweep("example")


@pytest.fixture(scope="session")
def default_starred(default_sweep):
    cfg, recs = default_sweep
    return H.starred_from_records(recs, cfg)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
