import numpy as np
import pytest

from landprospect.raster import CategoricalRaster, ContinuousRaster, default_legend
from landprospect.synth import synth_scenario

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def legend():
    return default_legend()


@pytest.fixture(scope="session")
def small_scenario():
    """48x48 scenario shared by the slower integration tests."""
    return synth_scenario({"rows": 48, "cols": 48}, seed=3)


def random_map(rng, legend, shape, nodata_frac=0.1, codes=None):
    codes = legend.codes if codes is None else codes
    v = rng.choice(np.asarray(codes), size=shape)
    v[rng.random(shape) < nodata_frac] = 0
    return CategoricalRaster(v, legend)


def random_factor(rng, shape, name="f", nodata_frac=0.0):
    v = rng.normal(size=shape)
    v[rng.random(shape) < nodata_frac] = np.nan
    return ContinuousRaster(v, name=name)


ACCEPTANCE_LINES = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    """Log one acceptance line (also printed immediately under ``-s``)."""
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
