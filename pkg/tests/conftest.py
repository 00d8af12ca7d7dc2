import numpy as np
import pytest
from hypothesis import settings

# first calls pay the JIT compile cost, so per-example deadlines are meaningless
settings.register_profile("echodecomp", deadline=None)
settings.load_profile("echodecomp")

from echodecomp.echogram import EchogramCube


def make_cube(values, depth_bin_m=5.0):
    n_depth, n_ping, n_freq, n_day = values.shape
    return EchogramCube(
        values=values,
        depth_axis=(np.arange(n_depth) + 0.5) * depth_bin_m,
        time_axis=np.arange(n_ping) * 200.0,
        freq_axis=np.array([38.0, 120.0, 200.0, 333.0][:n_freq]) if n_freq <= 4 else np.arange(n_freq) + 1.0,
        day_axis=np.datetime64("2017-08-21") + np.arange(n_day),
        depth_bin_m=depth_bin_m,
        time_bin_s=200.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cube_factory():
    return make_cube


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """check(n, ok, detail): record a PASS/FAIL line for acceptance item n and
    assert.  ok=None records SKIP and skips the test."""

    def check(n, ok, detail=""):
        verdict = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"acceptance {n:>2}: {verdict}  {detail}".rstrip()
        print(line)
        _ACCEPTANCE[n] = line
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
