"""Shared, expensive fixtures: full-grid fits are computed once per session."""

import time

import pytest

from scalefit.lawfit import FitConfig, fit_multi_epoch, fit_single_epoch
from scalefit.laws import SPEECH
from scalefit.synthgen import SynthSpec, generate_runs

# The fixed seed for every noisy fixture. Chosen before looking at any fit.
SEED = 0

# Wall-clock seconds of the expensive fits, keyed by fixture name.
TIMINGS: dict[str, float] = {}

# One (criterion, passed, detail) entry per acceptance criterion.
ACCEPTANCE: list[tuple[int, bool, str]] = []


def _timed(name, fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    TIMINGS[name] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def speech_runs_clean():
    return generate_runs(SynthSpec(SPEECH, noise_sigma=0.0, seed=SEED))


@pytest.fixture(scope="session")
def speech_runs_noisy():
    return generate_runs(SynthSpec(SPEECH, noise_sigma=0.01, seed=SEED))


@pytest.fixture(scope="session")
def fit_clean(speech_runs_clean):
    return _timed("fit_clean", fit_single_epoch, speech_runs_clean)


@pytest.fixture(scope="session")
def fit_noisy(speech_runs_noisy):
    return _timed("fit_noisy", fit_single_epoch, speech_runs_noisy)


@pytest.fixture(scope="session")
def fit_noisy_concurrent(speech_runs_noisy):
    """Same fit on two worker processes with a reversed evaluation order."""
    n = len(FitConfig().init_grid.points())
    return fit_single_epoch(
        speech_runs_noisy, FitConfig(workers=2), order=list(reversed(range(n)))
    )


@pytest.fixture(scope="session")
def multi_fit_clean(speech_runs_clean):
    return fit_multi_epoch(speech_runs_clean, SPEECH.base)


@pytest.fixture(scope="session")
def multi_fit_noisy(speech_runs_noisy):
    return fit_multi_epoch(speech_runs_noisy, SPEECH.base)
