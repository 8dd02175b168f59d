import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from rfinterp.simcore import ProbeConfig

torch.set_num_threads(1)


@pytest.fixture
def small_probe():
    """Scaled-down linear probe that keeps unit tests fast."""
    return ProbeConfig(num_elements=32, num_rx_active=16, num_xmit=16, depth_samples=256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class CriterionLog:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self):
        self.lines = []

    @contextmanager
    def check(self, number, title):
        notes = []
        t0 = time.perf_counter()
        try:
            yield notes
        except BaseException as exc:
            reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            self._emit(number, "FAIL", title, notes + [reason], time.perf_counter() - t0)
            raise
        self._emit(number, "PASS", title, notes, time.perf_counter() - t0)

    def _emit(self, number, verdict, title, notes, elapsed):
        detail = "; ".join(notes)
        line = f"criterion {number}: {verdict} - {title} [{elapsed:.1f} s]" + (f" ({detail})" if detail else "")
        self.lines.append(line)
        print(line)


_LOG = CriterionLog()


@pytest.fixture(scope="session")
def criteria():
    return _LOG


def pytest_terminal_summary(terminalreporter):
    if _LOG.lines:
        terminalreporter.section("acceptance criteria")
        for line in _LOG.lines:
            terminalreporter.write_line(line)
