import sys

import numpy as np
import pytest

from rdm_gmr.core import Composition, CompositionEstimate, GmrDataset


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance gate's verdict lines after capture ends."""
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "_VERDICTS", None) if module else None
    if verdicts:
        terminalreporter.section("acceptance gate")
        for line in verdicts:
            terminalreporter.write_line(line)


def make_week(p, beta=0.05, n=100):
    """A week whose SEs follow the proportional rule s^2 = beta * p(1-p)."""
    p = np.asarray(p, dtype=float)
    return CompositionEstimate(
        p_hat=Composition(p), se=np.sqrt(beta * p * (1.0 - p)), n=n
    )


def make_dataset(p_rows, weights, lake_mask, marked=1000.0, betas=None, ns=None):
    p_rows = [np.asarray(p, dtype=float) for p in p_rows]
    t = len(p_rows)
    betas = betas if betas is not None else [0.05] * t
    ns = ns if ns is not None else [100] * t
    weeks = tuple(make_week(p, beta=b, n=n) for p, b, n in zip(p_rows, betas, ns))
    k = p_rows[0].size
    return GmrDataset(
        weeks=weeks,
        weights=np.asarray(weights, dtype=float),
        lake_mask=np.asarray(lake_mask, dtype=bool),
        marked=marked,
        stocks=tuple(f"s{i}" for i in range(k)),
        week_labels=tuple(range(1, t + 1)),
    )


@pytest.fixture
def small_dataset():
    return make_dataset(
        p_rows=[[0.5, 0.3, 0.2], [0.4, 0.35, 0.25], [0.6, 0.25, 0.15]],
        weights=[0.3, 0.4, 0.3],
        lake_mask=[True, False, False],
        marked=500.0,
    )


@pytest.fixture
def two_lake_dataset():
    return make_dataset(
        p_rows=[[0.45, 0.12, 0.33, 0.10], [0.50, 0.08, 0.30, 0.12]],
        weights=[0.55, 0.45],
        lake_mask=[True, True, False, False],
        marked=800.0,
        betas=[0.02, 0.03],
        ns=[150, 120],
    )
