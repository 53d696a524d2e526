import numpy as np
import pytest

from trialspline.dataset import TrialData
from trialspline.padsim import PadConfig, make_design, simulate_trial


def small_trial(rng, n_subjects=6, K=4, missing=0.0, jitter=0.5, covariate=True, dropout=True):
    """Random small trial with visits every six months and some dropout."""
    sid, arm, visit, target, month, version, y, x = [], [], [], [], [], [], [], []
    for i in range(n_subjects):
        a = i % 2
        last = K if (not dropout or rng.random() < 0.7) else int(rng.integers(2, K + 1))
        base = rng.normal()
        xi = rng.normal()
        for j in range(1, last + 1):
            t = 6.0 * (j - 1)
            sid.append(i + 1)
            arm.append(a)
            visit.append(j)
            target.append(t)
            month.append(0.0 if j == 1 else t + rng.uniform(-jitter, jitter))
            version.append("ABC"[(j - 1) % 3])
            yy = base + 0.1 * t - 0.05 * a * t + rng.normal()
            y.append(np.nan if (j > 1 and rng.random() < missing) else yy)
            x.append(xi)
    cov = {"x": x} if covariate else None
    return TrialData(sid, arm, visit, target, month, version, y, cov)


@pytest.fixture(scope="session")
def pad_design():
    return make_design(PadConfig())


@pytest.fixture(scope="session")
def pad_trial(pad_design):
    return simulate_trial(PadConfig(), 11, effect_on=True, design=pad_design)


@pytest.fixture(scope="session")
def pad_small():
    """A 200-subject PAD trial for quicker fits."""
    cfg = PadConfig(n_subjects=200)
    return simulate_trial(cfg, 5, effect_on=True)


# acceptance criteria report -----------------------------------------------------

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
