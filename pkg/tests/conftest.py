import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from panotrack.geometry import PanoBox

settings.register_profile("repo", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")

unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
extent = st.floats(0.01, 1.0, allow_nan=False)


@st.composite
def pano_boxes(draw, max_w=1.0):
    cu = draw(unit)
    cv = draw(st.floats(0.0, 1.0, allow_nan=False))
    w = draw(st.floats(0.01, max_w, allow_nan=False))
    h = draw(extent)
    return PanoBox(cu, cv, w, h)


def random_boxes(rng, n, w_range=(0.05, 0.4), h_range=(0.05, 0.4), seam_frac=0.3):
    """``(n, 4)`` random boxes; about ``seam_frac`` of them straddle the 0/1 seam."""
    cu = rng.random(n)
    w = rng.uniform(*w_range, n)
    seam = rng.random(n) < seam_frac
    cu[seam] = (rng.uniform(-0.5, 0.5, seam.sum()) * w[seam]) % 1.0
    cv = rng.uniform(0.2, 0.8, n)
    h = rng.uniform(*h_range, n)
    return np.stack([cu, cv, w, h], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
