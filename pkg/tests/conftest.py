"""Shared fixtures: grids, random fields and one cached KSE simulation."""

import numpy as np
import pytest

from sropinf.models import FomConfig, kse, simulate
from sropinf.pipeline import KSE_INITIAL_CONDITION, prepare_window
from sropinf.spectral_field import Field, Grid
from sropinf.symmetry import Template


def random_field(rng, grid, batch=(), decay=0.25, mean=True):
    """Smooth random real field with coefficients decaying like exp(-decay k)."""
    shape = tuple(batch) + (grid.n_modes,)
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.exp(-decay * grid.k)
    if not mean:
        c[..., 0] = 0
    return Field(grid, c)


@pytest.fixture
def grid():
    return Grid()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cos_template(grid):
    return Template.cosine(grid)


@pytest.fixture(scope="session")
def kse_run():
    """Full-order KSE trajectory to t = 130 (about half a minute, computed once)."""
    g = Grid()
    pde = kse(4.0 / 87.0, g)
    u0 = Field.from_modes(g, KSE_INITIAL_CONDITION)
    return pde, simulate(pde, u0, FomConfig(dt=1e-3, t_final=130.0, record_interval=0.01))


@pytest.fixture(scope="session")
def kse_train_window(kse_run):
    pde, sim = kse_run
    tpl = Template.cosine(pde.grid)
    return pde, tpl, prepare_window(sim.window(120.0, 130.0), tpl)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record a ``CRITERION k: PASS/FAIL`` line, printed in the terminal summary."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(k, ok, detail):
        line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
        store[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_CRITERIA, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for k in sorted(store):
            terminalreporter.write_line(store[k])
