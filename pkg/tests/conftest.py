import numpy as np
import pytest

from smcforge.raster import ChannelId, GridGeo, SceneSeries


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_series(T=3, channels=(ChannelId.VV_DB, ChannelId.NDVI), H=4, W=5, seed=0, nan_frac=0.1, t0=16000):
    r = np.random.default_rng(seed)
    data = r.normal(size=(T, len(channels), H, W)).astype(np.float32)
    data[r.random(data.shape) < nan_frac] = np.nan
    return SceneSeries.from_array(data, [t0 + 2 * i for i in range(T)], channels, GridGeo(W, H, 100.0, -50.0, 10.0), 2)


@pytest.fixture(scope="session")
def small_world():
    from smcforge.simworld import SimConfig, generate_world
    return generate_world(SimConfig(grid=GridGeo(8, 8), n_sites=8, days=160, seed=3))


@pytest.fixture(scope="session")
def small_prepared(small_world):
    from smcforge.dataset import prepare
    from smcforge.ingest import align_daily
    w = small_world
    return prepare(align_daily(w.sensors, w.weather, w.scenes, w.sites), truth=w.theta)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {number} ({name}): {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
