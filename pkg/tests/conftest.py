from os import path
from pathlib import Path

import numpy
import pytest

from core.logic.geo import GeodeticPosition
from core.logic.nn import ModelConfig
from core.logic.split import RawDataset, RawSample
from core.logic.synth import ScenarioConfig, generate
from core.logic.tensor import no_grad
from core.logic.utils import set_quiet

# -------------------------------------
# CONSTANTS

TEST_DATA_DIR = Path(path.dirname(path.abspath(__file__))) / "data"

TEST_EXTERNAL_CSV = TEST_DATA_DIR / "external_layout.csv"
TEST_MAPPING_JSON = TEST_DATA_DIR / "mapping.json"

BS = GeodeticPosition(33.4199, -111.9290, 0.0)


# -------------------------------------
# SLOW EXPERIMENTS

def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the end-to-end learning experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end learning experiments (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# -------------------------------------
# FIXTURES

@pytest.fixture(autouse=True)
def quiet():
    set_quiet(True)
    yield
    set_quiet(False)


@pytest.fixture
def rng():
    return numpy.random.default_rng(20240611)


def make_dataset(beams, seq_lens=None, M=None, powers=False, gaps=()):
    """a RawDataset carrying the given beam labels in (q, t) order.

    seq_lens splits the labels into sequences (one sequence by default);
    gaps lists (q, t) positions after which t jumps by 2.
    """
    beams = list(beams)
    M = M or max(beams) + 1
    seq_lens = seq_lens or [len(beams)]
    samples = []
    i = 0
    for q, n in enumerate(seq_lens):
        t = 0
        for _ in range(n):
            b = beams[i]
            ue = GeodeticPosition(33.42 + 1e-4 * i, -111.93 + 1e-4 * ((i * 7) % 11), 30.0 + i % 5)
            p = None
            if powers:
                p = tuple(1.0 if m == b else 0.1 + 0.01 * m for m in range(M))
            samples.append(RawSample(q, t, BS, ue, ue.altitude_m, b, p))
            t += 2 if (q, t) in gaps else 1
            i += 1
    return RawDataset(samples, M)


@pytest.fixture
def dataset_factory():
    return make_dataset


@pytest.fixture
def small_scenario():
    return ScenarioConfig(M=8, n_sequences=6, seq_len=20, seed=3)


@pytest.fixture
def small_dataset(small_scenario):
    return generate(small_scenario)


@pytest.fixture
def tiny_model_config():
    return ModelConfig(n_features=5, conv_channels=4, hidden=3, fc_hidden=5, M=6, W=4, V=2)


# -------------------------------------
# GRADIENT CHECKING

def gradcheck(build_loss, tensors, rng, n_coords=20, h=1e-5, tol=1e-4):
    """compare autodiff gradients with central finite differences.

    build_loss() must rebuild the scalar loss Tensor from `tensors` on every call.
    Returns the worst relative error seen.
    """
    for t in tensors:
        t.zero_grad()
    build_loss().backward()
    analytic = [t.grad.copy() for t in tensors]

    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            with no_grad():
                flat[i] = old + h
                up = float(build_loss().data)
                flat[i] = old - h
                down = float(build_loss().data)
            flat[i] = old
            numeric = (up - down) / (2 * h)
            a = g.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), tol)
            worst = max(worst, err)
    assert worst < tol, "relative gradient error {0}".format(worst)
    return worst
