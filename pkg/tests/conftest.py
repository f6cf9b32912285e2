import warnings

import numpy as np
import pytest

from affmem import pk
from affmem.synthdata import SynthWorld, sample_arrays

SMALL = dict(
    latent_dim=8,
    enc_hidden=(16,),
    gen_hidden=(16,),
    em_hidden=16,
    prior_hidden=(16,),
    real_hidden=(16,),
    surrogate_width=12,
)


def small_config(**kw) -> pk.PkConfig:
    return pk.PkConfig(**{**SMALL, **kw})


@pytest.fixture(scope="session")
def world():
    return SynthWorld()


@pytest.fixture(scope="session")
def small_trained(world):
    """A small PK_all model trained briefly; read-only for tests."""
    X, Y = sample_arrays(world, 2000, 0, many_people=True)
    model = pk.init_model(small_config(), seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", pk.SaturationWarning)
        pk.fit(model, X, Y, 1500, seed=0)
    return model


@pytest.fixture
def batch():
    rng = np.random.default_rng(0)
    return rng.normal(size=(6, 24)), rng.uniform(-1, 1, (6, 2))


# -- acceptance report ------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and returns ``ok``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(ACCEPTANCE[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
