import numpy as np
import pytest
import torch

from mintrec import data, synthgen, trainer


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    torch.set_num_threads(1)
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for ok, name, detail in lines:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for the end-of-run acceptance summary, then assert it."""

    def record(name, ok, detail=""):
        request.config.stash[ACCEPTANCE].append((bool(ok), name, detail))
        assert ok, f"{name}: {detail}"

    return record


@pytest.fixture(scope="session")
def tiny_bundle(tmp_path_factory):
    """50 patients, 400 interactions; small enough to train in seconds."""
    out = tmp_path_factory.mktemp("tiny")
    synthgen.generate(synthgen.GeneratorConfig(n_patients=50, n_interactions=400, n_threads=30, seed=3), out)
    return out


@pytest.fixture(scope="session")
def tiny_dataset(tiny_bundle):
    return data.load_dataset(tiny_bundle)


@pytest.fixture(scope="session")
def tiny_run(tiny_dataset, tmp_path_factory):
    """A short full-model training run with its checkpoint on disk."""
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = trainer.TrainConfig(epochs=3, seed=1, patience=0, checkpoint_dir=str(out))
    return trainer.train(tiny_dataset, cfg), out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
