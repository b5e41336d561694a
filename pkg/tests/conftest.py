import numpy as np
import pytest

from errfilt.utils.rng import RandomStreams


@pytest.fixture
def streams():
    return RandomStreams(20240601, "tests")


@pytest.fixture
def gen():
    return np.random.default_rng(7)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """Run inside a scratch directory so logs/ and data/ land there"""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("ERRFILT_DB_PATH", str(tmp_path / "data" / "runs.db"))
    monkeypatch.delenv("ERRFILT_WORKERS", raising=False)
    return tmp_path
