"""Shared fixtures: thread pinning and a session-scoped oracle cache dir."""

import pytest
from threadpoolctl import threadpool_limits

# the batched matmuls here are too small to gain from BLAS threads; pinning
# to one thread is ~25% faster on small boxes and keeps timings stable
threadpool_limits(1)


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("oracle_cache")
    return str(path)


@pytest.fixture(autouse=True)
def _isolate_cache_env(monkeypatch, tmp_path):
    # keep stray cache writes inside the test tree
    monkeypatch.setenv("PCBF_CACHE_DIR", str(tmp_path / "pcbf_cache"))
