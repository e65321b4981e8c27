import pytest

from trajbench.adapters import SyntheticAdapter, prepare_sequence


@pytest.fixture(scope="session")
def prepared_root(tmp_path_factory):
    """Benchmark root with both small synthetic sequences built once.

    Tests may add EXPERIMENTS content under unique names but must not
    touch the sequence directories themselves.
    """
    root = tmp_path_factory.mktemp("bench")
    adapter = SyntheticAdapter(seed=7, num_frames=40, width=32, height=24, fps=10.0)
    for name in adapter.sequences():
        prepare_sequence(adapter, name, root)
    return root


@pytest.fixture
def bench_root(tmp_path):
    return tmp_path / "bench"
