import numpy as np
import pytest

from modcomplete.graph import ItemGraph
from modcomplete.io import write_features, write_graph
from modcomplete.synthetic import SyntheticSpec, generate_synthetic

SMALL_SPEC = SyntheticSpec(n_clusters=4, items_per_cluster=20, dims=(6, 4), p_intra=0.1, p_inter=0.01, seed=3)


def path_graph(n: int) -> ItemGraph:
    return ItemGraph.from_edges(n, [(v, v + 1) for v in range(n - 1)])


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SMALL_SPEC)


@pytest.fixture
def small_files(tmp_path, small_data):
    """Graph cache, per-modality feature files and an interactions TSV on disk."""
    write_graph(tmp_path / "g.ggr", small_data.graph)
    feats = []
    for m, name in enumerate(small_data.store.names):
        path = tmp_path / f"{name}.gmc"
        write_features(path, small_data.store.features[m])
        feats += ["--features", f"{name}={path}"]
    with open(tmp_path / "inter.tsv", "w") as fh:
        for k, (u, v) in enumerate(small_data.graph.edges()):
            fh.write(f"u{k}\t{u}\nu{k}\t{v}\n")
    return tmp_path, feats


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
