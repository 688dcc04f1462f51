import numpy as np
import pytest

from magi.graph import CsrGraph, from_edges

CORA_DIR = None


def pytest_configure(config):
    global CORA_DIR
    from pathlib import Path
    CORA_DIR = Path(__file__).resolve().parent.parent / "data" / "cora"


def graph_from_pairs(pairs, num_nodes=None) -> CsrGraph:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return from_edges(pairs[:, 0], pairs[:, 1], num_nodes=num_nodes)


def single_node_graph() -> CsrGraph:
    return CsrGraph(1, 0, np.zeros(2, dtype=np.int64),
                    np.empty(0, dtype=np.int64), np.zeros(1, dtype=np.int64))


@pytest.fixture
def path3():
    return graph_from_pairs([(0, 1), (1, 2)])


@pytest.fixture
def triangle():
    return graph_from_pairs([(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def two_triangles():
    return graph_from_pairs([(0, 1), (1, 2), (0, 2),
                             (3, 4), (4, 5), (3, 5)])


@pytest.fixture
def cora_paths():
    """Paths of the converted Cora artifacts; skips when not fetched."""
    paths = {
        "edges": CORA_DIR / "cora.edges",
        "features": CORA_DIR / "cora-features.csv",
        "labels": CORA_DIR / "cora.labels",
    }
    if not all(p.exists() for p in paths.values()):
        pytest.skip(
            "Cora dataset not present (network-restricted environment); "
            "run scripts/fetch_cora.py on a machine with internet access "
            "to enable the Cora acceptance criteria")
    return paths
