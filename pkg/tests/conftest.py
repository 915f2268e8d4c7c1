import os
from pathlib import Path

import numpy as np
import pytest

from routegrad.gradrouter import RoutingSpec
from routegrad.netgraph import build_network

ROOT = Path(__file__).resolve().parents[1]


def mnist_dir() -> Path | None:
    for cand in (os.environ.get("ROUTEGRAD_MNIST"), ROOT / "data" / "mnist", "/root/data/mnist"):
        if cand and (Path(cand) / "train-images-idx3-ubyte").exists():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def mnist_path():
    d = mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found (set ROUTEGRAD_MNIST or run scripts/fetch_mnist.sh)")
    return d


def toy_mlp_arch(aux=True):
    heads = [{"id": "primary", "kind": "primary", "attach": 2, "layers": [{"type": "fc", "out": 3}]}]
    if aux:
        heads.append({"id": "aux", "kind": "auxiliary", "attach": 1, "weight": 0.3,
                      "layers": [{"type": "fc", "out": 3}]})
    return {
        "input_shape": [4],
        "num_classes": 3,
        "segments": [[{"type": "fc", "out": 5}, "relu"], [{"type": "fc", "out": 6}, "relu"]],
        "heads": heads,
    }


def random_case(seed: int):
    """Random small float64 (graph, routing spec, batch, labels)."""
    rng = np.random.default_rng(seed)
    n_seg = int(rng.integers(2, 6))
    n_cls = int(rng.integers(2, 5))
    conv = bool(rng.integers(0, 2))
    segments = []
    if conv:
        input_shape = [int(rng.integers(1, 3)), 6, 6]
        pools = 0
        for s in range(n_seg):
            layers = [{"type": "conv", "out": int(rng.integers(2, 4)), "kernel": 3, "pad": 1}, "relu"]
            if pools < 1 and rng.random() < 0.4:
                layers.append({"type": "maxpool", "window": 2, "stride": 2})
                pools += 1
            segments.append(layers)
        aux_layers = ["gap", {"type": "fc", "out": n_cls}]
        primary_layers = ["flatten", {"type": "fc", "out": n_cls}]
    else:
        input_shape = [int(rng.integers(3, 7))]
        for s in range(n_seg):
            layers = [{"type": "fc", "out": int(rng.integers(3, 7))}, "relu"]
            if rng.random() < 0.5:
                layers.append({"type": "fc", "out": int(rng.integers(3, 7))})
            segments.append(layers)
        aux_layers = [{"type": "fc", "out": n_cls}]
        primary_layers = [{"type": "fc", "out": n_cls}]
    heads = [{"id": "primary", "kind": "primary", "attach": n_seg, "layers": primary_layers}]
    n_aux = int(rng.integers(0, 3))
    for k in range(n_aux):
        heads.append({"id": f"aux{k}", "kind": "auxiliary", "attach": int(rng.integers(1, n_seg)),
                      "weight": float(rng.uniform(0.1, 1.0)), "layers": aux_layers})
    arch = {"input_shape": input_shape, "num_classes": n_cls, "segments": segments, "heads": heads}
    graph = build_network(arch, seed=seed, dtype=np.float64)
    lows = {h.head_id: int(rng.integers(1, h.attach + 1)) for h in graph.heads}
    spec = RoutingSpec.from_graph(graph, lows=lows, allow_uncovered=True)
    batch = rng.standard_normal((int(rng.integers(2, 6)), *input_shape))
    labels = rng.integers(0, n_cls, size=len(batch))
    return graph, spec, batch, labels


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
