"""Time the joint relay pass against the per-head reference on convnet5."""
import argparse
import time

import numpy as np

from routegrad.gradrouter import RoutingSpec, backward_relay, backward_standard, oracle_relay_grads
from routegrad.netgraph import build_network, forward
from routegrad.presets import DEFAULT_ROUTING, convnet5


def bench(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args()
    g = build_network(convnet5(), seed=0)
    rng = np.random.default_rng(0)
    x = rng.random((args.batch, 1, 28, 28), dtype=np.float32)
    tr = forward(g, x, rng.integers(0, 10, args.batch), "train")
    spec = RoutingSpec.from_graph(g, lows=DEFAULT_ROUTING["convnet5"])
    for name, fn in [("standard", lambda: backward_standard(g, tr)),
                     ("relay joint", lambda: backward_relay(g, tr, spec)),
                     ("relay per-head", lambda: oracle_relay_grads(g, tr, spec))]:
        print(f"{name:<16}{1000 * bench(fn, args.repeat):8.2f} ms")


if __name__ == "__main__":
    main()
