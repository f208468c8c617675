from __future__ import annotations

import numpy as np

from ergmk.graphs import Graph, all_toggles


def random_graph(rng: np.random.Generator, n: int, directed: bool, p: float = 0.5) -> Graph:
    g = Graph(n, directed)
    for t in all_toggles(n, directed):
        if rng.random() < p:
            g._flip(t.i, t.j)
    return g


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
