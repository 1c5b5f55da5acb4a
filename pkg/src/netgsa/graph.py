from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class UndirectedGraph:
    """Simple undirected graph on nodes ``0..d-1``.

    Edges are stored as ordered pairs ``(i, j)`` with ``i < j``; construction
    normalises orientation and rejects self-loops and out-of-range nodes.
    """

    d: int
    edges: frozenset

    def __init__(self, d: int, edges: Iterable[tuple[int, int]] = ()):
        norm = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < d and 0 <= j < d):
                raise ValueError(f"edge ({i}, {j}) out of range for d={d}")
            norm.add((i, j) if i < j else (j, i))
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def empty(cls, d: int) -> UndirectedGraph:
        return cls(d)

    @classmethod
    def complete(cls, d: int) -> UndirectedGraph:
        return cls(d, ((i, j) for i in range(d) for j in range(i + 1, d)))

    @classmethod
    def from_adjacency(cls, A) -> UndirectedGraph:
        A = np.asarray(A, dtype=bool)
        iu, ju = np.nonzero(np.triu(A | A.T, k=1))
        return cls(A.shape[0], zip(iu.tolist(), ju.tolist()))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.d, self.d), dtype=bool)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    def edge_array(self) -> np.ndarray:
        """Edges as a sorted ``(E, 2)`` int64 array."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(sorted(self.edges), dtype=np.int64)

    def isolated(self) -> np.ndarray:
        deg = np.zeros(self.d, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return np.flatnonzero(deg == 0).astype(np.int64)

    def permuted(self, perm) -> UndirectedGraph:
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        return UndirectedGraph(self.d, ((perm[i], perm[j]) for i, j in self.edges))

    def issubgraph(self, other: UndirectedGraph) -> bool:
        return self.d == other.d and self.edges <= other.edges

    def __len__(self) -> int:
        return len(self.edges)
