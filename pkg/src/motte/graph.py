"""Device coupling graphs: connectivity, connected subsets and colorings."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence


@dataclass(frozen=True)
class CouplingGraph:
    """Simple connected graph on qubits ``0..n_qubits-1``.

    Edges are stored as sorted pairs. Construction fails on self-loops,
    duplicate edges, out-of-range vertices or a disconnected graph.
    """

    n_qubits: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("a coupling graph needs at least one qubit")
        seen = set()
        normalized = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on qubit {u}")
            if not (0 <= u < self.n_qubits and 0 <= v < self.n_qubits):
                raise ValueError(f"edge ({u}, {v}) outside 0..{self.n_qubits - 1}")
            e = (min(u, v), max(u, v))
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
            normalized.append(e)
        object.__setattr__(self, "edges", tuple(sorted(normalized)))
        adj: dict[int, list[int]] = {q: [] for q in range(self.n_qubits)}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(self, "_adj", {q: tuple(sorted(ns)) for q, ns in adj.items()})
        if not self.is_connected(range(self.n_qubits)):
            raise ValueError("coupling graph must be connected")

    # -- families ---------------------------------------------------------
    @classmethod
    def path(cls, n: int) -> "CouplingGraph":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def ring(cls, n: int) -> "CouplingGraph":
        if n < 3:
            return cls.path(n)
        return cls(n, tuple((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def complete(cls, n: int) -> "CouplingGraph":
        return cls(n, tuple(combinations(range(n), 2)))

    @classmethod
    def bipartite(cls, n: int) -> "CouplingGraph":
        """Complete bipartite graph between even and odd qubits."""
        if n < 2:
            return cls(n, ())
        evens = range(0, n, 2)
        odds = range(1, n, 2)
        return cls(n, tuple((a, b) for a in evens for b in odds))

    @classmethod
    def from_spec(cls, family: str, n: int) -> "CouplingGraph":
        builders = {"path": cls.path, "ring": cls.ring, "complete": cls.complete,
                    "bipartite": cls.bipartite}
        if family not in builders:
            raise ValueError(f"unknown graph family {family!r}; expected one of {sorted(builders)}")
        return builders[family](n)

    # -- queries ----------------------------------------------------------
    def neighbors(self, q: int) -> tuple[int, ...]:
        return self._adj[q]

    def has_edge(self, u: int, v: int) -> bool:
        return v in self._adj.get(u, ())

    def is_connected(self, vertices: Iterable[int]) -> bool:
        verts = set(vertices)
        if not verts:
            return False
        start = min(verts)
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for w in self._adj[u]:
                if w in verts and w not in seen:
                    seen.add(w)
                    queue.append(w)
        return seen == verts

    def connected_subsets(self, max_size: int, vertices: Sequence[int] | None = None) -> list[tuple[int, ...]]:
        """All connected vertex sets of size 1..max_size, sorted (size, members)."""
        allowed = set(range(self.n_qubits)) if vertices is None else set(vertices)
        found: set[frozenset[int]] = set()
        frontier = [frozenset([v]) for v in allowed]
        found.update(frontier)
        for _ in range(max_size - 1):
            nxt = set()
            for s in frontier:
                for u in s:
                    for w in self._adj[u]:
                        if w in allowed and w not in s:
                            t = s | {w}
                            if t not in found:
                                nxt.add(t)
            found.update(nxt)
            frontier = list(nxt)
        return sorted((tuple(sorted(s)) for s in found), key=lambda t: (len(t), t))

    def two_coloring(self, vertices: Sequence[int] | None = None) -> dict[int, int] | None:
        """Proper 2-coloring of the induced subgraph, or None if not bipartite."""
        verts = set(range(self.n_qubits)) if vertices is None else set(vertices)
        color: dict[int, int] = {}
        for root in sorted(verts):
            if root in color:
                continue
            color[root] = 0
            queue = deque([root])
            while queue:
                u = queue.popleft()
                for w in self._adj[u]:
                    if w not in verts:
                        continue
                    if w not in color:
                        color[w] = 1 - color[u]
                        queue.append(w)
                    elif color[w] == color[u]:
                        return None
        return color

    def greedy_coloring(self, vertices: Sequence[int] | None = None) -> dict[int, int]:
        """Largest-degree-first greedy coloring; exact 2-coloring when bipartite."""
        two = self.two_coloring(vertices)
        if two is not None:
            return two
        verts = set(range(self.n_qubits)) if vertices is None else set(vertices)
        order = sorted(verts, key=lambda q: (-sum(1 for w in self._adj[q] if w in verts), q))
        color: dict[int, int] = {}
        for q in order:
            used = {color[w] for w in self._adj[q] if w in color}
            c = 0
            while c in used:
                c += 1
            color[q] = c
        return color

    def to_json(self) -> dict:
        return {"n_qubits": self.n_qubits, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_json(cls, data: dict) -> "CouplingGraph":
        return cls(int(data["n_qubits"]), tuple(tuple(e) for e in data["edges"]))
