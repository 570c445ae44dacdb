"""Backbone construction: square lattice of base stations, direction-based
rewiring (DBRS), hop distances and shortest-path betweenness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numba
import numpy as np


class InvalidParameterError(ValueError):
    pass


class ConnectivityError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Backbone:
    """Immutable station graph.

    Station ``(i, j)`` sits at planar point ``(i, j)`` and has id
    ``i * edge_len + j``. ``adjacency`` holds sorted neighbor tuples.
    """

    edge_len: int
    adjacency: tuple
    dist: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_stations(self) -> int:
        return self.edge_len * self.edge_len

    @property
    def positions(self) -> np.ndarray:
        ids = np.arange(self.n_stations)
        return np.column_stack([ids // self.edge_len, ids % self.edge_len]).astype(float)

    @property
    def n_links(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def links(self) -> set:
        return {(a, b) for a, nbrs in enumerate(self.adjacency) for b in nbrs if a < b}

    def csr(self):
        """(indptr, indices) arrays, neighbors in ascending id order."""
        if "csr" not in self._cache:
            indptr = np.zeros(self.n_stations + 1, dtype=np.int64)
            indptr[1:] = np.cumsum(self.degrees())
            indices = np.fromiter(
                (b for nbrs in self.adjacency for b in nbrs), dtype=np.int64, count=int(indptr[-1])
            )
            self._cache["csr"] = (indptr, indices)
        return self._cache["csr"]

    @property
    def betweenness(self) -> np.ndarray:
        if "betweenness" not in self._cache:
            self._cache["betweenness"] = compute_betweenness(self)
        return self._cache["betweenness"]

    def same_graph(self, other: "Backbone") -> bool:
        return self.edge_len == other.edge_len and self.adjacency == other.adjacency


def station_id(i: int, j: int, edge_len: int) -> int:
    return i * edge_len + j


def _from_links(edge_len: int, links) -> Backbone:
    nbrs = [set() for _ in range(edge_len * edge_len)]
    for a, b in links:
        if a == b:
            raise AssertionError("self-loop")
        nbrs[a].add(b)
        nbrs[b].add(a)
    return Backbone(edge_len=edge_len, adjacency=tuple(tuple(sorted(s)) for s in nbrs))


def build_lattice(edge_len: int) -> Backbone:
    if edge_len < 2:
        raise InvalidParameterError(f"edge_len must be >= 2, got {edge_len}")
    links = []
    for i in range(edge_len):
        for j in range(edge_len):
            if i + 1 < edge_len:
                links.append((station_id(i, j, edge_len), station_id(i + 1, j, edge_len)))
            if j + 1 < edge_len:
                links.append((station_id(i, j, edge_len), station_id(i, j + 1, edge_len)))
    return _from_links(edge_len, links)


def apply_dbrs(b: Backbone, p: float, rng: np.random.Generator) -> Backbone:
    """Rewire every station's right and down link with probability ``p``.

    The right link of ``(i, j)`` moves to a uniform ``(x, j)`` with ``x > i``;
    the down link moves to a uniform ``(i, y)`` with ``y > j``. The two draws
    are independent. Only the unrewired lattice is a valid input.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"rewiring probability must lie in [0, 1], got {p}")
    L = b.edge_len
    if not b.same_graph(build_lattice(L)):
        raise InvalidParameterError("DBRS expects an unrewired lattice")
    links = []
    for i in range(L):
        for j in range(L):
            s = station_id(i, j, L)
            if i + 1 < L:
                x = i + 1
                if rng.random() < p:
                    x = int(rng.integers(i + 1, L))
                links.append((s, station_id(x, j, L)))
            if j + 1 < L:
                y = j + 1
                if rng.random() < p:
                    y = int(rng.integers(j + 1, L))
                links.append((s, station_id(i, y, L)))
    return _from_links(L, links)


@numba.njit(cache=True)
def _bfs_all(indptr, indices, n):
    dist = np.full((n, n), -1, dtype=np.int16)
    queue = np.empty(n, dtype=np.int64)
    for src in range(n):
        row = dist[src]
        row[src] = 0
        head, tail = 0, 1
        queue[0] = src
        while head < tail:
            u = queue[head]
            head += 1
            du = row[u]
            for k in range(indptr[u], indptr[u + 1]):
                w = indices[k]
                if row[w] < 0:
                    row[w] = du + 1
                    queue[tail] = w
                    tail += 1
    return dist


def compute_distances(b: Backbone) -> Backbone:
    if b.dist is not None:
        return b
    indptr, indices = b.csr()
    dist = _bfs_all(indptr, indices, b.n_stations)
    if (dist < 0).any():
        raise ConnectivityError("backbone is disconnected")
    if dist.max() < np.iinfo(np.int8).max:
        dist = dist.astype(np.int8)  # halves the routing table's cache footprint
    out = dataclasses.replace(b, dist=dist, _cache={})
    out._cache.update(b._cache)
    return out


@numba.njit(cache=True)
def _brandes(indptr, indices, n):
    bc = np.zeros(n)
    sigma = np.zeros(n)
    delta = np.zeros(n)
    d = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    for s in range(n):
        d[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        d[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head, tail = 0, 1
        while head < tail:
            u = order[head]
            head += 1
            for k in range(indptr[u], indptr[u + 1]):
                w = indices[k]
                if d[w] < 0:
                    d[w] = d[u] + 1
                    order[tail] = w
                    tail += 1
                if d[w] == d[u] + 1:
                    sigma[w] += sigma[u]
        if tail < n:
            return bc, False
        # predecessors of w are neighbors one hop closer to s
        for idx in range(tail - 1, 0, -1):
            w = order[idx]
            coeff = (1.0 + delta[w]) / sigma[w]
            for k in range(indptr[w], indptr[w + 1]):
                u = indices[k]
                if d[u] == d[w] - 1:
                    delta[u] += sigma[u] * coeff
            bc[w] += delta[w]
    return bc, True


def compute_betweenness(b: Backbone) -> np.ndarray:
    """Shortest-path betweenness over ordered (s, t) pairs, endpoints excluded."""
    indptr, indices = b.csr()
    bc, connected = _brandes(indptr, indices, b.n_stations)
    if not connected:
        raise ConnectivityError("backbone is disconnected")
    return bc


def degree_distribution(b: Backbone) -> dict:
    """Normalized histogram ``{k: P(k)}`` of station-station degrees."""
    deg = b.degrees()
    ks, counts = np.unique(deg, return_counts=True)
    return {int(k): c / deg.size for k, c in zip(ks, counts)}


def dump_adjacency(b: Backbone) -> str:
    return "".join(
        " ".join(str(x) for x in (s, *nbrs)) + "\n" for s, nbrs in enumerate(b.adjacency)
    )


def load_adjacency(text: str) -> Backbone:
    rows = [list(map(int, line.split())) for line in text.splitlines() if line.strip()]
    edge_len = int(round(len(rows) ** 0.5))
    if edge_len * edge_len != len(rows):
        raise InvalidParameterError("station count is not a perfect square")
    links = [(r[0], w) for r in rows for w in r[1:]]
    return _from_links(edge_len, links)


@lru_cache(maxsize=64)
def make_backbone(edge_len: int, p: float = 0.0, seed: Optional[int] = None) -> Backbone:
    """Lattice, optionally DBRS-rewired, with distances filled in."""
    b = build_lattice(edge_len)
    if p > 0.0:
        b = apply_dbrs(b, p, np.random.default_rng(seed))
    return compute_distances(b)


@dataclass(frozen=True)
class GenericGraph:
    """Arbitrary undirected graph for betweenness checks outside lattices."""

    adjacency: tuple

    @property
    def n_stations(self) -> int:
        return len(self.adjacency)

    @property
    def betweenness(self) -> np.ndarray:
        return compute_betweenness(self)

    def csr(self):
        deg = [len(a) for a in self.adjacency]
        indptr = np.zeros(len(deg) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(deg)
        indices = np.array([w for a in self.adjacency for w in sorted(a)], dtype=np.int64)
        return indptr, indices


def betweenness_of(adjacency: Sequence[Sequence[int]]) -> np.ndarray:
    return compute_betweenness(GenericGraph(tuple(tuple(a) for a in adjacency)))
