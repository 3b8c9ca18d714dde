"""Exact routines on small undirected graphs shared across modules.

Edges are (i, j) or (i, j, order) tuples over nodes 0..n-1; orders are
ignored here. Everything is deterministic and allocation-light; inputs are
molecule- or pocket-sized, so asymptotics take a back seat to clarity.
"""
from __future__ import annotations

__all__ = [
    "adjacency",
    "bfs_distances",
    "connected_components",
    "is_connected",
    "bridges",
]


def adjacency(n_nodes: int, edges) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n_nodes)]
    for e in edges:
        i, j = e[0], e[1]
        adj[i].append(j)
        adj[j].append(i)
    return adj


def bfs_distances(adj: list[list[int]], start: int) -> list[int]:
    """Hop counts from start; -1 marks unreachable nodes."""
    dist = [-1] * len(adj)
    dist[start] = 0
    frontier = [start]
    while frontier:
        nxt = []
        for v in frontier:
            for u in adj[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    nxt.append(u)
        frontier = nxt
    return dist


def connected_components(n_nodes: int, edges) -> list[list[int]]:
    adj = adjacency(n_nodes, edges)
    seen = [False] * n_nodes
    comps = []
    for s in range(n_nodes):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        stack = [s]
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    comp.append(u)
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def is_connected(n_nodes: int, edges) -> bool:
    if n_nodes == 0:
        return False
    return len(connected_components(n_nodes, edges)) == 1


def bridges(n_nodes: int, edges) -> set[tuple[int, int]]:
    """Cut edges, as (min, max) node pairs. Iterative lowlink search."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
    for eid, e in enumerate(edges):
        i, j = e[0], e[1]
        adj[i].append((j, eid))
        adj[j].append((i, eid))
    disc = [-1] * n_nodes
    low = [0] * n_nodes
    out: set[tuple[int, int]] = set()
    timer = 0
    for root in range(n_nodes):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # Stack frames: (node, edge id used to enter it, neighbour iterator).
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, pe, it = stack[-1]
            advanced = False
            for u, eid in it:
                if eid == pe:
                    continue
                if disc[u] < 0:
                    disc[u] = low[u] = timer
                    timer += 1
                    stack.append((u, eid, iter(adj[u])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[u])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[v])
                    if low[v] > disc[p]:
                        e = edges[pe]
                        out.add((min(e[0], e[1]), max(e[0], e[1])))
    return out
