"""Indistinguishability checker for locally unordered message passing.

Color refinement computes, per node and depth, a canonical digest of the
node's computation tree: depth 0 is the node feature, and each later depth
combines the node's own previous color with the sorted multiset of
(neighbour color, edge feature) pairs, plus the rounded neighbour distance
in 3D mode. Two graphs are indistinguishable exactly when their per-depth
color multisets agree, and in that case the nodes can be paired so that any
locally unordered network produces identical embeddings along the pairing.

The module also computes exact structural certificates (girth, cycle sizes,
cut edges) by exhaustive enumeration, builds protein-ligand complex graphs
with all-pairs cross edges, and ships a certified pair of molecules that
refinement cannot separate even though their certificates differ.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from . import rng as prng
from .chem import MolecularGraph, UnlabelledGraph, parse_smiles
from .graphs import bridges

__all__ = [
    "ColorHistory",
    "FeaturedGraph",
    "PropertyCertificate",
    "Verdict",
    "build_complex",
    "certified_pair",
    "color_refine",
    "featured_from_molecule",
    "featured_from_pocket",
    "featured_from_unlabelled",
    "graph_properties",
    "indistinguishable",
    "reference_embeddings",
    "verify_prop1",
]

MODES = ("LU", "LU3D")
DISTANCE_QUANTUM = 1e-6
MAX_CERTIFICATE_NODES = 32


@dataclass(frozen=True)
class FeaturedGraph:
    """Undirected graph with hashable node and edge feature tokens and
    optional 3D coordinates."""

    node_features: tuple
    edges: tuple
    coords: tuple | None = None

    def __post_init__(self):
        seen = set()
        norm = []
        for i, j, feat in self.edges:
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i},{j}) out of range")
            if i == j:
                raise ValueError(f"self-edge on node {i}")
            a, b = (i, j) if i < j else (j, i)
            if (a, b) in seen:
                raise ValueError(f"duplicate edge ({a},{b})")
            seen.add((a, b))
            norm.append((a, b, feat))
        object.__setattr__(self, "edges", tuple(sorted(norm, key=lambda e: e[:2])))
        if self.coords is not None:
            coords = tuple(tuple(float(c) for c in p) for p in self.coords)
            if len(coords) != self.n_nodes:
                raise ValueError(
                    f"{len(coords)} coordinates for {self.n_nodes} nodes"
                )
            for p in coords:
                if len(p) != 3 or not all(math.isfinite(c) for c in p):
                    raise ValueError("coordinates must be finite 3-vectors")
            object.__setattr__(self, "coords", coords)

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    def neighbours(self) -> list[list[tuple[int, object]]]:
        out: list[list[tuple[int, object]]] = [[] for _ in range(self.n_nodes)]
        for i, j, feat in self.edges:
            out[i].append((j, feat))
            out[j].append((i, feat))
        return out


def featured_from_molecule(m: MolecularGraph, coords=None) -> FeaturedGraph:
    """Element labels as node features, bond orders as edge features."""
    return FeaturedGraph(m.atoms, m.bonds, coords)


def featured_from_unlabelled(u: UnlabelledGraph, coords=None) -> FeaturedGraph:
    """Uniform node features, bond orders as edge features."""
    return FeaturedGraph(("*",) * u.n_nodes, u.edges, coords)


def featured_from_pocket(pocket) -> FeaturedGraph:
    """Residue identities as node features over the symmetrized pocket
    adjacency, with residue coordinates attached."""
    src, dst = pocket.edge_arrays
    pairs = {(min(int(i), int(j)), max(int(i), int(j))) for i, j in zip(src, dst)}
    edges = tuple((i, j, 1) for i, j in sorted(pairs))
    feats = tuple(r.aa for r in pocket.residues)
    return FeaturedGraph(feats, edges, tuple(map(tuple, pocket.coords)))


class _Interner:
    """Maps canonical encodings to 64-bit ids, bijectively.

    Digest collisions are resolved by deterministic re-salting, so equal ids
    always mean equal encodings."""

    def __init__(self):
        self._by_string: dict[str, int] = {}
        self._by_id: dict[int, str] = {}

    def intern(self, encoding: str) -> int:
        known = self._by_string.get(encoding)
        if known is not None:
            return known
        salt = 0
        while True:
            salted = encoding if salt == 0 else f"{encoding}#salt{salt}"
            d = int.from_bytes(blake2b(salted.encode(), digest_size=8).digest(), "big")
            held = self._by_id.get(d)
            if held is None:
                self._by_string[encoding] = d
                self._by_id[d] = encoding
                return d
            salt += 1


@dataclass(frozen=True)
class ColorHistory:
    """Node colors per refinement depth; levels[l][v] is v's color at depth l."""

    levels: tuple

    def __post_init__(self):
        for l in range(len(self.levels) - 1):
            groups: dict[int, set[int]] = {}
            for v, c in enumerate(self.levels[l + 1]):
                groups.setdefault(c, set()).add(self.levels[l][v])
            for c, olds in groups.items():
                if len(olds) > 1:
                    raise ValueError(f"partition at depth {l + 1} does not refine depth {l}")

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def multiset(self, l: int) -> tuple:
        return tuple(sorted(self.levels[l]))

    def partition(self, l: int) -> tuple:
        groups: dict[int, list[int]] = {}
        for v, c in enumerate(self.levels[l]):
            groups.setdefault(c, []).append(v)
        return tuple(sorted(tuple(g) for g in groups.values()))

    def stable_depth(self) -> int:
        """First depth whose partition no longer changes."""
        for l in range(self.depth):
            if self.partition(l) == self.partition(l + 1):
                return l
        return self.depth


def _distance_token(a, b) -> int:
    d = math.dist(a, b)
    return int(round(d / DISTANCE_QUANTUM))


def color_refine(
    g: FeaturedGraph, L: int, mode: str = "LU", interner: _Interner | None = None
) -> ColorHistory:
    """Refine node colors for L rounds; pass one interner to two calls to
    make the resulting color ids comparable across graphs."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if L < 0:
        raise ValueError(f"L must be nonnegative, got {L}")
    if mode == "LU3D" and g.coords is None:
        raise ValueError("LU3D mode requires coordinates")
    interner = interner or _Interner()
    colors = [interner.intern(f"h:{g.node_features[v]!r}") for v in range(g.n_nodes)]
    levels = [tuple(colors)]
    nbrs = g.neighbours()
    for _ in range(L):
        nxt = []
        for v in range(g.n_nodes):
            entries = []
            for u, feat in nbrs[v]:
                if mode == "LU3D":
                    entries.append((colors[u], repr(feat), _distance_token(g.coords[u], g.coords[v])))
                else:
                    entries.append((colors[u], repr(feat), 0))
            entries.sort()
            enc = f"{colors[v]}|" + ",".join(f"({c},{f},{d})" for c, f, d in entries)
            nxt.append(interner.intern(enc))
        colors = nxt
        levels.append(tuple(colors))
    return ColorHistory(tuple(levels))


@dataclass(frozen=True)
class Verdict:
    """Outcome of an indistinguishability check."""

    indistinguishable: bool
    depth_checked: int
    separating_depth: int | None = None
    pairing: tuple | None = None

    def __bool__(self) -> bool:
        return self.indistinguishable


def indistinguishable(
    g1: FeaturedGraph, g2: FeaturedGraph, mode: str = "LU", L: int | None = None
) -> Verdict:
    """Compare per-depth color multisets; on success return a node pairing
    that matches colors at the deepest level."""
    if L is None:
        L = 2 * max(g1.n_nodes, g2.n_nodes)
    interner = _Interner()
    h1 = color_refine(g1, L, mode, interner)
    h2 = color_refine(g2, L, mode, interner)
    for l in range(L + 1):
        if h1.multiset(l) != h2.multiset(l):
            return Verdict(False, L, separating_depth=l)
    order1 = sorted(range(g1.n_nodes), key=lambda v: h1.levels[L][v])
    order2 = sorted(range(g2.n_nodes), key=lambda v: h2.levels[L][v])
    pairing = tuple(zip(order1, order2))
    return Verdict(True, L, pairing=pairing)


@dataclass(frozen=True)
class PropertyCertificate:
    """Exact structural facts refinement may or may not see."""

    girth: int
    largest_cycle: int
    cut_edges: int
    conjoined: bool
    cycle_count: int


def _all_simple_cycles(n: int, adj: list[list[int]]) -> list[tuple[int, ...]]:
    """Every simple cycle exactly once: rooted at its smallest node, traversed
    toward its smaller second endpoint."""
    cycles: list[tuple[int, ...]] = []

    def walk(start: int, u: int, visited: set[int], path: list[int]):
        for w in adj[u]:
            if w == start and len(path) >= 3:
                if path[1] < path[-1]:
                    cycles.append(tuple(path))
            elif w > start and w not in visited:
                visited.add(w)
                path.append(w)
                walk(start, w, visited, path)
                path.pop()
                visited.remove(w)

    for s in range(n):
        walk(s, s, {s}, [s])
    return cycles


def graph_properties(g: FeaturedGraph) -> PropertyCertificate:
    """Certificate via exhaustive cycle enumeration and bridge finding."""
    n = g.n_nodes
    if n > MAX_CERTIFICATE_NODES:
        raise ValueError(f"certificates support up to {MAX_CERTIFICATE_NODES} nodes, got {n}")
    adj: list[list[int]] = [[] for _ in range(n)]
    pairs = []
    for i, j, _ in g.edges:
        adj[i].append(j)
        adj[j].append(i)
        pairs.append((i, j))
    cycles = _all_simple_cycles(n, adj)
    lengths = [len(c) for c in cycles]
    cut = len(bridges(n, pairs))
    conjoined = False
    edge_sets = []
    for c in cycles:
        es = frozenset(
            (min(a, b), max(a, b)) for a, b in zip(c, c[1:] + (c[0],))
        )
        edge_sets.append(es)
    for a, b in itertools.combinations(edge_sets, 2):
        if a & b:
            conjoined = True
            break
    return PropertyCertificate(
        girth=min(lengths) if lengths else 0,
        largest_cycle=max(lengths) if lengths else 0,
        cut_edges=cut,
        conjoined=conjoined,
        cycle_count=len(cycles),
    )


def build_complex(p: FeaturedGraph, g: FeaturedGraph, cross_edge_rule) -> FeaturedGraph:
    """Join two graphs with all cross pairs; cross-edge features come from
    the endpoint node features alone."""
    off = p.n_nodes
    edges = list(p.edges)
    edges += [(i + off, j + off, feat) for i, j, feat in g.edges]
    for i in range(p.n_nodes):
        for j in range(g.n_nodes):
            edges.append((i, j + off, cross_edge_rule(p.node_features[i], g.node_features[j])))
    coords = None
    if p.coords is not None and g.coords is not None:
        coords = p.coords + g.coords
    return FeaturedGraph(p.node_features + g.node_features, tuple(edges), coords)


def verify_prop1(
    p: FeaturedGraph,
    g1: FeaturedGraph,
    g2: FeaturedGraph,
    cross_edge_rule,
    L: int | None = None,
) -> Verdict:
    """Check that joining an indistinguishable pair to the same partner
    preserves indistinguishability. The converse direction is not claimed."""
    base = indistinguishable(g1, g2, "LU")
    if not base:
        raise ValueError(
            f"inputs are distinguishable at depth {base.separating_depth}; "
            "the claim only covers indistinguishable pairs"
        )
    c1 = build_complex(p, g1, cross_edge_rule)
    c2 = build_complex(p, g2, cross_edge_rule)
    return indistinguishable(c1, c2, "LU", L)


CERTIFIED_SMILES = ("C1CCC2CCCCC2C1", "C1CCC(C1)C2CCCC2")


def _unit_bond_coords(m: MolecularGraph, seed: int) -> tuple:
    from .dock import generate_pose

    pose = generate_pose(m, seed, gtol=1e-10)
    x = pose.as_array()
    lengths = [float(np.linalg.norm(x[i] - x[j])) for i, j, _ in m.bonds]
    x = x / (sum(lengths) / len(lengths))
    lengths = [float(np.linalg.norm(x[i] - x[j])) for i, j, _ in m.bonds]
    dev = max(abs(l - 1.0) for l in lengths)
    if dev > 1e-7:
        raise ValueError(f"unit-bond embedding off by {dev:g}")
    return tuple(map(tuple, x))


def certified_pair() -> tuple[FeaturedGraph, FeaturedGraph, tuple[PropertyCertificate, PropertyCertificate]]:
    """The fused-bicyclic / bridged-bicyclic pair: identical to refinement in
    both modes, yet their structural certificates disagree.

    Both molecules are all-carbon with single bonds, embedded in 3D with all
    edge lengths 1, so node features, edge features, and edge lengths are
    uniform and only connectivity could separate them."""
    out = []
    for k, smiles in enumerate(CERTIFIED_SMILES):
        m = parse_smiles(smiles)
        coords = _unit_bond_coords(m, seed=1000 + k)
        out.append(featured_from_molecule(m, coords))
    g1, g2 = out
    return g1, g2, (graph_properties(g1), graph_properties(g2))


def _token_vector(seed: int, kind: str, token, dim: int) -> np.ndarray:
    return prng.stream(seed, "refgnn", kind, repr(token)).normal(size=dim)


def reference_embeddings(
    g: FeaturedGraph, mode: str, L: int, seed: int, dim: int = 8
) -> list[np.ndarray]:
    """Run one randomly weighted locally unordered network, forward only.

    Messages are tanh MLPs of (neighbour state, edge feature vector, and the
    raw distance in 3D mode), aggregated by sum and combined with the node's
    own state through a second tanh MLP. Used as an independent check that
    refinement verdicts are sound; deliberately shares no code with
    color_refine."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "LU3D" and g.coords is None:
        raise ValueError("LU3D mode requires coordinates")
    h = np.stack([_token_vector(seed, "node", t, dim) for t in g.node_features])
    nbrs = g.neighbours()
    msg_in = 2 * dim + (1 if mode == "LU3D" else 0)
    layers = [h.copy()]
    for l in range(L):
        w1 = prng.stream(seed, "refgnn", "w1", l).normal(size=(msg_in, dim)) / math.sqrt(msg_in)
        b1 = prng.stream(seed, "refgnn", "b1", l).normal(size=dim) * 0.1
        w2 = prng.stream(seed, "refgnn", "w2", l).normal(size=(2 * dim, dim)) / math.sqrt(2 * dim)
        b2 = prng.stream(seed, "refgnn", "b2", l).normal(size=dim) * 0.1
        nxt = np.zeros_like(h)
        for v in range(g.n_nodes):
            agg = np.zeros(dim)
            for u, feat in nbrs[v]:
                e = _token_vector(seed, "edge", feat, dim)
                parts = [h[u], e]
                if mode == "LU3D":
                    parts.append(np.array([math.dist(g.coords[u], g.coords[v])]))
                agg += np.tanh(np.concatenate(parts) @ w1 + b1)
            nxt[v] = np.tanh(np.concatenate([h[v], agg]) @ w2 + b2)
        h = nxt
        layers.append(h.copy())
    return layers
