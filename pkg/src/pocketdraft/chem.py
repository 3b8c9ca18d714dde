"""Molecular graphs, a strict SMILES subset, valence rules, and path
fingerprints.

Molecules are heavy-atom graphs; hydrogens are implicit and never
materialized. The SMILES subset covers the uppercase organic elements
C N O F P S Cl Br I, branches, ring-closure digits 1-9 and explicit bond
orders ``- = #``. Aromatic notation, charges, isotopes, stereo marks and
bracket atoms are rejected with a byte offset rather than guessed at.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

from . import graphs

log = logging.getLogger(__name__)

__all__ = [
    "ELEMENTS",
    "MAX_VALENCE",
    "FP_BITS",
    "SmilesError",
    "MolecularGraph",
    "UnlabelledGraph",
    "Fingerprint",
    "parse_smiles",
    "to_smiles",
    "node_degree",
    "valence_ok",
    "strip_labels",
    "fingerprint",
    "tanimoto",
    "read_ligand_db",
]

ELEMENTS = ("C", "N", "O", "F", "P", "S", "Cl", "Br", "I")

MAX_VALENCE = {
    "C": 4,
    "N": 3,
    "O": 2,
    "F": 1,
    "P": 5,
    "S": 6,
    "Cl": 1,
    "Br": 1,
    "I": 1,
}

FP_BITS = 2048
_MAX_PATH_BONDS = 7

_BOND_CHARS = {"-": 1, "=": 2, "#": 3}
_BOND_SYMBOL = {1: "", 2: "=", 3: "#"}
_AROMATIC_CHARS = set("bcnops")


class SmilesError(ValueError):
    """Malformed SMILES input; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


def _normalize_bonds(bonds) -> tuple[tuple[int, int, int], ...]:
    out = []
    for b in bonds:
        i, j, order = int(b[0]), int(b[1]), int(b[2])
        if i > j:
            i, j = j, i
        out.append((i, j, order))
    return tuple(out)


@dataclass(frozen=True)
class MolecularGraph:
    """Heavy-atom molecular graph. Bonds are (i, j, order) with i < j."""

    atoms: tuple[str, ...]
    bonds: tuple[tuple[int, int, int], ...]
    pose: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", _normalize_bonds(self.bonds))
        n = len(self.atoms)
        for a in self.atoms:
            if a not in MAX_VALENCE:
                raise ValueError(f"unknown element {a!r}")
        seen = set()
        for i, j, order in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"bond ({i},{j}) out of range for {n} atoms")
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            if order not in (1, 2, 3):
                raise ValueError(f"bond order {order} not in 1..3")
            if (i, j) in seen:
                raise ValueError(f"duplicate bond ({i},{j})")
            seen.add((i, j))
        if self.pose is not None:
            pose = tuple(tuple(float(c) for c in p) for p in self.pose)
            object.__setattr__(self, "pose", pose)
            if len(pose) != n:
                raise ValueError(f"pose has {len(pose)} points for {n} atoms")
            for p in pose:
                if len(p) != 3 or not all(c == c and abs(c) != float("inf") for c in p):
                    raise ValueError("pose coordinates must be finite 3-vectors")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)


@dataclass(frozen=True)
class UnlabelledGraph:
    """Edge structure with bond orders but no element labels."""

    n_nodes: int
    edges: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", _normalize_bonds(self.edges))
        seen = set()
        for i, j, order in self.edges:
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i},{j}) out of range for {self.n_nodes} nodes")
            if i == j:
                raise ValueError(f"self-edge on node {i}")
            if order not in (1, 2, 3):
                raise ValueError(f"edge order {order} not in 1..3")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add((i, j))


@dataclass(frozen=True)
class Fingerprint:
    """2048-bit path fingerprint stored as one big-int bitmask."""

    bits: int = field(repr=False)

    def count(self) -> int:
        return self.bits.bit_count()


def parse_smiles(s: str) -> MolecularGraph:
    """Parse the SMILES subset; raise SmilesError with a byte offset on fault."""
    atoms: list[str] = []
    bonds: list[tuple[int, int, int]] = []
    bond_keys: set[tuple[int, int]] = set()

    prev: int | None = None
    pending: int | None = None  # explicit bond order awaiting its right atom
    pending_at = -1
    branch_stack: list[tuple[int, int]] = []  # (atom, offset of '(')
    ring_open: dict[str, tuple[int, int | None, int]] = {}  # digit -> (atom, order, offset)

    def add_bond(i: int, j: int, order: int, offset: int) -> None:
        key = (min(i, j), max(i, j))
        if key in bond_keys:
            raise SmilesError(f"duplicate bond between atoms {key[0]} and {key[1]}", offset)
        bond_keys.add(key)
        bonds.append((i, j, order))

    def add_atom(elem: str, offset: int) -> None:
        nonlocal prev, pending
        idx = len(atoms)
        atoms.append(elem)
        if prev is not None:
            add_bond(prev, idx, pending if pending is not None else 1, offset)
        elif pending is not None:
            raise SmilesError("bond symbol before any atom", pending_at)
        pending = None
        prev = idx

    i = 0
    n = len(s)
    while i < n:
        c = s[i]
        if c in _BOND_CHARS:
            if pending is not None:
                raise SmilesError("two bond symbols in a row", i)
            if prev is None:
                raise SmilesError("bond symbol before any atom", i)
            pending = _BOND_CHARS[c]
            pending_at = i
        elif c == "(":
            if prev is None:
                raise SmilesError("branch opened before any atom", i)
            if pending is not None:
                raise SmilesError("bond symbol before '('", i)
            branch_stack.append((prev, i))
        elif c == ")":
            if pending is not None:
                raise SmilesError("dangling bond symbol before ')'", i)
            if not branch_stack:
                raise SmilesError("unbalanced ')'", i)
            prev = branch_stack.pop()[0]
        elif c.isdigit():
            if c == "0":
                raise SmilesError("ring-closure digit 0 is not supported", i)
            if prev is None:
                raise SmilesError("ring-closure digit before any atom", i)
            if c in ring_open:
                other, other_order, opened_at = ring_open.pop(c)
                if other == prev:
                    raise SmilesError(f"ring closure {c} bonds atom {prev} to itself", i)
                if pending is not None and other_order is not None and pending != other_order:
                    raise SmilesError(f"conflicting orders for ring closure {c}", i)
                order = pending if pending is not None else (other_order if other_order is not None else 1)
                add_bond(other, prev, order, i)
            else:
                ring_open[c] = (prev, pending, i)
            pending = None
        elif c == "Cl"[0] and s.startswith("Cl", i):
            add_atom("Cl", i)
            i += 2
            continue
        elif c == "Br"[0] and s.startswith("Br", i):
            add_atom("Br", i)
            i += 2
            continue
        elif c in ("C", "N", "O", "F", "P", "S", "I"):
            add_atom(c, i)
        elif c in _AROMATIC_CHARS:
            raise SmilesError(f"aromatic atom {c!r} is not supported", i)
        elif c == "[":
            raise SmilesError("bracket atoms (charges, isotopes, explicit H) are not supported", i)
        elif c in "@/\\":
            raise SmilesError("stereochemistry marks are not supported", i)
        elif c == "+":
            raise SmilesError("charges are not supported", i)
        elif c == ".":
            raise SmilesError("disconnected-component '.' is not supported", i)
        else:
            raise SmilesError(f"unsupported symbol {c!r}", i)
        i += 1

    if not atoms:
        raise SmilesError("no atoms", 0)
    if pending is not None:
        raise SmilesError("dangling bond symbol at end of input", pending_at)
    if branch_stack:
        raise SmilesError("unclosed '('", branch_stack[-1][1])
    if ring_open:
        digit, (_, _, opened_at) = min(ring_open.items(), key=lambda kv: kv[1][2])
        raise SmilesError(f"unclosed ring digit {digit}", opened_at)
    return MolecularGraph(tuple(atoms), tuple(bonds))


def to_smiles(m: MolecularGraph) -> str:
    """Write a parseable SMILES string (not canonical: traversal order
    follows atom indices)."""
    n = m.n_atoms
    if n == 0:
        raise ValueError("empty molecule")
    if not graphs.is_connected(n, m.bonds):
        raise ValueError("cannot write SMILES for a disconnected molecule")

    order_of = {}
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j, order in m.bonds:
        adj[i].append(j)
        adj[j].append(i)
        order_of[(i, j)] = order_of[(j, i)] = order

    # DFS spanning tree from atom 0; non-tree edges become ring closures.
    parent = [-1] * n
    seen = [False] * n
    tree_children: list[list[int]] = [[] for _ in range(n)]
    ring_bonds: list[tuple[int, int]] = []
    ring_seen = set()
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if not seen[u]:
                seen[u] = True
                parent[u] = v
                tree_children[v].append(u)
                stack.append(u)
            elif u != parent[v]:
                key = (min(v, u), max(v, u))
                if key not in ring_seen:
                    ring_seen.add(key)
                    ring_bonds.append(key)

    # Assign ring-closure digits, reusing digits once both ends are emitted.
    opens: dict[int, list[tuple[int, str]]] = {v: [] for v in range(n)}  # first endpoint
    closes: dict[int, list[tuple[int, str]]] = {v: [] for v in range(n)}  # second endpoint
    emit_rank = [0] * n
    rank = 0
    emit_stack = [0]
    while emit_stack:  # preorder = final emission order
        v = emit_stack.pop()
        emit_rank[v] = rank
        rank += 1
        for u in reversed(tree_children[v]):
            emit_stack.append(u)

    events = []  # (open_rank, close_rank, i, j)
    for i, j in ring_bonds:
        a, b = (i, j) if emit_rank[i] < emit_rank[j] else (j, i)
        events.append((emit_rank[a], emit_rank[b], a, b))
    events.sort()
    free_digits = list("123456789")
    active: list[tuple[int, str]] = []  # (close_rank, digit)
    for open_rank, close_rank, a, b in events:
        active = [x for x in active if x[0] > open_rank]
        used = {d for _, d in active}
        digit = next((d for d in free_digits if d not in used), None)
        if digit is None:
            raise ValueError("more than 9 concurrently open ring closures")
        active.append((close_rank, digit))
        sym = _BOND_SYMBOL[order_of[(a, b)]]
        opens[a].append((close_rank, sym + digit))
        closes[b].append((open_rank, digit))

    out: list[str] = []

    def emit(v: int) -> None:
        out.append(m.atoms[v])
        # Closures first: a freed digit may be reopened at this same atom.
        for _, digit in sorted(closes[v]):
            out.append(digit)
        for _, token in sorted(opens[v]):
            out.append(token)
        kids = tree_children[v]
        for k, u in enumerate(kids):
            sym = _BOND_SYMBOL[order_of[(v, u)]]
            if k < len(kids) - 1:
                out.append("(" + sym)
                emit(u)
                out.append(")")
            else:
                out.append(sym)
                emit(u)

    emit(0)
    return "".join(out)


def node_degree(g: UnlabelledGraph, i: int) -> int:
    """Order-weighted degree: sum of bond orders incident to node i."""
    if not (0 <= i < g.n_nodes):
        raise ValueError(f"node {i} out of range")
    return sum(order for a, b, order in g.edges if a == i or b == i)


def valence_ok(m: MolecularGraph) -> bool:
    """True when every atom's order-weighted degree fits its valence cap."""
    load = [0] * m.n_atoms
    for i, j, order in m.bonds:
        load[i] += order
        load[j] += order
    return all(load[i] <= MAX_VALENCE[a] for i, a in enumerate(m.atoms))


def strip_labels(m: MolecularGraph) -> UnlabelledGraph:
    """Forget element labels, keeping nodes, edges and bond orders."""
    return UnlabelledGraph(m.n_atoms, m.bonds)


def _iter_path_labels(m: MolecularGraph):
    """Canonical labels of all simple bond paths up to 7 bonds, including
    the trivial single-atom paths."""
    n = m.n_atoms
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, j, order in m.bonds:
        adj[i].append((j, order))
        adj[j].append((i, order))
    seen_labels = set()
    for start in range(n):
        label = (m.atoms[start],)
        seen_labels.add(label)
        # Iterative DFS over simple paths from this start.
        stack = [(start, label, frozenset((start,)))]
        while stack:
            v, lab, visited = stack.pop()
            if (len(lab) - 1) // 2 >= _MAX_PATH_BONDS:
                continue
            for u, order in adj[v]:
                if u in visited:
                    continue
                lab2 = lab + (order, m.atoms[u])
                canon = min(lab2, lab2[::-1])
                seen_labels.add(canon)
                stack.append((u, lab2, visited | {u}))
    return seen_labels


def fingerprint(m: MolecularGraph) -> Fingerprint:
    """Hash all labelled simple paths of up to 7 bonds into 2048 bits."""
    bits = 0
    for label in _iter_path_labels(m):
        digest = hashlib.blake2b(repr(label).encode(), digest_size=8).digest()
        bits |= 1 << (int.from_bytes(digest, "little") % FP_BITS)
    return Fingerprint(bits)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Bit-set Tanimoto similarity; defined as 1.0 when both sets are empty."""
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


def read_ligand_db(path) -> tuple[list[tuple[str, MolecularGraph]], int]:
    """Read a JSON-lines ligand db ({"id", "smiles"} per line).

    Molecules that fail parsing or valence checks are skipped with a logged
    warning; returns (records, skipped_count).
    """
    records: list[tuple[str, MolecularGraph]] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                mol_id = str(obj["id"])
                mol = parse_smiles(obj["smiles"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                log.warning("skipping ligand db line %d: %s", lineno, exc)
                skipped += 1
                continue
            if not valence_ok(mol):
                log.warning("skipping ligand db line %d: valence violation", lineno)
                skipped += 1
                continue
            records.append((mol_id, mol))
    return records, skipped
