"""Generative pipeline: percentile-window structure sampling, degree-conditioned
atom labelling, property optimization, and database repurposing.

The sampler never invents topology: every candidate's unlabelled graph is drawn
from a fixed template database, scored against the pocket, and labelled with
elements afterwards. Scores and labels are conditionally independent of each
other given the template, so the two stages factorize cleanly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as prng
from .affinity import ComParams, PocketGraph, ScorerParams, predict_com, score_batch
from .chem import (
    MAX_VALENCE,
    MolecularGraph,
    UnlabelledGraph,
    node_degree,
    strip_labels,
)
from .dock import Pose, generate_pose
from .features import StructuralFeatures, extract

log = logging.getLogger(__name__)

__all__ = [
    "AtomTable",
    "Candidate",
    "PROPERTY_FUNCTIONS",
    "Pipeline",
    "RepurposeHit",
    "RepurposeResult",
    "StructureDb",
    "StructureSampler",
    "build_atom_table",
    "enumerate_unique",
    "generate",
    "load_structure_db",
    "objective_value",
    "optimize_properties",
    "percentile_window",
    "register_property",
    "repurpose_scan",
    "sample_atoms",
    "sample_structure",
]

ELEMENTS = tuple(sorted(MAX_VALENCE))
MAX_TABLE_DEGREE = 6
SCAN_SAMPLE_SIZE = 16384
DUPLICATE_STREAK_LIMIT = 10


def _degree_sequence(g: UnlabelledGraph) -> tuple[int, ...]:
    return tuple(sorted(node_degree(g, i) for i in range(g.n_nodes)))


def _template_key(g: UnlabelledGraph, f: StructuralFeatures):
    return (tuple(int(v) for v in f.as_array()), _degree_sequence(g))


@dataclass(frozen=True)
class StructureDb:
    """Deduplicated library of connected unlabelled templates with their
    structural features precomputed at ingest."""

    entries: tuple[tuple[UnlabelledGraph, StructuralFeatures], ...]
    ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.entries):
            raise ValueError(
                f"{len(self.ids)} ids for {len(self.entries)} entries"
            )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def features(self) -> list[StructuralFeatures]:
        return [f for _, f in self.entries]

    @classmethod
    def from_graphs(cls, graphs, ids=None) -> "StructureDb":
        """Ingest templates, dropping duplicates (by feature + degree-sequence
        key), disconnected graphs, and graphs no element could label."""
        graphs = list(graphs)
        if ids is None:
            ids = [f"t{k:06d}" for k in range(len(graphs))]
        ids = list(ids)
        if len(ids) != len(graphs):
            raise ValueError(f"{len(ids)} ids for {len(graphs)} graphs")
        entries: list[tuple[UnlabelledGraph, StructuralFeatures]] = []
        kept_ids: list[str] = []
        seen = set()
        for ident, g in zip(ids, graphs):
            if any(node_degree(g, i) > MAX_TABLE_DEGREE for i in range(g.n_nodes)):
                log.warning("skipping template %s: node degree above %d", ident, MAX_TABLE_DEGREE)
                continue
            try:
                f = extract(g)
            except ValueError as exc:
                log.warning("skipping template %s: %s", ident, exc)
                continue
            key = _template_key(g, f)
            if key in seen:
                continue
            seen.add(key)
            entries.append((g, f))
            kept_ids.append(ident)
        return cls(tuple(entries), tuple(kept_ids))

    @classmethod
    def from_molecules(cls, records) -> "StructureDb":
        """Ingest (id, molecule) pairs, stripping element labels first."""
        records = list(records)
        return cls.from_graphs(
            [strip_labels(m) for _, m in records], [i for i, _ in records]
        )


def load_structure_db(path) -> StructureDb:
    """Read a JSON Lines SMILES file into a template database."""
    from .chem import read_ligand_db

    records, _ = read_ligand_db(path)
    db = StructureDb.from_molecules(records)
    if len(db) == 0:
        raise ValueError(f"no usable templates in {path}")
    return db


def percentile_window(scores, lo_pct: float = 5, hi_pct: float = 10) -> tuple[float, float]:
    """Nearest-rank percentile band: q_p is the ceil(p/100*n)-th smallest
    score, with the rank clamped to [1, n]."""
    xs = sorted(float(s) for s in scores)
    if not xs:
        raise ValueError("percentile window needs at least one score")
    if not (0 <= lo_pct <= hi_pct <= 100):
        raise ValueError(f"bad percentile range [{lo_pct}, {hi_pct}]")
    n = len(xs)

    def q(p: float) -> float:
        rank = min(max(math.ceil(p / 100 * n), 1), n)
        return xs[rank - 1]

    return q(lo_pct), q(hi_pct)


@dataclass(frozen=True)
class StructureSampler:
    """One pocket's view of the template database: every entry scored once,
    with uniform draws restricted to the percentile-window slice."""

    db: StructureDb
    scores: np.ndarray
    window: tuple[float, float]
    eligible: np.ndarray

    @classmethod
    def for_pocket(
        cls,
        db: StructureDb,
        pocket: PocketGraph,
        scorer: ScorerParams,
        lo_pct: float = 5,
        hi_pct: float = 10,
    ) -> "StructureSampler":
        if len(db) == 0:
            raise ValueError("empty structure db")
        scores = np.asarray(score_batch(scorer, db.features, pocket))
        window = percentile_window(scores, lo_pct, hi_pct)
        eligible = np.flatnonzero((scores >= window[0]) & (scores <= window[1]))
        if eligible.size == 0:
            raise ValueError(
                f"no template scores inside window [{window[0]:g}, {window[1]:g}]"
            )
        return cls(db, scores, window, eligible)

    def draw(self, gen: np.random.Generator) -> tuple[UnlabelledGraph, float]:
        k = int(self.eligible[gen.integers(self.eligible.size)])
        return self.db.entries[k][0], float(self.scores[k])


def sample_structure(
    db: StructureDb,
    pocket: PocketGraph,
    scorer: ScorerParams,
    gen: np.random.Generator,
    lo_pct: float = 5,
    hi_pct: float = 10,
) -> UnlabelledGraph:
    """Draw one template uniformly from the pocket's percentile-window slice."""
    return StructureSampler.for_pocket(db, pocket, scorer, lo_pct, hi_pct).draw(gen)[0]


def _legal_elements(degree: int) -> list[int]:
    return [k for k, e in enumerate(ELEMENTS) if MAX_VALENCE[e] >= degree]


@dataclass(frozen=True)
class AtomTable:
    """Element distribution conditioned on order-weighted node degree.

    Degrees never seen in the corpus fall back to a uniform draw over the
    elements whose valence cap admits them."""

    probs: dict[int, np.ndarray]
    empirical: frozenset[int]
    _warned: set = field(default_factory=set, repr=False, compare=False)

    def __post_init__(self):
        for d in range(MAX_TABLE_DEGREE + 1):
            p = self.probs.get(d)
            if p is None or p.shape != (len(ELEMENTS),):
                raise ValueError(f"missing or misshapen distribution for degree {d}")
            if abs(float(p.sum()) - 1.0) > 1e-12:
                raise ValueError(f"degree-{d} distribution sums to {p.sum()!r}")
            for k, e in enumerate(ELEMENTS):
                if MAX_VALENCE[e] < d and p[k] != 0.0:
                    raise ValueError(f"degree-{d} table assigns mass to {e}")

    def element_for(self, degree: int, gen: np.random.Generator) -> str:
        if degree > MAX_TABLE_DEGREE:
            raise ValueError(f"node degree {degree} exceeds {MAX_TABLE_DEGREE}")
        if degree not in self.empirical and degree not in self._warned:
            self._warned.add(degree)
            log.warning(
                "no corpus atoms of degree %d; sampling uniformly over legal elements",
                degree,
            )
        return ELEMENTS[int(gen.choice(len(ELEMENTS), p=self.probs[degree]))]


def build_atom_table(corpus) -> AtomTable:
    """Estimate per-degree element frequencies from labelled molecules."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    counts = np.zeros((MAX_TABLE_DEGREE + 1, len(ELEMENTS)))
    index = {e: k for k, e in enumerate(ELEMENTS)}
    for m in corpus:
        load = [0] * m.n_atoms
        for i, j, order in m.bonds:
            load[i] += order
            load[j] += order
        for i, a in enumerate(m.atoms):
            if load[i] <= MAX_TABLE_DEGREE:
                counts[load[i], index[a]] += 1
    probs: dict[int, np.ndarray] = {}
    empirical = set()
    for d in range(MAX_TABLE_DEGREE + 1):
        legal = _legal_elements(d)
        p = np.zeros(len(ELEMENTS))
        masked = np.zeros(len(ELEMENTS))
        masked[legal] = counts[d, legal]
        total = masked.sum()
        if total > 0:
            p = masked / total
            empirical.add(d)
        else:
            p[legal] = 1.0 / len(legal)
        # Exact unit mass: the renormalization above can drift in the last ulp.
        p = p / p.sum()
        probs[d] = p
    return AtomTable(probs, frozenset(empirical))


def sample_atoms(u: UnlabelledGraph, t: AtomTable, gen: np.random.Generator) -> MolecularGraph:
    """Label each node independently, conditioned on its order-weighted degree."""
    load = [0] * u.n_nodes
    for i, j, order in u.edges:
        load[i] += order
        load[j] += order
    atoms = tuple(t.element_for(d, gen) for d in load)
    return MolecularGraph(atoms, u.edges)


def enumerate_unique(
    u: UnlabelledGraph, t: AtomTable, k: int, gen: np.random.Generator
) -> list[MolecularGraph]:
    """Collect up to k distinct labelings of one template, stopping early
    after 10 consecutive duplicate draws."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    seen: set[tuple[str, ...]] = set()
    out: list[MolecularGraph] = []
    streak = 0
    while len(out) < k and streak < DUPLICATE_STREAK_LIMIT:
        m = sample_atoms(u, t, gen)
        if m.atoms in seen:
            streak += 1
        else:
            seen.add(m.atoms)
            out.append(m)
            streak = 0
    if len(out) < k:
        log.info(
            "stopped after %d consecutive duplicates with %d unique labelings",
            DUPLICATE_STREAK_LIMIT,
            len(out),
        )
    return out


@dataclass(frozen=True)
class Candidate:
    """A labelled molecule placed in the pocket with its predicted affinity."""

    molecule: MolecularGraph
    pose: Pose
    predicted_score: float
    properties: dict[str, float]

    def __post_init__(self):
        if len(self.pose.coords) != self.molecule.n_atoms:
            raise ValueError(
                f"pose has {len(self.pose.coords)} atoms, molecule has {self.molecule.n_atoms}"
            )


def _prop_size_penalty(c: Candidate) -> float:
    return -abs(c.molecule.n_atoms - 25) / 25


def _prop_ring_bonus(c: Candidate) -> float:
    return min(extract(strip_labels(c.molecule)).n_rings, 4) / 4


def _prop_hetero_fraction(c: Candidate) -> float:
    return sum(1 for a in c.molecule.atoms if a != "C") / c.molecule.n_atoms


def _prop_score(c: Candidate) -> float:
    return c.predicted_score


PROPERTY_FUNCTIONS = {
    "size_penalty": _prop_size_penalty,
    "ring_bonus": _prop_ring_bonus,
    "hetero_fraction": _prop_hetero_fraction,
    "score": _prop_score,
}


def register_property(name: str, fn) -> None:
    """Add a user-supplied property function to the optimization registry."""
    if not name:
        raise ValueError("property name must be nonempty")
    PROPERTY_FUNCTIONS[name] = fn


def objective_value(c: Candidate, objective: dict[str, float]) -> float:
    total = 0.0
    for name, weight in objective.items():
        fn = PROPERTY_FUNCTIONS.get(name)
        if fn is None:
            raise ValueError(f"unknown property {name!r}")
        total += weight * fn(c)
    return total


def optimize_properties(
    candidates: list[Candidate], objective: dict[str, float], n: int = 50
) -> Candidate:
    """Pick the weighted-objective argmax among the first n proposals,
    breaking ties toward the earliest index."""
    if not candidates:
        raise ValueError("no candidates")
    if not objective:
        raise ValueError("empty objective")
    best = None
    best_value = -math.inf
    for c in candidates[:n]:
        v = objective_value(c, objective)
        if v > best_value:
            best, best_value = c, v
    return best


@dataclass(frozen=True)
class Pipeline:
    """Everything generation needs: templates, the atom table, and both
    trained models."""

    db: StructureDb
    atoms: AtomTable
    scorer: ScorerParams
    com: ComParams


_REPORT_PROPERTIES = ("size_penalty", "ring_bonus", "hetero_fraction", "score")


def generate(pipeline: Pipeline, pocket: PocketGraph, n: int, seed: int) -> list[Candidate]:
    """Produce n candidates: window-sampled template, degree-conditioned
    labels, embedded pose translated onto the predicted center of mass.

    Each candidate consumes its own substreams, so candidates are independent
    of evaluation order and of each other."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    sampler = StructureSampler.for_pocket(pipeline.db, pocket, pipeline.scorer)
    center = predict_com(pipeline.com, pocket)
    out: list[Candidate] = []
    for i in range(n):
        u, s = sampler.draw(prng.stream(seed, "structure", i))
        m = sample_atoms(u, pipeline.atoms, prng.stream(seed, "atoms", i))
        raw = generate_pose(m, prng.derive_seed(seed, "pose", i))
        x = raw.as_array()
        pose = Pose.from_array(x - x.mean(axis=0) + center)
        c = Candidate(m, pose, s, {})
        props = {name: PROPERTY_FUNCTIONS[name](c) for name in _REPORT_PROPERTIES}
        out.append(replace(c, properties=props))
    return out


@dataclass(frozen=True)
class RepurposeHit:
    ident: str
    graph: UnlabelledGraph
    score: float


@dataclass(frozen=True)
class RepurposeResult:
    hits: tuple[RepurposeHit, ...]
    window: tuple[float, float]
    note: str | None


def repurpose_scan(
    pocket: PocketGraph,
    db: StructureDb,
    scorer: ScorerParams,
    k: int = 100,
    *,
    seed: int = 0,
    sample_size: int = SCAN_SAMPLE_SIZE,
) -> RepurposeResult:
    """Score a random database sample against one pocket embedding and return
    the k best entries inside the (q5, q10] band, ascending by score."""
    if len(db) == 0:
        raise ValueError("empty structure db")
    if len(db) < k:
        raise ValueError(f"db holds {len(db)} entries, fewer than k={k}")
    take = min(sample_size, len(db))
    gen = prng.stream(seed, "repurpose-sample")
    idx = gen.choice(len(db), size=take, replace=False)
    feats = [db.entries[int(i)][1] for i in idx]
    scores = score_batch(scorer, feats, pocket)
    v_min, v_max = percentile_window(scores)
    in_window = [
        RepurposeHit(db.ids[int(i)], db.entries[int(i)][0], float(s))
        for i, s in zip(idx, scores)
        if v_min < s <= v_max
    ]
    in_window.sort(key=lambda h: (h.score, h.ident))
    note = None
    if len(in_window) < k:
        note = f"window holds {len(in_window)} entries, fewer than requested k={k}"
        log.info("%s", note)
    return RepurposeResult(tuple(in_window[:k]), (v_min, v_max), note)
