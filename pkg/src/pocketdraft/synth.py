"""Synthetic data: random molecules, ligand databases, shell pockets, and
oracle-labeled training sets.

Everything here is seeded through the splittable generator, so a dataset is a
pure function of its config: rerunning with the same seed writes byte-identical
files.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as prng
from .affinity import (
    AA_CODES,
    AffinityRecord,
    PocketGraph,
    Residue,
    build_pocket_graph,
    pocket_from_dict,
    pocket_to_dict,
)
from .chem import MolecularGraph, parse_smiles, strip_labels, to_smiles, valence_ok
from .dock import DEFAULT_WEIGHTS, HYDROPHOBIC_RESIDUES, DockConfig, surrogate_vina
from .features import extract

log = logging.getLogger(__name__)

__all__ = [
    "PlantedSizeData",
    "SynthConfig",
    "SynthResult",
    "load_dataset",
    "make_ligand_db",
    "planted_com_dataset",
    "planted_unimodal_dataset",
    "random_molecule",
    "shell_pocket",
    "synth_dataset",
    "write_ligand_db",
]

MIN_RESIDUE_SPACING = 1.0
CURATED_SMILES = (
    "C1CCC2CCCCC2C1",
    "C1CCC(C1)C2CCCC2",
    "CCO",
    "CC(C)O",
    "C1CCCCC1",
    "C1CCOCC1",
    "CCCCCC",
    "CC(C)CC(C)C",
    "OCC1CCCCC1O",
    "CC(C)(C)CC1CCNCC1",
)

# Heavier elements appear with the rough frequency of drug-like molecules.
_LABEL_POOLS = {
    1: ("C", "C", "C", "C", "N", "O", "O", "F", "Cl", "S"),
    2: ("C", "C", "C", "C", "N", "O", "S"),
    3: ("C", "C", "C", "C", "N"),
    4: ("C",),
}


def random_molecule(gen: np.random.Generator, n_atoms: int | None = None) -> MolecularGraph:
    """Random connected valence-respecting molecule.

    Topology first (degree-capped tree plus up to two ring closures and
    occasional double bonds), then element labels drawn per loaded degree."""
    if n_atoms is None:
        n_atoms = int(gen.integers(4, 25))
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be positive, got {n_atoms}")
    degree = [0] * n_atoms
    bonds: list[tuple[int, int, int]] = []
    for i in range(1, n_atoms):
        open_nodes = [j for j in range(i) if degree[j] < 4]
        j = int(open_nodes[gen.integers(len(open_nodes))])
        bonds.append((j, i, 1))
        degree[j] += 1
        degree[i] += 1
    existing = {(i, j) for i, j, _ in bonds}
    for _ in range(2):
        if gen.random() >= 0.45:
            continue
        pairs = [
            (i, j)
            for i in range(n_atoms)
            for j in range(i + 1, n_atoms)
            if degree[i] < 4 and degree[j] < 4 and (i, j) not in existing
        ]
        if not pairs:
            break
        i, j = pairs[int(gen.integers(len(pairs)))]
        bonds.append((i, j, 1))
        existing.add((i, j))
        degree[i] += 1
        degree[j] += 1
    load = list(degree)
    out_bonds = []
    for i, j, order in bonds:
        if gen.random() < 0.08 and load[i] <= 3 and load[j] <= 3:
            order = 2
            load[i] += 1
            load[j] += 1
        out_bonds.append((i, j, order))
    atoms = []
    for i in range(n_atoms):
        pool = _LABEL_POOLS[max(load[i], 1)]
        atoms.append(str(pool[int(gen.integers(len(pool)))]))
    m = MolecularGraph(tuple(atoms), tuple(out_bonds))
    assert valence_ok(m)
    return m


def make_ligand_db(n: int, seed: int) -> list[tuple[str, MolecularGraph]]:
    """Curated templates plus seeded random molecules, deduplicated by their
    written form."""
    records: list[tuple[str, MolecularGraph]] = []
    seen: set[str] = set()
    for smiles in CURATED_SMILES:
        m = parse_smiles(smiles)
        key = to_smiles(m)
        if key not in seen:
            seen.add(key)
            records.append((f"lig-{len(records):06d}", m))
    gen = prng.stream(seed, "ligand-db")
    attempts = 0
    while len(records) < n and attempts < 50 * n:
        attempts += 1
        m = random_molecule(gen)
        key = to_smiles(m)
        if key in seen:
            continue
        seen.add(key)
        records.append((f"lig-{len(records):06d}", m))
    if len(records) < n:
        raise ValueError(f"could not reach {n} unique molecules (got {len(records)})")
    return records


def write_ligand_db(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for ident, m in records:
            fh.write(json.dumps({"id": ident, "smiles": to_smiles(m)}) + "\n")


def shell_pocket(
    pocket_id: str,
    seed: int,
    n_residues: int,
    radius_range: tuple[float, float] = (4.0, 9.0),
    center_scale: float = 3.0,
) -> PocketGraph:
    """Residues scattered over a seeded ellipsoidal shell around a random
    center, with a minimum spacing so no two residues coincide."""
    if n_residues < 1:
        raise ValueError(f"need at least one residue, got {n_residues}")
    gen = prng.stream(seed, "shell-pocket", pocket_id)
    base = gen.uniform(*radius_range)
    radii = base * gen.uniform(0.9, 1.1, size=3)
    center = gen.normal(size=3) * center_scale
    placed: list[np.ndarray] = []
    residues: list[Residue] = []
    guard = 0
    while len(placed) < n_residues:
        guard += 1
        if guard > 200 * n_residues:
            raise ValueError(f"could not place {n_residues} residues with spacing")
        d = gen.normal(size=3)
        d /= np.linalg.norm(d)
        pos = center + d * radii * (1.0 + 0.1 * gen.normal())
        if any(np.linalg.norm(pos - q) < MIN_RESIDUE_SPACING for q in placed):
            continue
        placed.append(pos)
        aa = AA_CODES[int(gen.integers(len(AA_CODES)))]
        residues.append(Residue(aa, *map(float, pos)))
    return build_pocket_graph(pocket_id, residues)


@dataclass(frozen=True)
class SynthConfig:
    """Recipe for an oracle-labeled dataset: one reference ligand plus
    `extras_per_pocket` random ligands per synthetic pocket."""

    n_pockets: int = 20
    residues_per_pocket: tuple[int, int] = (12, 20)
    ligand_db_path: str | None = None
    extras_per_pocket: int = 50
    seed: int = 0
    oracle: DockConfig = field(default_factory=DockConfig)

    def __post_init__(self):
        lo, hi = self.residues_per_pocket
        if self.n_pockets < 1 or self.extras_per_pocket < 0:
            raise ValueError("counts must be positive")
        if not (1 <= lo <= hi):
            raise ValueError(f"bad residue range ({lo}, {hi})")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "oracle" in d:
            d["oracle"] = DockConfig.from_dict(d["oracle"])
        if "residues_per_pocket" in d:
            d["residues_per_pocket"] = tuple(d["residues_per_pocket"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SynthResult:
    records: tuple[AffinityRecord, ...]
    pockets: dict[str, PocketGraph]
    references: tuple[dict, ...]
    manifest: dict


def _bundled_db_path() -> Path:
    return Path(__file__).parent / "data" / "ligand_db.jsonl"


def _load_db(path) -> list[tuple[str, MolecularGraph]]:
    from .chem import read_ligand_db

    records, skipped = read_ligand_db(path)
    if skipped:
        log.warning("ligand db %s: %d lines skipped", path, skipped)
    return records


def synth_dataset(cfg: SynthConfig, out_dir=None, *, threads: int = 1) -> SynthResult:
    """Label (pocket, ligand) pairs with the docking oracle; optionally write
    records.jsonl, references.jsonl, pockets/, and a manifest.

    Labeling is independent per pair, so `threads` only changes wall time:
    results keep dataset order."""
    db_path = cfg.ligand_db_path or _bundled_db_path()
    db = _load_db(db_path)
    need = cfg.extras_per_pocket + 1
    if len(db) < need:
        raise ValueError(f"db holds {len(db)} ligands, need at least {need}")
    lo, hi = cfg.residues_per_pocket
    smiles_by_key: dict[tuple[str, str], str] = {}
    pockets: dict[str, PocketGraph] = {}
    jobs = []  # (pocket_id, ligand_id, mol, pair_seed, is_reference)
    for i in range(cfg.n_pockets):
        pocket_id = f"pocket-{i:03d}"
        n_res = int(prng.stream(cfg.seed, "n-res", i).integers(lo, hi + 1))
        pocket = shell_pocket(pocket_id, prng.derive_seed(cfg.seed, "pocket", i), n_res)
        pockets[pocket_id] = pocket
        pick = prng.stream(cfg.seed, "ligands", pocket_id)
        chosen = pick.choice(len(db), size=need, replace=False)
        for k, db_index in enumerate(chosen):
            ligand_id, mol = db[int(db_index)]
            pair_seed = prng.derive_seed(cfg.seed, "oracle", pocket_id, ligand_id)
            jobs.append((pocket_id, ligand_id, mol, pair_seed, k == 0))
            smiles_by_key[(pocket_id, ligand_id)] = to_smiles(mol)

    def label_one(job):
        pocket_id, ligand_id, mol, pair_seed, is_ref = job
        return surrogate_vina(
            DEFAULT_WEIGHTS, pockets[pocket_id], mol, pair_seed, cfg.oracle, with_pose=is_ref
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(label_one, jobs))
    else:
        outcomes = [label_one(job) for job in jobs]

    records: list[AffinityRecord] = []
    references: list[dict] = []
    for job, outcome in zip(jobs, outcomes):
        pocket_id, ligand_id, mol, _, is_ref = job
        if is_ref:
            label, pose = outcome
            references.append(
                {
                    "pocket_id": pocket_id,
                    "ligand_id": ligand_id,
                    "smiles": to_smiles(mol),
                    "score": label,
                    "pose": [list(p) for p in pose.coords],
                    "com": [float(c) for c in pose.centroid],
                }
            )
        else:
            label = outcome
        records.append(AffinityRecord(pocket_id, ligand_id, extract_features_cached(mol), float(label)))
    manifest = {
        "format_version": 1,
        "kind": "affinity-dataset",
        "seed": cfg.seed,
        "n_pockets": cfg.n_pockets,
        "residues_per_pocket": list(cfg.residues_per_pocket),
        "extras_per_pocket": cfg.extras_per_pocket,
        "ligand_db": str(db_path),
        "oracle": {
            "rigid_only": cfg.oracle.rigid_only,
            "multistart": cfg.oracle.multistart,
            "max_iters": cfg.oracle.max_iters,
            "cutoff_angstrom": cfg.oracle.cutoff_angstrom,
            "gtol": cfg.oracle.gtol,
            "start_translation_scale": cfg.oracle.start_translation_scale,
        },
        "n_records": len(records),
    }
    result = SynthResult(tuple(records), pockets, tuple(references), manifest)
    if out_dir is not None:
        _write_dataset(result, smiles_by_key, Path(out_dir))
    return result


def _write_dataset(result: SynthResult, smiles_by_key, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "pockets").mkdir(exist_ok=True)
    with (out / "records.jsonl").open("w") as fh:
        for r in result.records:
            row = {
                "pocket_id": r.pocket_id,
                "ligand_id": r.ligand_id,
                "smiles": smiles_by_key[(r.pocket_id, r.ligand_id)],
                "features": [int(v) for v in r.features.as_array()],
                "label": r.label,
            }
            fh.write(json.dumps(row) + "\n")
    with (out / "references.jsonl").open("w") as fh:
        for ref in result.references:
            fh.write(json.dumps(ref) + "\n")
    ref_by_pocket = {ref["pocket_id"]: ref for ref in result.references}
    for pocket_id, pocket in result.pockets.items():
        obj = pocket_to_dict(pocket)
        ref = ref_by_pocket.get(pocket_id)
        if ref is not None:
            # self-contained pocket file: eval can rescore the reference
            obj["reference"] = {"ligand_id": ref["ligand_id"], "smiles": ref["smiles"]}
        with (out / "pockets" / f"{pocket_id}.json").open("w") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")
    with (out / "manifest.json").open("w") as fh:
        json.dump(result.manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(path) -> SynthResult:
    """Read a dataset directory written by synth_dataset."""
    from .features import StructuralFeatures

    root = Path(path)
    records = []
    with (root / "records.jsonl").open() as fh:
        for line in fh:
            row = json.loads(line)
            f = row["features"]
            records.append(
                AffinityRecord(
                    row["pocket_id"],
                    row["ligand_id"],
                    StructuralFeatures(f[0], f[1], f[2], f[3]),
                    float(row["label"]),
                )
            )
    pockets = {}
    for p in sorted((root / "pockets").glob("*.json")):
        with p.open() as fh:
            g = pocket_from_dict(json.load(fh))
        pockets[g.pocket_id] = g
    references = []
    ref_path = root / "references.jsonl"
    if ref_path.exists():
        with ref_path.open() as fh:
            references = [json.loads(line) for line in fh]
    with (root / "manifest.json").open() as fh:
        manifest = json.load(fh)
    return SynthResult(tuple(records), pockets, tuple(references), manifest)


_FEATURE_CACHE: dict[tuple, object] = {}


def extract_features_cached(m: MolecularGraph):
    """Features keyed by topology; labeling only reuses, never mutates."""
    from .chem import strip_labels

    u = strip_labels(m)
    key = (u.n_nodes, u.edges)
    hit = _FEATURE_CACHE.get(key)
    if hit is None:
        hit = extract(u)
        _FEATURE_CACHE[key] = hit
    return hit


def synthetic_structure_db(n: int, seed: int, size_range: tuple[int, int] = (6, 24)):
    """Exactly n unique random unlabelled templates, for scan-scale probes
    beyond what the bundled ligand db holds."""
    from .design import StructureDb, _template_key

    if n < 1:
        raise ValueError(f"need a positive template count, got {n}")
    gen = prng.stream(seed, "structure-db")
    lo, hi = size_range
    entries, ids = [], []
    seen = set()
    attempts = 0
    while len(entries) < n:
        attempts += 1
        if attempts > 200 * n:
            raise ValueError(f"could not reach {n} unique templates (got {len(entries)})")
        g = strip_labels(random_molecule(gen, n_atoms=int(gen.integers(lo, hi + 1))))
        f = extract(g)
        key = _template_key(g, f)
        if key in seen:
            continue
        seen.add(key)
        entries.append((g, f))
        ids.append(f"synth-{len(ids):06d}")
    return StructureDb(tuple(entries), tuple(ids))


@dataclass(frozen=True)
class PlantedSizeData:
    """Synthetic affinity data whose labels depend on ligand size through a
    pocket-determined optimum."""

    records: tuple[AffinityRecord, ...]
    pockets: dict[str, PocketGraph]
    optima: dict[str, int]


def planted_unimodal_dataset(
    seed: int,
    n_pockets: int = 30,
    per_pocket: int = 40,
    size_range: tuple[int, int] = (4, 24),
    curvature: float = 0.05,
    noise: float = 0.1,
    optimum_shift: int = 0,
) -> PlantedSizeData:
    """Labels follow curvature*(n_nodes - s*)^2 + noise where the optimum s*
    is twice the pocket's shell radius, so the pocket geometry determines the
    best ligand size. A positive optimum_shift pushes s* past the size grid,
    which makes the law monotone over the grid."""
    records: list[AffinityRecord] = []
    pockets: dict[str, PocketGraph] = {}
    optima: dict[str, int] = {}
    lo, hi = size_range
    for i in range(n_pockets):
        pocket_id = f"planted-{i:03d}"
        gen = prng.stream(seed, "planted", i)
        radius = float(gen.uniform(4.0, 10.0))
        pocket = shell_pocket(
            pocket_id,
            prng.derive_seed(seed, "planted-pocket", i),
            int(gen.integers(12, 19)),
            radius_range=(radius, radius),
        )
        s_star = int(round(2.0 * radius)) + optimum_shift
        pockets[pocket_id] = pocket
        optima[pocket_id] = s_star
        for k in range(per_pocket):
            n_atoms = int(gen.integers(lo, hi + 1))
            mol = random_molecule(gen, n_atoms)
            label = curvature * (n_atoms - s_star) ** 2 + float(gen.normal()) * noise
            records.append(
                AffinityRecord(pocket_id, f"lig-{i:03d}-{k:03d}", extract_features_cached(mol), label)
            )
    return PlantedSizeData(tuple(records), pockets, optima)


def planted_com_dataset(seed: int, n_pockets: int = 24) -> list[tuple[PocketGraph, np.ndarray]]:
    """Center-of-mass targets 2 A from the centroid toward the centroid of
    the hydrophobic residues. The direction is readable from the residue
    types alone, so the targets move equivariantly with the pocket and an
    equivariant predictor can learn them."""
    pairs = []
    for i in range(n_pockets):
        pocket_id = f"complanted-{i:03d}"
        gen = prng.stream(seed, "com", i)
        n_res = int(gen.integers(10, 16))
        for attempt in range(64):
            pocket = shell_pocket(
                pocket_id, prng.derive_seed(seed, "com-pocket", i, attempt), n_res
            )
            hydro = pocket.coords[[r.aa in HYDROPHOBIC_RESIDUES for r in pocket.residues]]
            if len(hydro) < 2:
                continue
            axis = hydro.mean(axis=0) - pocket.centroid
            norm = float(np.linalg.norm(axis))
            # a short axis makes the planted direction ill-conditioned
            if norm >= 0.5:
                break
        else:
            raise ValueError(f"no usable hydrophobic axis for pocket {i}")
        com = pocket.centroid + axis / norm * 2.0
        pairs.append((pocket, com))
    return pairs
