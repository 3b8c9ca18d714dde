"""Pocket graphs and the pocket-conditioned affinity scorer.

The scorer never sees atom identities: a molecule enters only through its
four structural features. The pocket enters through residue identities
and centroid coordinates, encoded by a stack of equivariant layers and
mean-pooled, so the predicted score is invariant to rigid motions of the
pocket and to residue order.

A second network with the same backbone predicts a ligand center of mass
from the pocket alone; generation uses it to place initial poses.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import nets
from . import rng as prng
from .errors import NumericError
from .features import FeatureStats, StructuralFeatures, fit_stats, standardize

log = logging.getLogger(__name__)

__all__ = [
    "AA_CODES",
    "Residue",
    "PocketGraph",
    "ScorerParams",
    "ComParams",
    "TrainConfig",
    "AffinityRecord",
    "TrainResult",
    "build_pocket_graph",
    "load_pocket",
    "pocket_from_dict",
    "pocket_to_dict",
    "init_scorer",
    "init_com",
    "encode_pocket",
    "score",
    "score_batch",
    "predict_com",
    "train_scorer",
    "train_com",
    "size_response",
]

AA_CODES = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
_AA_INDEX = {aa: k for k, aa in enumerate(AA_CODES)}

CUTOFF_ANGSTROM = 15.0
MAX_NEIGHBOURS = 24

HIDDEN = 16
SCORER_LAYERS = 3
COM_LAYERS = 4
HEAD_HIDDEN = 50
HEAD_DEPTH = 5


@dataclass(frozen=True)
class Residue:
    """One residue, reduced to its type and centroid."""

    aa: str
    x: float
    y: float
    z: float

    def __post_init__(self):
        if self.aa not in _AA_INDEX:
            raise ValueError(f"unknown residue code {self.aa!r}")
        for c in (self.x, self.y, self.z):
            if not np.isfinite(c):
                raise ValueError(f"non-finite residue coordinate in {self.aa}")


@dataclass(frozen=True)
class PocketGraph:
    """Residue graph: nodes within 15 A are adjacent, capped at the 24
    nearest per receiving node (ties broken by index). The cap makes
    adjacency directed only when some node exceeds 24 in-range candidates."""

    pocket_id: str
    residues: tuple[Residue, ...]
    neighbours: tuple[tuple[int, ...], ...]  # in-neighbours per node

    @property
    def n_residues(self) -> int:
        return len(self.residues)

    @property
    def coords(self) -> np.ndarray:
        arr = getattr(self, "_coords", None)
        if arr is None:
            arr = np.array([[r.x, r.y, r.z] for r in self.residues], dtype=np.float64)
            object.__setattr__(self, "_coords", arr)
        return arr

    @property
    def onehot(self) -> np.ndarray:
        arr = getattr(self, "_onehot", None)
        if arr is None:
            arr = np.zeros((len(self.residues), len(AA_CODES)))
            for k, r in enumerate(self.residues):
                arr[k, _AA_INDEX[r.aa]] = 1.0
            object.__setattr__(self, "_onehot", arr)
        return arr

    @property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pair = getattr(self, "_edges", None)
        if pair is None:
            src, dst = [], []
            for v, ins in enumerate(self.neighbours):
                src.extend(ins)
                dst.extend([v] * len(ins))
            pair = (np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64))
            object.__setattr__(self, "_edges", pair)
        return pair

    @property
    def centroid(self) -> np.ndarray:
        return self.coords.mean(axis=0)


def build_pocket_graph(pocket_id: str, residues) -> PocketGraph:
    residues = tuple(residues)
    if not residues:
        raise ValueError("pocket has no residues")
    coords = np.array([[r.x, r.y, r.z] for r in residues])
    n = len(residues)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    neighbours = []
    for v in range(n):
        cand = [(dist[v, u], u) for u in range(n) if u != v and dist[v, u] <= CUTOFF_ANGSTROM]
        cand.sort()
        neighbours.append(tuple(u for _, u in cand[:MAX_NEIGHBOURS]))
    return PocketGraph(pocket_id, residues, tuple(neighbours))


def pocket_from_dict(obj: dict) -> PocketGraph:
    try:
        pocket_id = str(obj["id"])
        residues = [
            Residue(str(r["aa"]), float(r["x"]), float(r["y"]), float(r["z"]))
            for r in obj["residues"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed pocket object: {exc}") from exc
    return build_pocket_graph(pocket_id, residues)


def pocket_to_dict(g: PocketGraph) -> dict:
    return {
        "id": g.pocket_id,
        "residues": [{"aa": r.aa, "x": r.x, "y": r.y, "z": r.z} for r in g.residues],
    }


def load_pocket(path) -> PocketGraph:
    with open(path, encoding="utf-8") as fh:
        return pocket_from_dict(json.load(fh))


@dataclass
class ScorerParams:
    layers: list[nets.EgnnLayerParams]
    head: nets.DenseParams
    stats: FeatureStats


@dataclass
class ComParams:
    layers: list[nets.EgnnLayerParams]


def init_scorer(seed: int, stats: FeatureStats | None = None) -> ScorerParams:
    gen = prng.stream(seed, "scorer-init")
    dims = [len(AA_CODES)] + [HIDDEN] * (SCORER_LAYERS - 1)
    layers = [nets.make_egnn_layer(d, HIDDEN, gen) for d in dims]
    head_dims = [HIDDEN + 4] + [HEAD_HIDDEN] * (HEAD_DEPTH - 1) + [1]
    head = nets.init_dense(head_dims, ["relu"] * (HEAD_DEPTH - 1) + ["identity"], gen)
    if stats is None:
        stats = FeatureStats(np.zeros(4), np.ones(4))
    return ScorerParams(layers, head, stats)


def init_com(seed: int) -> ComParams:
    gen = prng.stream(seed, "com-init")
    dims = [len(AA_CODES)] + [HIDDEN] * (COM_LAYERS - 1)
    return ComParams([nets.make_egnn_layer(d, HIDDEN, gen) for d in dims])


def scorer_arrays(p: ScorerParams) -> list:
    arrays = []
    for layer in p.layers:
        arrays.extend(nets.egnn_arrays(layer))
    arrays.extend(nets.dense_arrays(p.head))
    return arrays


def com_arrays(p: ComParams) -> list:
    arrays = []
    for layer in p.layers:
        arrays.extend(nets.egnn_arrays(layer))
    return arrays


def _lift_scorer(p: ScorerParams, arrays: list) -> ScorerParams:
    it = iter(arrays)
    layers = []
    for layer in p.layers:
        chunk = [next(it) for _ in range(len(nets.egnn_arrays(layer)))]
        layers.append(nets.replace_arrays(layer, chunk))
    head = nets.replace_arrays(p.head, list(it))
    return ScorerParams(layers, head, p.stats)


def _lift_com(p: ComParams, arrays: list) -> ComParams:
    it = iter(arrays)
    layers = []
    for layer in p.layers:
        chunk = [next(it) for _ in range(len(nets.egnn_arrays(layer)))]
        layers.append(nets.replace_arrays(layer, chunk))
    return ComParams(layers)


def _run_layers(layers, h, x, src, dst, n):
    for layer in layers:
        h, x = nets.egnn_layer(layer, h, x, src, dst, n)
    return h, x


def encode_pocket(p: ScorerParams, g: PocketGraph):
    """Pooled pocket embedding, shape (HIDDEN,)."""
    src, dst = g.edge_arrays
    h, _ = _run_layers(p.layers, g.onehot, g.coords, src, dst, g.n_residues)
    return ad.mean_rows(h)


def _head_input(p: ScorerParams, emb, f: StructuralFeatures):
    z = standardize(f, p.stats)
    return np.concatenate([emb, z])


def _check_score(value: float) -> float:
    if not np.isfinite(value):
        raise NumericError("scorer produced a non-finite value")
    return float(value)


def score(p: ScorerParams, f: StructuralFeatures, g: PocketGraph) -> float:
    emb = encode_pocket(p, g)
    out = nets.mlp_forward(p.head, _head_input(p, emb, f))
    return _check_score(out[0])


def score_batch(p: ScorerParams, feats: list[StructuralFeatures], g: PocketGraph) -> list[float]:
    """Scores for many molecules against one pocket; the pocket is encoded
    once, and each score is bit-identical to a lone score() call."""
    emb = encode_pocket(p, g)
    # Row-by-row on purpose: batched matmul may round differently.
    return [_check_score(nets.mlp_forward(p.head, _head_input(p, emb, f))[0]) for f in feats]


def predict_com(p: ComParams, g: PocketGraph) -> np.ndarray:
    """Predicted ligand center of mass: mean of the equivariantly updated
    residue coordinates."""
    src, dst = g.edge_arrays
    _, x = _run_layers(p.layers, g.onehot, g.coords, src, dst, g.n_residues)
    out = ad.mean_rows(x)
    out = ad.value_of(out)
    if not np.isfinite(out).all():
        raise NumericError("com model produced non-finite coordinates")
    return out


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 128
    max_steps: int = 10000
    split_fraction: float = 0.1
    eval_every: int = 50
    patience: int = 20  # evaluations without improvement before stopping

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class AffinityRecord:
    pocket_id: str
    ligand_id: str
    features: StructuralFeatures
    label: float


@dataclass
class TrainResult:
    params: object
    log: list[tuple[int, float, float]] = field(default_factory=list)
    train_pockets: tuple[str, ...] = ()
    val_pockets: tuple[str, ...] = ()
    best_val: float = float("nan")


def _split_pockets(pocket_ids, config: TrainConfig):
    ids = sorted(pocket_ids)
    gen = prng.stream(config.seed, "pocket-split")
    gen.shuffle(ids)
    n_val = int(round(config.split_fraction * len(ids)))
    if len(ids) >= 2:
        n_val = max(1, n_val)
    n_val = min(n_val, len(ids) - 1)
    return ids[n_val:], ids[:n_val]


class _UnionGraph:
    """All training pockets stacked into one disjoint graph so every step
    runs a single message-passing pass."""

    def __init__(self, pockets: list[PocketGraph]):
        self.row_of = {g.pocket_id: k for k, g in enumerate(pockets)}
        onehots, coords, srcs, dsts, seg = [], [], [], [], []
        offset = 0
        for k, g in enumerate(pockets):
            src, dst = g.edge_arrays
            onehots.append(g.onehot)
            coords.append(g.coords)
            srcs.append(src + offset)
            dsts.append(dst + offset)
            seg.append(np.full(g.n_residues, k, dtype=np.int64))
            offset += g.n_residues
        self.onehot = np.concatenate(onehots)
        self.coords = np.concatenate(coords)
        self.src = np.concatenate(srcs)
        self.dst = np.concatenate(dsts)
        self.seg = np.concatenate(seg)
        self.n_nodes = offset
        self.n_pockets = len(pockets)
        counts = np.bincount(self.seg, minlength=self.n_pockets).astype(np.float64)
        self.inv_counts = (1.0 / counts).reshape(-1, 1)

    def pooled_embeddings(self, layers):
        h, _ = _run_layers(layers, self.onehot, self.coords, self.src, self.dst, self.n_nodes)
        return ad.mul(ad.segment_sum(h, self.seg, self.n_pockets), self.inv_counts)

    def final_coords(self, layers):
        _, x = _run_layers(layers, self.onehot, self.coords, self.src, self.dst, self.n_nodes)
        return ad.mul(ad.segment_sum(x, self.seg, self.n_pockets), self.inv_counts)


def _check_labels(labels: np.ndarray) -> None:
    if not np.isfinite(labels).all():
        raise ValueError("labels must be finite")
    if labels.size and labels.std() == 0.0:
        log.warning("degenerate training labels: all %d labels equal %g", labels.size, labels[0])


def train_scorer(
    records: list[AffinityRecord],
    pockets: dict[str, PocketGraph],
    config: TrainConfig | None = None,
) -> TrainResult:
    """Fit the scorer on (pocket, features, label) records with a
    pocket-level train/validation split and early stopping on the best
    validation loss."""
    config = config or TrainConfig()
    if not records:
        raise ValueError("no training records")
    missing = {r.pocket_id for r in records} - set(pockets)
    if missing:
        raise ValueError(f"records reference unknown pockets: {sorted(missing)[:5]}")
    _check_labels(np.array([r.label for r in records]))

    train_ids, val_ids = _split_pockets({r.pocket_id for r in records}, config)
    train_records = [r for r in records if r.pocket_id in set(train_ids)]
    val_records = [r for r in records if r.pocket_id in set(val_ids)]
    if not train_records:
        raise ValueError("train split is empty")

    stats = fit_stats([r.features for r in train_records])
    params = init_scorer(config.seed, stats)
    arrays = scorer_arrays(params)
    state = nets.AdamState.for_params(arrays)

    union = _UnionGraph([pockets[pid] for pid in train_ids])
    z_train = np.stack([standardize(r.features, stats) for r in train_records])
    y_train = np.array([r.label for r in train_records]).reshape(-1, 1)
    row_train = np.array([union.row_of[r.pocket_id] for r in train_records], dtype=np.int64)

    def val_loss() -> float:
        if not val_records:
            return float("nan")
        errs = []
        for pid in val_ids:
            recs = [r for r in val_records if r.pocket_id == pid]
            if not recs:
                continue
            preds = score_batch(params, [r.features for r in recs], pockets[pid])
            errs.extend((p - r.label) ** 2 for p, r in zip(preds, recs))
        return float(np.mean(errs)) if errs else float("nan")

    batch_gen = prng.stream(config.seed, "batches")
    best = (float("inf"), [a.copy() for a in arrays])
    bad_evals = 0
    result = TrainResult(
        params, [], tuple(train_ids), tuple(val_ids), float("nan")
    )

    for step in range(1, config.max_steps + 1):
        idx = batch_gen.integers(0, len(train_records), size=min(config.batch_size, len(train_records)))
        leaves = [ad.Tensor(a) for a in arrays]
        lifted = _lift_scorer(params, leaves)
        pooled = union.pooled_embeddings(lifted.layers)
        rows = ad.take_rows(pooled, row_train[idx])
        inp = ad.concat_cols([rows, z_train[idx]])
        pred = nets.mlp_forward(lifted.head, inp)
        err = ad.sub(pred, y_train[idx])
        loss = ad.mean_all(ad.mul(err, err))
        ad.backward(loss)
        train_loss = float(loss.value)
        if not np.isfinite(train_loss):
            raise NumericError(f"training loss became non-finite at step {step}")
        nets.adam_step(arrays, [leaf.grad for leaf in leaves], state, lr=config.lr)

        if step % config.eval_every == 0 or step == config.max_steps:
            v = val_loss()
            result.log.append((step, train_loss, v))
            if val_records:
                if v < best[0]:
                    best = (v, [a.copy() for a in arrays])
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= config.patience:
                        log.info("early stop at step %d (best val %.6f)", step, best[0])
                        break

    if val_records and np.isfinite(best[0]):
        for a, b in zip(arrays, best[1]):
            a[...] = b
        result.best_val = best[0]
    return result


def train_com(
    pairs: list[tuple[PocketGraph, np.ndarray]],
    config: TrainConfig | None = None,
) -> TrainResult:
    """Fit the center-of-mass model by minimizing the mean Euclidean
    distance between predicted and true centers, with a pocket-level split."""
    config = config or TrainConfig(batch_size=64)
    if not pairs:
        raise ValueError("no training pairs")
    targets_by_id = {}
    pockets = {}
    for g, com in pairs:
        com = np.asarray(com, dtype=np.float64)
        if com.shape != (3,) or not np.isfinite(com).all():
            raise ValueError(f"bad com target for pocket {g.pocket_id}")
        if g.pocket_id in pockets:
            raise ValueError(f"duplicate pocket id {g.pocket_id}")
        pockets[g.pocket_id] = g
        targets_by_id[g.pocket_id] = com

    train_ids, val_ids = _split_pockets(pockets.keys(), config)
    params = init_com(config.seed)
    arrays = com_arrays(params)
    state = nets.AdamState.for_params(arrays)

    union = _UnionGraph([pockets[pid] for pid in train_ids])
    y_train = np.stack([targets_by_id[pid] for pid in train_ids])
    rows_all = np.array([union.row_of[pid] for pid in train_ids], dtype=np.int64)

    def val_loss() -> float:
        if not val_ids:
            return float("nan")
        dists = [
            float(np.linalg.norm(predict_com(params, pockets[pid]) - targets_by_id[pid]))
            for pid in val_ids
        ]
        return float(np.mean(dists))

    batch_gen = prng.stream(config.seed, "com-batches")
    best = (float("inf"), [a.copy() for a in arrays])
    bad_evals = 0
    result = TrainResult(params, [], tuple(train_ids), tuple(val_ids), float("nan"))

    for step in range(1, config.max_steps + 1):
        k = batch_gen.integers(0, len(train_ids), size=min(config.batch_size, len(train_ids)))
        leaves = [ad.Tensor(a) for a in arrays]
        lifted = _lift_com(params, leaves)
        coms = union.final_coords(lifted.layers)
        rows = ad.take_rows(coms, rows_all[k])
        d = ad.sub(rows, y_train[k])
        dist = ad.sqrt(ad.sum_cols(ad.mul(d, d)))
        loss = ad.mean_all(dist)
        ad.backward(loss)
        train_loss = float(loss.value)
        if not np.isfinite(train_loss):
            raise NumericError(f"training loss became non-finite at step {step}")
        nets.adam_step(arrays, [leaf.grad for leaf in leaves], state, lr=config.lr)

        if step % config.eval_every == 0 or step == config.max_steps:
            v = val_loss()
            result.log.append((step, train_loss, v))
            if val_ids:
                if v < best[0]:
                    best = (v, [a.copy() for a in arrays])
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= config.patience:
                        log.info("early stop at step %d (best val %.4f A)", step, best[0])
                        break

    if val_ids and np.isfinite(best[0]):
        for a, b in zip(arrays, best[1]):
            a[...] = b
        result.best_val = best[0]
    return result


def size_response(
    p: ScorerParams,
    g: PocketGraph,
    library: list[StructuralFeatures],
    size_grid: list[int] | None = None,
) -> list[tuple[int, float]]:
    """Mean predicted score per molecule size over a template library.
    Sizes in the grid with no templates are skipped with a log note."""
    by_size: dict[int, list[StructuralFeatures]] = {}
    for f in library:
        by_size.setdefault(f.n_nodes, []).append(f)
    if size_grid is None:
        size_grid = sorted(by_size)
    emb = encode_pocket(p, g)
    out = []
    for size in size_grid:
        feats = by_size.get(size)
        if not feats:
            log.info("size_response: no templates of size %d, skipping", size)
            continue
        vals = [nets.mlp_forward(p.head, _head_input(p, emb, f))[0] for f in feats]
        out.append((size, _check_score(np.mean(vals))))
    return out
