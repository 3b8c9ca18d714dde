"""Candidate-set evaluation: affinity, diversity, and novelty metrics
rolled up into per-pocket and aggregate reports."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as prng
from .affinity import PocketGraph
from .chem import MolecularGraph, fingerprint, tanimoto
from .dock import DEFAULT_WEIGHTS, DockConfig, surrogate_vina

__all__ = [
    "PROTOCOL_NOTE",
    "EvalReport",
    "PocketReport",
    "build_report",
    "eval_pocket",
    "eval_pocket_detailed",
    "metric_diversity",
    "metric_high_affinity",
    "metric_novelty",
    "r_squared",
    "report_to_dict",
]

log = logging.getLogger(__name__)

# Recorded in every report: the numbers come from synthetic held-out pockets
# scored by the bundled surrogate oracle, not from experimental complexes.
PROTOCOL_NOTE = (
    "synthetic held-out pockets scored by the bundled surrogate oracle; "
    "no experimentally determined complexes are involved"
)


def metric_high_affinity(scores, reference: float) -> float:
    """Fraction of scores at least as good (<=) as the reference score."""
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("high-affinity fraction needs at least one score")
    return float(np.mean(arr <= reference))


def metric_diversity(mols: list[MolecularGraph]) -> float:
    """Mean over unordered pairs of one minus the fingerprint Tanimoto."""
    if len(mols) < 2:
        raise ValueError("diversity needs at least two molecules")
    fps = [fingerprint(m) for m in mols]
    total = 0.0
    pairs = 0
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            total += 1.0 - tanimoto(fps[i], fps[j])
            pairs += 1
    return total / pairs


def metric_novelty(mols: list[MolecularGraph], train_mols: list[MolecularGraph]) -> float:
    """Mean over molecules of one minus the Tanimoto to the nearest
    training-set molecule."""
    if not mols:
        raise ValueError("novelty needs at least one molecule")
    if not train_mols:
        raise ValueError("novelty needs a nonempty training set")
    train_fps = [fingerprint(m) for m in train_mols]
    vals = []
    for m in mols:
        fp = fingerprint(m)
        vals.append(1.0 - max(tanimoto(fp, t) for t in train_fps))
    return float(np.mean(vals))


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination of predictions against targets."""
    y = np.asarray(list(y_true), dtype=np.float64)
    p = np.asarray(list(y_pred), dtype=np.float64)
    if y.shape != p.shape or y.size < 2:
        raise ValueError("need two same-length sequences of at least 2 values")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("targets are constant; R^2 undefined")
    ss_res = float(np.sum((y - p) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class PocketReport:
    """Metrics for one pocket's candidate set (or the aggregate row)."""

    pocket_id: str
    n_candidates: int
    mean_score: float
    high_affinity: float
    diversity: float
    novelty: float
    wall_clock_s: float

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("a report covers at least one candidate")
        for name in ("high_affinity", "diversity", "novelty"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class EvalReport:
    note: str
    pockets: tuple[PocketReport, ...]
    aggregate: PocketReport


def eval_pocket(
    pocket: PocketGraph,
    mols: list[MolecularGraph],
    reference: MolecularGraph | float,
    train_mols: list[MolecularGraph],
    *,
    config: DockConfig | None = None,
    seed: int = 0,
    threads: int = 1,
) -> PocketReport:
    """Score candidates with the surrogate oracle and compute all metrics.

    `reference` is either the reference ligand (scored under the same seed
    discipline) or an already-known reference score.
    """
    report, _ = eval_pocket_detailed(
        pocket, mols, reference, train_mols, config=config, seed=seed, threads=threads
    )
    return report


def eval_pocket_detailed(
    pocket: PocketGraph,
    mols: list[MolecularGraph],
    reference: MolecularGraph | float,
    train_mols: list[MolecularGraph],
    *,
    config: DockConfig | None = None,
    seed: int = 0,
    threads: int = 1,
) -> tuple[PocketReport, list[float]]:
    """eval_pocket plus the per-candidate oracle scores it computed."""
    if not mols:
        raise ValueError("no candidates to evaluate")
    t0 = time.perf_counter()
    cfg = config or DockConfig()

    def score_one(item):
        i, m = item
        s = prng.derive_seed(seed, "eval-oracle", pocket.pocket_id, i)
        return surrogate_vina(DEFAULT_WEIGHTS, pocket, m, seed=s, config=cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score_one, enumerate(mols)))
    else:
        scores = [score_one(item) for item in enumerate(mols)]

    if isinstance(reference, (int, float)):
        ref_score = float(reference)
    else:
        ref_seed = prng.derive_seed(seed, "eval-reference", pocket.pocket_id)
        ref_score = surrogate_vina(DEFAULT_WEIGHTS, pocket, reference, seed=ref_seed, config=cfg)

    if len(mols) >= 2:
        diversity = metric_diversity(mols)
    else:
        log.warning("single candidate for %s; diversity reported as 0", pocket.pocket_id)
        diversity = 0.0

    report = PocketReport(
        pocket_id=pocket.pocket_id,
        n_candidates=len(mols),
        mean_score=float(np.mean(scores)),
        high_affinity=metric_high_affinity(scores, ref_score),
        diversity=diversity,
        novelty=metric_novelty(mols, train_mols),
        wall_clock_s=time.perf_counter() - t0,
    )
    return report, [float(s) for s in scores]


def build_report(pockets: list[PocketReport]) -> EvalReport:
    """Roll per-pocket rows into a report with an unweighted aggregate."""
    if not pockets:
        raise ValueError("report needs at least one pocket")
    agg = PocketReport(
        pocket_id="aggregate",
        n_candidates=sum(p.n_candidates for p in pockets),
        mean_score=float(np.mean([p.mean_score for p in pockets])),
        high_affinity=float(np.mean([p.high_affinity for p in pockets])),
        diversity=float(np.mean([p.diversity for p in pockets])),
        novelty=float(np.mean([p.novelty for p in pockets])),
        wall_clock_s=sum(p.wall_clock_s for p in pockets),
    )
    return EvalReport(note=PROTOCOL_NOTE, pockets=tuple(pockets), aggregate=agg)


def _row_dict(row: PocketReport, with_timing: bool) -> dict:
    obj = {
        "pocket_id": row.pocket_id,
        "n_candidates": row.n_candidates,
        "mean_score": row.mean_score,
        "high_affinity": row.high_affinity,
        "diversity": row.diversity,
        "novelty": row.novelty,
    }
    if with_timing:
        obj["wall_clock_s"] = row.wall_clock_s
    return obj


def report_to_dict(report: EvalReport, *, with_timing: bool = True) -> dict:
    """JSON-ready form; timing can be left out so reports compare byte-equal
    across runs of the same seed."""
    return {
        "note": report.note,
        "pockets": [_row_dict(p, with_timing) for p in report.pockets],
        "aggregate": _row_dict(report.aggregate, with_timing),
    }
