"""Metric oracles and report shape for the evaluation module."""

from __future__ import annotations

import json

import numpy as np
import pytest

from pocketdraft import bench, synth
from pocketdraft.chem import fingerprint, parse_smiles, tanimoto
from pocketdraft.dock import DockConfig


def test_high_affinity_examples():
    assert bench.metric_high_affinity([-8.0, -7.0, -6.0], -7.0) == pytest.approx(2 / 3)
    assert bench.metric_high_affinity([-3.0, -2.0], -1.0) == 1.0
    assert bench.metric_high_affinity([-3.0, -2.0], -9.0) == 0.0


def test_high_affinity_empty_raises():
    with pytest.raises(ValueError, match="at least one"):
        bench.metric_high_affinity([], -1.0)


def test_diversity_identical_set_is_zero():
    mols = [parse_smiles("CCO") for _ in range(4)]
    assert bench.metric_diversity(mols) == 0.0


def test_diversity_needs_two():
    with pytest.raises(ValueError, match="two"):
        bench.metric_diversity([parse_smiles("C")])


def test_diversity_matches_pair_loop_oracle():
    db = synth.make_ligand_db(30, seed=31)
    mols = [m for _, m in db[10:20]]
    got = bench.metric_diversity(mols)
    assert 0.0 < got < 1.0
    # independent accumulation over the reversed pair order
    fps = [fingerprint(m) for m in mols]
    acc = []
    for j in range(len(fps) - 1, -1, -1):
        for i in range(j - 1, -1, -1):
            acc.append(1.0 - tanimoto(fps[j], fps[i]))
    assert got == pytest.approx(sum(acc) / len(acc), abs=1e-12)


def test_novelty_member_of_train_scores_zero():
    train = [parse_smiles(s) for s in ["CCO", "CCC", "C1CCCCC1"]]
    assert bench.metric_novelty([parse_smiles("CCO")], train) == 0.0


def test_novelty_matches_pair_loop_oracle():
    db = synth.make_ligand_db(40, seed=32)
    mols = [m for _, m in db[30:40]]
    train = [m for _, m in db[:30]]
    got = bench.metric_novelty(mols, train)
    assert 0.0 < got < 1.0
    train_fps = [fingerprint(m) for m in train]
    expect = np.mean(
        [1.0 - max(tanimoto(fingerprint(m), t) for t in train_fps) for m in mols]
    )
    assert got == pytest.approx(expect, abs=1e-12)


def test_novelty_preconditions():
    train = [parse_smiles("CC")]
    with pytest.raises(ValueError, match="at least one"):
        bench.metric_novelty([], train)
    with pytest.raises(ValueError, match="nonempty training"):
        bench.metric_novelty([parse_smiles("CC")], [])


def test_r_squared_reference_points():
    y = [1.0, 2.0, 3.0, 4.0]
    assert bench.r_squared(y, y) == 1.0
    assert bench.r_squared(y, [2.5] * 4) == pytest.approx(0.0)
    assert bench.r_squared(y, [4.0, 3.0, 2.0, 1.0]) < 0.0
    with pytest.raises(ValueError, match="constant"):
        bench.r_squared([1.0, 1.0], [0.0, 2.0])
    with pytest.raises(ValueError, match="same-length"):
        bench.r_squared([1.0, 2.0], [1.0])


FAST = DockConfig(multistart=4, max_iters=80)


def eval_fixture():
    pocket = synth.shell_pocket("bench-pocket", seed=33, n_residues=14)
    db = synth.make_ligand_db(30, seed=34)
    mols = [m for _, m in db[10:14]]
    reference = db[14][1]
    train = [m for _, m in db[:10]]
    return pocket, mols, reference, train


def test_eval_pocket_fields_and_determinism():
    pocket, mols, reference, train = eval_fixture()
    a = bench.eval_pocket(pocket, mols, reference, train, config=FAST, seed=5)
    b = bench.eval_pocket(pocket, mols, reference, train, config=FAST, seed=5)
    assert a.pocket_id == "bench-pocket"
    assert a.n_candidates == 4
    assert np.isfinite(a.mean_score)
    assert 0.0 <= a.high_affinity <= 1.0
    assert 0.0 < a.diversity < 1.0
    assert 0.0 < a.novelty < 1.0
    assert a.wall_clock_s > 0
    # everything except the clock reproduces
    assert (a.mean_score, a.high_affinity, a.diversity, a.novelty) == (
        b.mean_score,
        b.high_affinity,
        b.diversity,
        b.novelty,
    )


def test_eval_pocket_threads_match_serial():
    pocket, mols, reference, train = eval_fixture()
    a = bench.eval_pocket(pocket, mols, reference, train, config=FAST, seed=6)
    b = bench.eval_pocket(pocket, mols, reference, train, config=FAST, seed=6, threads=4)
    assert a.mean_score == b.mean_score
    assert a.high_affinity == b.high_affinity


def test_eval_pocket_numeric_reference():
    pocket, mols, _, train = eval_fixture()
    row = bench.eval_pocket(pocket, mols, -0.1, train, config=FAST, seed=7)
    looser = bench.eval_pocket(pocket, mols, 50.0, train, config=FAST, seed=7)
    assert looser.high_affinity == 1.0
    assert row.high_affinity <= looser.high_affinity


def test_eval_pocket_single_candidate_diversity_zero(caplog):
    pocket, mols, reference, train = eval_fixture()
    with caplog.at_level("WARNING", logger="pocketdraft.bench"):
        row = bench.eval_pocket(pocket, mols[:1], reference, train, config=FAST, seed=8)
    assert row.diversity == 0.0
    assert any("diversity" in r.message for r in caplog.records)


def test_report_aggregate_and_note():
    rows = [
        bench.PocketReport("p0", 2, -1.0, 0.5, 0.2, 0.4, 1.0),
        bench.PocketReport("p1", 4, -3.0, 1.0, 0.4, 0.6, 2.0),
    ]
    rep = bench.build_report(rows)
    assert rep.note == bench.PROTOCOL_NOTE
    agg = rep.aggregate
    assert agg.n_candidates == 6
    assert agg.mean_score == pytest.approx(-2.0)
    assert agg.high_affinity == pytest.approx(0.75)
    assert agg.diversity == pytest.approx(0.3)
    assert agg.novelty == pytest.approx(0.5)
    assert agg.wall_clock_s == pytest.approx(3.0)


def test_report_fraction_validation():
    with pytest.raises(ValueError, match="high_affinity"):
        bench.PocketReport("p", 1, 0.0, 1.5, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="at least one candidate"):
        bench.PocketReport("p", 0, 0.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="at least one pocket"):
        bench.build_report([])


def test_report_dict_timing_toggle():
    rows = [bench.PocketReport("p0", 2, -1.0, 0.5, 0.2, 0.4, 1.23)]
    rep = bench.build_report(rows)
    full = bench.report_to_dict(rep)
    bare = bench.report_to_dict(rep, with_timing=False)
    assert full["pockets"][0]["wall_clock_s"] == 1.23
    assert "wall_clock_s" not in bare["pockets"][0]
    assert "wall_clock_s" not in bare["aggregate"]
    # deterministic serialization for byte-compare across runs
    assert json.dumps(bare, sort_keys=True) == json.dumps(
        bench.report_to_dict(rep, with_timing=False), sort_keys=True
    )
