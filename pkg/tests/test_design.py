"""Structure sampling, atom labelling, property optimization, repurposing."""
from __future__ import annotations

import math

import numpy as np
import pytest

from pocketdraft import design
from pocketdraft import rng as prng
from pocketdraft.affinity import init_com, init_scorer, predict_com, score_batch
from pocketdraft.chem import (
    MAX_VALENCE,
    UnlabelledGraph,
    parse_smiles,
    strip_labels,
    valence_ok,
)
from pocketdraft.features import extract
from tests.test_affinity import random_pocket
from tests.test_chem import random_molecule

# chi-square critical values at p=0.01
CHI2_99 = {2: 9.2103, 4: 13.2767, 8: 20.0902}


def template(smiles):
    return strip_labels(parse_smiles(smiles))


def small_db(smiles_list, ids=None):
    return design.StructureDb.from_graphs([template(s) for s in smiles_list], ids)


# ---------------------------------------------------------------- percentile


def test_percentile_window_hundred():
    assert design.percentile_window(list(range(100))) == (4, 9)


def test_percentile_window_all_equal():
    assert design.percentile_window([7.5] * 13) == (7.5, 7.5)


def test_percentile_window_three():
    assert design.percentile_window([30, 10, 20]) == (10, 10)


def test_percentile_window_order_invariant():
    gen = prng.stream(90, "pct")
    xs = gen.normal(size=57).tolist()
    ref = design.percentile_window(xs, 20, 80)
    for _ in range(5):
        gen.shuffle(xs)
        assert design.percentile_window(xs, 20, 80) == ref


def test_percentile_window_validation():
    with pytest.raises(ValueError, match="at least one"):
        design.percentile_window([])
    with pytest.raises(ValueError, match="percentile range"):
        design.percentile_window([1.0], 10, 5)
    with pytest.raises(ValueError, match="percentile range"):
        design.percentile_window([1.0], -1, 5)


def test_percentile_window_extremes():
    xs = [3.0, 1.0, 2.0]
    assert design.percentile_window(xs, 0, 100) == (1.0, 3.0)


# ---------------------------------------------------------------- StructureDb


def test_db_dedup_and_key():
    db = small_db(["CCO", "CCC", "CCCC", "C=C", "CC"])
    # CCO and CCC strip to the same 3-node path; C=C and CC share structural
    # features but differ in order-weighted degree sequence.
    assert len(db) == 4


def test_db_rejects_high_degree_node():
    bad = UnlabelledGraph(4, ((0, 1, 3), (0, 2, 3), (0, 3, 1)))
    db = design.StructureDb.from_graphs([bad, template("CC")])
    assert len(db) == 1


def test_db_rejects_disconnected():
    loose = UnlabelledGraph(3, ((0, 1, 1),))
    db = design.StructureDb.from_graphs([loose, template("CCC")])
    assert len(db) == 1


def test_db_id_mismatch():
    with pytest.raises(ValueError, match="ids"):
        design.StructureDb.from_graphs([template("CC")], ["a", "b"])


def test_db_keeps_first_id_on_duplicate():
    db = small_db(["CCO", "OCC"], ["first", "second"])
    assert db.ids == ("first",)


# ---------------------------------------------------------------- atom table


def test_atom_table_direct_counts():
    # In CCO the two terminal atoms have degree 1 (one C, one O) and the
    # middle C has degree 2.
    t = design.build_atom_table([parse_smiles("CCO")] * 5)
    k = {e: i for i, e in enumerate(design.ELEMENTS)}
    p1 = t.probs[1]
    assert p1[k["C"]] == pytest.approx(0.5)
    assert p1[k["O"]] == pytest.approx(0.5)
    assert t.probs[2][k["C"]] == 1.0
    assert 1 in t.empirical and 2 in t.empirical
    assert 4 not in t.empirical


def test_atom_table_counting_oracle():
    gen = prng.stream(91, "corpus")
    corpus = [random_molecule(gen) for _ in range(100)]
    t = design.build_atom_table(corpus)
    counts = {d: dict.fromkeys(design.ELEMENTS, 0) for d in range(7)}
    for m in corpus:
        load = [0] * m.n_atoms
        for i, j, order in m.bonds:
            load[i] += order
            load[j] += order
        for i, a in enumerate(m.atoms):
            if load[i] <= 6:
                counts[load[i]][a] += 1
    for d in range(7):
        total = sum(counts[d].values())
        if total == 0:
            continue
        for i, e in enumerate(design.ELEMENTS):
            assert t.probs[d][i] == pytest.approx(counts[d][e] / total)


def test_atom_table_valence_legality():
    gen = prng.stream(92, "corpus")
    t = design.build_atom_table([random_molecule(gen) for _ in range(50)])
    k = {e: i for i, e in enumerate(design.ELEMENTS)}
    for d in range(7):
        assert abs(t.probs[d].sum() - 1.0) <= 1e-12
        for e in design.ELEMENTS:
            if MAX_VALENCE[e] < d:
                assert t.probs[d][k[e]] == 0.0
    assert t.probs[4][k["O"]] == 0.0


def test_atom_table_empty_corpus():
    with pytest.raises(ValueError, match="empty corpus"):
        design.build_atom_table([])


def test_atom_table_fallback_warns(caplog):
    t = design.build_atom_table([parse_smiles("CCO")])
    gen = prng.stream(93, "fallback")
    u = template("CC(C)C")  # central node has degree 3, unseen in corpus
    with caplog.at_level("WARNING", logger="pocketdraft.design"):
        drawn = {design.sample_atoms(u, t, gen).atoms[1] for _ in range(200)}
    assert any("degree 3" in r.message for r in caplog.records)
    legal = {e for e in design.ELEMENTS if MAX_VALENCE[e] >= 3}
    assert drawn <= legal
    assert len(drawn) >= 3  # uniform fallback reaches several elements


# ---------------------------------------------------------------- sample_atoms


def test_sample_atoms_marginal_frequencies():
    corpus = [parse_smiles(s) for s in ["C"] * 7 + ["N"] * 2 + ["O"]]
    t = design.build_atom_table(corpus)
    gen = prng.stream(94, "marginal")
    u = UnlabelledGraph(1, ())
    n = 10000
    got = {"C": 0, "N": 0, "O": 0}
    for _ in range(n):
        got[design.sample_atoms(u, t, gen).atoms[0]] += 1
    for e, p in [("C", 0.7), ("N", 0.2), ("O", 0.1)]:
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(got[e] - n * p) < 3 * sigma


def test_sample_atoms_ring_template():
    gen = prng.stream(95, "ring")
    corpus = [parse_smiles(s) for s in ["C1CCCCC1", "C1CCOCC1", "C1CCNCC1"]]
    t = design.build_atom_table(corpus)
    u = template("C1CCCCC1")
    for _ in range(50):
        m = design.sample_atoms(u, t, gen)
        assert valence_ok(m)
        assert strip_labels(m) == u
        assert extract(strip_labels(m)).n_rings == 1


def test_sample_atoms_always_valence_ok():
    gen = prng.stream(96, "bulk")
    corpus = [random_molecule(gen) for _ in range(80)]
    t = design.build_atom_table(corpus)
    for _ in range(200):
        u = strip_labels(random_molecule(gen))
        for _ in range(10):
            assert valence_ok(design.sample_atoms(u, t, gen))


def test_sample_atoms_nodes_independent():
    # Joint distribution over a 2-node template factorizes into marginals.
    corpus = [parse_smiles(s) for s in ["CC"] * 4 + ["CN"] * 3 + ["CO"] * 3]
    t = design.build_atom_table(corpus)
    gen = prng.stream(97, "indep")
    u = template("CC")
    elems = ["C", "N", "O"]
    n = 6000
    joint = {(a, b): 0 for a in elems for b in elems}
    for _ in range(n):
        m = design.sample_atoms(u, t, gen)
        joint[(m.atoms[0], m.atoms[1])] += 1
    row = {a: sum(joint[(a, b)] for b in elems) for a in elems}
    col = {b: sum(joint[(a, b)] for a in elems) for b in elems}
    stat = 0.0
    for a in elems:
        for b in elems:
            exp = row[a] * col[b] / n
            if exp > 0:
                stat += (joint[(a, b)] - exp) ** 2 / exp
    assert stat < CHI2_99[4]


def test_sample_atoms_rejects_high_degree():
    t = design.build_atom_table([parse_smiles("CC")])
    bad = UnlabelledGraph(4, ((0, 1, 3), (0, 2, 3), (0, 3, 1)))
    with pytest.raises(ValueError, match="degree 7"):
        design.sample_atoms(bad, t, prng.stream(98, "x"))


# ------------------------------------------------------------ structure draw


def scorer_and_pocket(seed=99):
    pocket = random_pocket(seed, n=10)
    scorer = init_scorer(seed)
    return scorer, pocket


def test_sample_structure_respects_window():
    scorer, pocket = scorer_and_pocket()
    smiles = ["C" * k for k in range(2, 12)] + ["C1CCCCC1", "CC(C)C", "CCOCC"]
    db = small_db(smiles)
    sampler = design.StructureSampler.for_pocket(db, pocket, scorer)
    gen = prng.stream(100, "draws")
    lo, hi = sampler.window
    assert lo <= hi
    for _ in range(200):
        u, s = sampler.draw(gen)
        assert lo <= s <= hi
        key = design._template_key(u, extract(u))
        assert key in {design._template_key(g, f) for g, f in db.entries}


def test_sample_structure_uniform_over_eligible():
    scorer, pocket = scorer_and_pocket(101)
    db = small_db(["CC", "CCC", "CCCC"])
    sampler = design.StructureSampler.for_pocket(db, pocket, scorer, 0, 100)
    assert sampler.eligible.size == 3
    gen = prng.stream(102, "unif")
    n = 30000
    counts = np.zeros(3)
    for _ in range(n):
        u, _ = sampler.draw(gen)
        counts[[g for g, _ in db.entries].index(u)] += 1
    p = 1 / 3
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)
    stat = float(((counts - n * p) ** 2 / (n * p)).sum())
    assert stat < CHI2_99[2]


def test_window_monotone_eligible_set():
    scorer, pocket = scorer_and_pocket(103)
    db = small_db(["C" * k for k in range(2, 22)])
    inner = design.StructureSampler.for_pocket(db, pocket, scorer, 5, 10)
    outer = design.StructureSampler.for_pocket(db, pocket, scorer, 0, 50)
    assert set(inner.eligible.tolist()) <= set(outer.eligible.tolist())
    full = design.StructureSampler.for_pocket(db, pocket, scorer, 0, 100)
    assert full.eligible.size == len(db)


def test_sample_structure_one_shot():
    scorer, pocket = scorer_and_pocket(104)
    db = small_db(["CC", "CCC", "CCCC", "CCCCC"])
    u = design.sample_structure(db, pocket, scorer, prng.stream(105, "one"))
    assert any(g == u for g, _ in db.entries)


def test_empty_db_errors():
    scorer, pocket = scorer_and_pocket(106)
    db = design.StructureDb((), ())
    with pytest.raises(ValueError, match="empty structure db"):
        design.StructureSampler.for_pocket(db, pocket, scorer)


# ------------------------------------------------------------- enumeration


def test_enumerate_unique_single_node():
    corpus = [parse_smiles(s) for s in ["C", "N", "O"]]
    t = design.build_atom_table(corpus)
    u = UnlabelledGraph(1, ())
    out = design.enumerate_unique(u, t, 50, prng.stream(107, "en"))
    atoms = [m.atoms for m in out]
    assert len(atoms) == len(set(atoms))
    assert len(out) <= 3


def test_enumerate_unique_reaches_k():
    gen = prng.stream(108, "en2")
    corpus = [random_molecule(gen) for _ in range(60)]
    t = design.build_atom_table(corpus)
    u = template("CCCCCCCCCC")
    out = design.enumerate_unique(u, t, 200, gen)
    assert len(out) == 200
    assert len({m.atoms for m in out}) == 200
    assert all(strip_labels(m) == u for m in out)


def test_enumerate_unique_validation():
    t = design.build_atom_table([parse_smiles("C")])
    with pytest.raises(ValueError, match="at least 1"):
        design.enumerate_unique(UnlabelledGraph(1, ()), t, 0, prng.stream(1, "x"))


# ------------------------------------------------------- property optimizer


def mk_candidate(smiles, score, seed=0):
    from pocketdraft.dock import generate_pose

    m = parse_smiles(smiles)
    return design.Candidate(m, generate_pose(m, seed), score, {})


def test_properties_builtin_values():
    c = mk_candidate("CCO", -2.0)
    assert design.PROPERTY_FUNCTIONS["size_penalty"](c) == pytest.approx(-22 / 25)
    assert design.PROPERTY_FUNCTIONS["ring_bonus"](c) == 0.0
    assert design.PROPERTY_FUNCTIONS["hetero_fraction"](c) == pytest.approx(1 / 3)
    assert design.PROPERTY_FUNCTIONS["score"](c) == -2.0
    ring = mk_candidate("C1CCCCC1", 0.0)
    assert design.PROPERTY_FUNCTIONS["ring_bonus"](ring) == pytest.approx(1 / 4)


def test_optimize_properties_single():
    c = mk_candidate("CC", 1.0)
    assert design.optimize_properties([c], {"score": 1.0}) is c


def test_optimize_properties_score_sign():
    cs = [mk_candidate("CC", s) for s in [3.0, -1.0, 2.0]]
    assert design.optimize_properties(cs, {"score": -1.0}) is cs[1]


def test_optimize_properties_dominant_under_shuffles():
    gen = prng.stream(109, "shuffle")
    # One candidate dominates every registered property.
    best = mk_candidate("C1CCCCC1CCOCCOCCOCCOCCOCCC1CC1", -9.0)
    rest = [mk_candidate("CCC", s) for s in [1.0, 2.0, 0.5]]
    objective = {"size_penalty": 1.0, "ring_bonus": 1.0, "hetero_fraction": 1.0, "score": -1.0}
    pool = [best] + rest
    for _ in range(100):
        order = gen.permutation(len(pool))
        shuffled = [pool[i] for i in order]
        assert design.optimize_properties(shuffled, objective) is best


def test_optimize_properties_tie_earliest():
    a = mk_candidate("CC", 1.0)
    b = mk_candidate("CC", 1.0)
    assert design.optimize_properties([a, b], {"score": 1.0}) is a


def test_optimize_properties_first_n_only():
    cheap = mk_candidate("CC", 0.0)
    rich = mk_candidate("CC", 100.0)
    assert design.optimize_properties([cheap, rich], {"score": 1.0}, n=1) is cheap


def test_optimize_properties_errors():
    c = mk_candidate("CC", 1.0)
    with pytest.raises(ValueError, match="unknown property"):
        design.optimize_properties([c], {"qed": 1.0})
    with pytest.raises(ValueError, match="no candidates"):
        design.optimize_properties([], {"score": 1.0})
    with pytest.raises(ValueError, match="empty objective"):
        design.optimize_properties([c], {})


def test_register_property():
    design.register_property("n_oxygens", lambda c: sum(a == "O" for a in c.molecule.atoms))
    try:
        c = mk_candidate("OCCO", 0.0)
        assert design.objective_value(c, {"n_oxygens": 2.0}) == 4.0
    finally:
        del design.PROPERTY_FUNCTIONS["n_oxygens"]


# ------------------------------------------------------------------ generate


def make_pipeline(seed=110):
    gen = prng.stream(seed, "pipe")
    corpus = [random_molecule(gen) for _ in range(60)]
    db = design.StructureDb.from_molecules(
        [(f"m{i}", m) for i, m in enumerate(corpus)]
    )
    t = design.build_atom_table(corpus)
    return design.Pipeline(db, t, init_scorer(seed), init_com(seed))


def test_generate_contract():
    pipeline = make_pipeline()
    pocket = random_pocket(111, n=10)
    cands = design.generate(pipeline, pocket, n=6, seed=112)
    assert len(cands) == 6
    sampler = design.StructureSampler.for_pocket(pipeline.db, pocket, pipeline.scorer)
    lo, hi = sampler.window
    center = predict_com(pipeline.com, pocket)
    db_graphs = [g for g, _ in pipeline.db.entries]
    for c in cands:
        assert valence_ok(c.molecule)
        assert lo <= c.predicted_score <= hi
        assert strip_labels(c.molecule) in db_graphs
        assert np.abs(c.pose.centroid - center).max() < 1e-9
        assert set(c.properties) == {"size_penalty", "ring_bonus", "hetero_fraction", "score"}
        # The recorded score is the template's batch score.
        feats = extract(strip_labels(c.molecule))
        (direct,) = score_batch(pipeline.scorer, [feats], pocket)
        assert c.predicted_score == pytest.approx(direct, abs=1e-12)


def test_generate_deterministic():
    pipeline = make_pipeline()
    pocket = random_pocket(113, n=10)
    a = design.generate(pipeline, pocket, n=4, seed=114)
    b = design.generate(pipeline, pocket, n=4, seed=114)
    assert [c.molecule for c in a] == [c.molecule for c in b]
    assert all(x.pose.coords == y.pose.coords for x, y in zip(a, b))
    c = design.generate(pipeline, pocket, n=4, seed=115)
    assert any(x.molecule != y.molecule or x.pose.coords != y.pose.coords for x, y in zip(a, c))


def test_generate_candidates_order_independent():
    # Candidate i is identical whether generated alone or in a batch.
    pipeline = make_pipeline()
    pocket = random_pocket(116, n=10)
    batch = design.generate(pipeline, pocket, n=3, seed=117)
    solo = design.generate(pipeline, pocket, n=1, seed=117)
    assert batch[0].molecule == solo[0].molecule
    assert batch[0].pose.coords == solo[0].pose.coords


def test_generate_validation():
    pipeline = make_pipeline()
    pocket = random_pocket(118, n=10)
    with pytest.raises(ValueError, match="at least 1"):
        design.generate(pipeline, pocket, n=0, seed=1)


# ------------------------------------------------------------------ repurpose


def test_repurpose_rank_window():
    scorer, pocket = scorer_and_pocket(119)
    gen = prng.stream(119, "corpus")
    mols = []
    while len(mols) < 900:
        m = random_molecule(gen)
        mols.append((f"d{len(mols):03d}", m))
    db = design.StructureDb.from_molecules(mols)
    assert len(db) >= 150
    take = len(db)
    res = design.repurpose_scan(pocket, db, scorer, k=100, seed=120, sample_size=take)
    all_scores = sorted(score_batch(scorer, db.features, pocket))
    n = len(all_scores)
    lo_rank = max(1, math.ceil(0.05 * n))
    hi_rank = max(1, math.ceil(0.10 * n))
    assert res.window == (all_scores[lo_rank - 1], all_scores[hi_rank - 1])
    ranks = [sorted(all_scores).index(h.score) + 1 for h in res.hits]
    assert all(lo_rank <= r <= hi_rank for r in ranks)
    scores = [h.score for h in res.hits]
    assert scores == sorted(scores)
    assert all(res.window[0] < s <= res.window[1] for s in scores)


def test_repurpose_note_when_window_small():
    scorer, pocket = scorer_and_pocket(121)
    db = small_db(["C" * k for k in range(2, 22)])
    res = design.repurpose_scan(pocket, db, scorer, k=10, seed=122)
    assert len(res.hits) < 10
    assert res.note is not None and "fewer than requested" in res.note


def test_repurpose_k_cap_and_no_note():
    scorer, pocket = scorer_and_pocket(123)
    gen = prng.stream(123, "corpus")
    mols = [(f"d{i}", random_molecule(gen)) for i in range(300)]
    db = design.StructureDb.from_molecules(mols)
    res = design.repurpose_scan(pocket, db, scorer, k=2, seed=124)
    if len(res.hits) == 2:
        assert res.note is None


def test_repurpose_validation():
    scorer, pocket = scorer_and_pocket(125)
    with pytest.raises(ValueError, match="empty structure db"):
        design.repurpose_scan(pocket, design.StructureDb((), ()), scorer)
    db = small_db(["CC", "CCC"])
    with pytest.raises(ValueError, match="fewer than k"):
        design.repurpose_scan(pocket, db, scorer, k=100)


def test_repurpose_deterministic():
    scorer, pocket = scorer_and_pocket(126)
    gen = prng.stream(126, "corpus")
    db = design.StructureDb.from_molecules(
        [(f"d{i}", random_molecule(gen)) for i in range(150)]
    )
    a = design.repurpose_scan(pocket, db, scorer, k=5, seed=127)
    b = design.repurpose_scan(pocket, db, scorer, k=5, seed=127)
    assert [h.ident for h in a.hits] == [h.ident for h in b.hits]
