"""End-to-end command-line flows on tiny datasets."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from pocketdraft import bench, cli, design
from pocketdraft.chem import parse_smiles
from pocketdraft.errors import NumericError


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny dataset and trained models shared by the flow tests."""
    root = tmp_path_factory.mktemp("cliflow")
    synth_cfg = root / "synth.json"
    synth_cfg.write_text(
        json.dumps(
            {
                "n_pockets": 3,
                "residues_per_pocket": [10, 14],
                "extras_per_pocket": 8,
                "seed": 501,
            }
        )
    )
    train_cfg = root / "train.json"
    train_cfg.write_text(
        json.dumps(
            {"seed": 1, "max_steps": 300, "batch_size": 32, "eval_every": 50, "patience": 6}
        )
    )
    assert run("make-dataset", "--config", synth_cfg, "--out", root / "data") == 0
    assert (
        run(
            "train-scorer",
            "--data",
            root / "data",
            "--out",
            root / "models" / "scorer.ckpt",
            "--config",
            train_cfg,
        )
        == 0
    )
    assert (
        run(
            "train-com",
            "--data",
            root / "data",
            "--out",
            root / "models" / "com.ckpt",
            "--config",
            train_cfg,
        )
        == 0
    )
    return root


def test_make_dataset_outputs_and_rerun_identical(workspace, tmp_path):
    data = workspace / "data"
    for name in ["records.jsonl", "references.jsonl", "manifest.json", "run_manifest.json"]:
        assert (data / name).exists()
    assert len(list((data / "pockets").glob("*.json"))) == 3
    # same config, fresh directory: byte-identical dataset files
    assert run("make-dataset", "--config", workspace / "synth.json", "--out", tmp_path / "d2") == 0
    for name in ["records.jsonl", "references.jsonl", "manifest.json"]:
        assert (tmp_path / "d2" / name).read_bytes() == (data / name).read_bytes()


def test_pocket_files_carry_reference(workspace):
    obj = json.loads((workspace / "data" / "pockets" / "pocket-000.json").read_text())
    assert set(obj["reference"]) == {"ligand_id", "smiles"}
    parse_smiles(obj["reference"]["smiles"])


def test_training_sidecars(workspace):
    models = workspace / "models"
    for stem in ["scorer", "com"]:
        assert (models / f"{stem}.ckpt").exists()
        log = (models / f"{stem}_log.csv").read_text().splitlines()
        assert log[0] == "step,train_loss,val_loss"
        assert len(log) > 1
        assert (models / f"{stem}_loss.png").stat().st_size > 0
        manifest = json.loads((models / f"{stem}_manifest.json").read_text())
        assert manifest["command"] == f"train-{stem}"
        assert set(manifest) == {"command", "seed", "config_hash", "package_version"}


def test_generate_deterministic(workspace, tmp_path):
    pocket = workspace / "data" / "pockets" / "pocket-000.json"
    common = [
        "--pocket", pocket,
        "--scorer", workspace / "models" / "scorer.ckpt",
        "--com", workspace / "models" / "com.ckpt",
        "--n", 5, "--seed", 7,
    ]
    assert run("generate", *common, "--out", tmp_path / "a.jsonl") == 0
    assert run("generate", *common, "--out", tmp_path / "b.jsonl") == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    rows = [json.loads(l) for l in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert len(rows) == 5
    for row in rows:
        assert row["pocket_id"] == "pocket-000"
        m = parse_smiles(row["smiles"])
        assert len(row["pose"]) == m.n_atoms
        assert set(row["properties"]) == {"size_penalty", "ring_bonus", "hetero_fraction", "score"}


def test_generate_po_improves_objective(workspace, tmp_path):
    pocket = workspace / "data" / "pockets" / "pocket-001.json"
    common = [
        "--pocket", pocket,
        "--scorer", workspace / "models" / "scorer.ckpt",
        "--com", workspace / "models" / "com.ckpt",
        "--seed", 11,
    ]
    assert run("generate", *common, "--n", 6, "--out", tmp_path / "plain.jsonl") == 0
    assert (
        run(
            "generate-po", *common,
            "--n", 6, "--proposals", 8,
            "--objective", "ring_bonus=1.0",
            "--out", tmp_path / "po.jsonl",
        )
        == 0
    )
    plain = [json.loads(l) for l in (tmp_path / "plain.jsonl").read_text().splitlines()]
    po = [json.loads(l) for l in (tmp_path / "po.jsonl").read_text().splitlines()]
    assert len(po) == 6
    mean_plain = sum(r["properties"]["ring_bonus"] for r in plain) / len(plain)
    mean_po = sum(r["properties"]["ring_bonus"] for r in po) / len(po)
    assert mean_po >= mean_plain
    for row in po:
        assert row["objective_value"] == pytest.approx(row["properties"]["ring_bonus"])


def test_repurpose_rows_sorted(workspace, tmp_path):
    assert (
        run(
            "repurpose",
            "--pocket", workspace / "data" / "pockets" / "pocket-002.json",
            "--scorer", workspace / "models" / "scorer.ckpt",
            "--k", 7, "--seed", 3,
            "--out", tmp_path / "hits.jsonl",
        )
        == 0
    )
    rows = [json.loads(l) for l in (tmp_path / "hits.jsonl").read_text().splitlines()]
    assert len(rows) == 7
    assert [r["rank"] for r in rows] == list(range(1, 8))
    scores = [r["score"] for r in rows]
    assert scores == sorted(scores)
    summary = json.loads((tmp_path / "hits_summary.json").read_text())
    assert summary["found"] == 7
    assert summary["window"][0] <= min(scores)


def test_expressivity_check_stdout(capsys):
    assert run("expressivity-check", "C1CCC2CCCCC2C1", "C1CCC(C1)C2CCCC2", "--depth", 12) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["checks"]["LU"]["indistinguishable"] is True
    assert out["checks"]["LU3D"]["indistinguishable"] is True
    assert out["certificates"]["a"]["girth"] == 6
    assert out["certificates"]["b"]["girth"] == 5
    assert out["certificates"]["a"]["cut_edges"] == 0
    assert out["certificates"]["b"]["cut_edges"] == 1
    assert out["features"]["a"]["n_rotatable"] == 0
    assert out["features"]["b"]["n_rotatable"] == 1


def test_expressivity_check_json_inputs(tmp_path, capsys):
    g = {"node_features": ["C", "C", "C"], "edges": [[0, 1, 1], [1, 2, 1], [0, 2, 1]]}
    p = tmp_path / "tri.json"
    p.write_text(json.dumps(g))
    assert run("expressivity-check", p, "C1CC1") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["checks"]["LU"]["indistinguishable"] is True
    assert out["checks"]["LU3D"] == {"note": "skipped: no coordinates"}


def test_eval_report_matches_recomputation(workspace, tmp_path, capsys):
    pocket_file = workspace / "data" / "pockets" / "pocket-000.json"
    common = [
        "--pocket", pocket_file,
        "--scorer", workspace / "models" / "scorer.ckpt",
        "--com", workspace / "models" / "com.ckpt",
    ]
    assert run("generate", *common, "--n", 4, "--seed", 19, "--out", tmp_path / "g.jsonl") == 0
    assert (
        run(
            "eval",
            "--candidates", tmp_path / "g.jsonl",
            "--pocket", pocket_file,
            "--oracle-seed", 3,
            "--out", tmp_path / "report.json",
        )
        == 0
    )
    capsys.readouterr()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["note"] == bench.PROTOCOL_NOTE
    assert "wall_clock_s" not in report["aggregate"]
    assert (tmp_path / "report_timing.json").exists()
    assert (tmp_path / "report_metrics.png").stat().st_size > 0
    assert (tmp_path / "report_scores.png").stat().st_size > 0

    # from-scratch recomputation from the candidate file equals the report
    from pocketdraft import affinity, synth
    from pocketdraft.chem import read_ligand_db

    rows = [json.loads(l) for l in (tmp_path / "g.jsonl").read_text().splitlines()]
    pocket_obj = json.loads(pocket_file.read_text())
    pocket = affinity.pocket_from_dict(pocket_obj)
    mols = [parse_smiles(r["smiles"]) for r in rows]
    reference = parse_smiles(pocket_obj["reference"]["smiles"])
    train_mols = [m for _, m in read_ligand_db(synth._bundled_db_path())[0]]
    row = bench.eval_pocket(pocket, mols, reference, train_mols, seed=3)
    got = report["pockets"][0]
    assert got["mean_score"] == row.mean_score
    assert got["high_affinity"] == row.high_affinity
    assert got["diversity"] == row.diversity
    assert got["novelty"] == row.novelty

    # reruns are byte-identical on the deterministic report body
    assert (
        run(
            "eval",
            "--candidates", tmp_path / "g.jsonl",
            "--pocket", pocket_file,
            "--oracle-seed", 3,
            "--out", tmp_path / "report2.json",
        )
        == 0
    )
    assert (tmp_path / "report2.json").read_bytes() == (tmp_path / "report.json").read_bytes()


def test_eval_requires_reference(workspace, tmp_path, capsys):
    pocket = workspace / "data" / "pockets" / "pocket-000.json"
    obj = json.loads(pocket.read_text())
    del obj["reference"]
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps(obj))
    cands = tmp_path / "c.jsonl"
    cands.write_text(
        json.dumps({"pocket_id": "pocket-000", "smiles": "CCO", "predicted_score": 0.0}) + "\n"
    )
    assert run("eval", "--candidates", cands, "--pocket", bare, "--oracle-seed", 1) == 2
    assert "reference" in capsys.readouterr().err


def test_exit_codes(workspace, tmp_path, capsys, monkeypatch):
    # validation: unknown config key
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"pockets": 3}))
    assert run("make-dataset", "--config", bad, "--out", tmp_path / "x") == 2
    # validation: missing file
    assert (
        run(
            "generate",
            "--pocket", tmp_path / "nosuch.json",
            "--scorer", workspace / "models" / "scorer.ckpt",
            "--com", workspace / "models" / "com.ckpt",
        )
        == 2
    )
    # numeric failures map to their own exit code
    def boom(*a, **k):
        raise NumericError("diverged")

    monkeypatch.setattr(design, "generate", boom)
    assert (
        run(
            "generate",
            "--pocket", workspace / "data" / "pockets" / "pocket-000.json",
            "--scorer", workspace / "models" / "scorer.ckpt",
            "--com", workspace / "models" / "com.ckpt",
            "--n", 2,
        )
        == 3
    )
    capsys.readouterr()
