"""Command-line surface: dataset synthesis, model training, candidate
generation, database repurposing, expressivity checks, evaluation, and
throughput probes.

Every run writes a manifest (seed, config hash, package version) next to
its outputs, and identical seeds reproduce identical files byte for byte;
wall-clock numbers go to separate timing files so the comparison holds.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, affinity, bench, design, expressivity, plots, synth
from . import rng as prng
from .checkpoint import load_checkpoint, save_checkpoint
from .chem import parse_smiles, read_ligand_db, strip_labels, to_smiles
from .dock import DockConfig
from .errors import NumericError
from .features import extract
from .synth import SynthConfig

__all__ = ["build_parser", "main"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _manifest_path(out: Path) -> Path:
    if out.suffix:
        return out.with_name(out.stem + "_manifest.json")
    return out / "run_manifest.json"


def _write_manifest(out: Path, command: str, seed: int, config_obj) -> None:
    obj = {
        "command": command,
        "seed": seed,
        "config_hash": _config_hash(config_obj),
        "package_version": __version__,
    }
    path = _manifest_path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_db_records(path):
    db_path = path or synth._bundled_db_path()
    records, skipped = read_ligand_db(db_path)
    if skipped:
        log.warning("skipped %d unreadable ligand rows", skipped)
    if not records:
        raise ValueError(f"ligand db {db_path} holds no usable molecules")
    return records


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_training_outputs(out: Path, result, kind: str) -> None:
    """Checkpoint sidecars: the step log as CSV and the loss curve figure."""
    log_path = out.with_name(out.stem + "_log.csv")
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "train_loss", "val_loss"])
        writer.writerows(result.log)
    if result.log:
        plots.save_training_curve(result.log, out.with_name(out.stem + "_loss.png"))


# ---------------------------------------------------------------- commands


def cmd_make_dataset(args) -> int:
    cfg_obj = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg_obj["seed"] = args.seed
    cfg = SynthConfig.from_dict(cfg_obj)
    out = Path(args.out)
    result = synth.synth_dataset(cfg, out, threads=args.threads)
    _write_manifest(out, "make-dataset", cfg.seed, cfg_obj)
    print(
        f"wrote {len(result.records)} records over {len(result.pockets)} pockets to {out}"
    )
    return EXIT_OK


def _train_config(args) -> affinity.TrainConfig:
    obj = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    return affinity.TrainConfig.from_dict(obj)


def cmd_train_scorer(args) -> int:
    data = synth.load_dataset(args.data)
    cfg = _train_config(args)
    result = affinity.train_scorer(list(data.records), data.pockets, cfg)
    out = Path(args.out)
    save_checkpoint(result.params, out, train_config=asdict(cfg), seed=cfg.seed)
    _write_training_outputs(out, result, "scorer")
    _write_manifest(out, "train-scorer", cfg.seed, asdict(cfg))
    print(f"scorer checkpoint {out} (best validation loss {result.best_val:.6f})")
    return EXIT_OK


def cmd_train_com(args) -> int:
    data = synth.load_dataset(args.data)
    pairs = [
        (data.pockets[ref["pocket_id"]], np.asarray(ref["com"], dtype=np.float64))
        for ref in data.references
    ]
    if not pairs:
        raise ValueError("dataset has no reference ligands to train on")
    cfg = _train_config(args)
    result = affinity.train_com(pairs, cfg)
    out = Path(args.out)
    save_checkpoint(result.params, out, train_config=asdict(cfg), seed=cfg.seed)
    _write_training_outputs(out, result, "com")
    _write_manifest(out, "train-com", cfg.seed, asdict(cfg))
    print(f"com checkpoint {out} (best validation error {result.best_val:.4f} A)")
    return EXIT_OK


def _build_pipeline(args) -> design.Pipeline:
    records = _load_db_records(args.db)
    db = design.StructureDb.from_molecules(records)
    atoms = design.build_atom_table([m for _, m in records])
    scorer = load_checkpoint(args.scorer, kind="scorer").params
    com = load_checkpoint(args.com, kind="com").params
    return design.Pipeline(db, atoms, scorer, com)


def _candidate_row(pocket_id: str, c: design.Candidate) -> dict:
    return {
        "pocket_id": pocket_id,
        "smiles": to_smiles(c.molecule),
        "predicted_score": c.predicted_score,
        "pose": [list(p) for p in c.pose.coords],
        "properties": c.properties,
    }


def cmd_generate(args) -> int:
    pocket = affinity.load_pocket(args.pocket)
    pipeline = _build_pipeline(args)
    seed = args.seed if args.seed is not None else 0
    candidates = design.generate(pipeline, pocket, args.n, seed)
    rows = [_candidate_row(pocket.pocket_id, c) for c in candidates]
    out = Path(args.out) if args.out else None
    if out is None:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    else:
        _write_jsonl(out, rows)
        _write_manifest(out, "generate", seed, {"n": args.n, "pocket": pocket.pocket_id})
        print(f"wrote {len(rows)} candidates to {out}")
    return EXIT_OK


def _parse_objective(text: str) -> dict[str, float]:
    objective = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, weight = part.partition("=")
        if not sep:
            raise ValueError(f"objective term {part!r} is not name=weight")
        objective[name.strip()] = float(weight)
    if not objective:
        raise ValueError("objective is empty")
    return objective


def cmd_generate_po(args) -> int:
    pocket = affinity.load_pocket(args.pocket)
    pipeline = _build_pipeline(args)
    objective = _parse_objective(args.objective)
    seed = args.seed if args.seed is not None else 0
    # one proposal block per emitted candidate; each block's argmax survives
    pool = design.generate(pipeline, pocket, args.n * args.proposals, seed)
    rows = []
    for i in range(args.n):
        block = pool[i * args.proposals : (i + 1) * args.proposals]
        winner = design.optimize_properties(block, objective, n=args.proposals)
        row = _candidate_row(pocket.pocket_id, winner)
        row["objective_value"] = design.objective_value(winner, objective)
        rows.append(row)
    out = Path(args.out) if args.out else None
    if out is None:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    else:
        _write_jsonl(out, rows)
        _write_manifest(
            out,
            "generate-po",
            seed,
            {"n": args.n, "proposals": args.proposals, "objective": objective},
        )
        print(f"wrote {len(rows)} optimized candidates to {out}")
    return EXIT_OK


def cmd_repurpose(args) -> int:
    pocket = affinity.load_pocket(args.pocket)
    records = _load_db_records(args.db)
    db = design.StructureDb.from_molecules(records)
    scorer = load_checkpoint(args.scorer, kind="scorer").params
    seed = args.seed if args.seed is not None else 0
    result = design.repurpose_scan(
        pocket, db, scorer, k=args.k, seed=seed, sample_size=args.sample_size
    )
    smiles_by_id = {ident: to_smiles(m) for ident, m in records}
    rows = [
        {
            "rank": rank,
            "id": hit.ident,
            "smiles": smiles_by_id.get(hit.ident),
            "score": hit.score,
        }
        for rank, hit in enumerate(result.hits, start=1)
    ]
    out = Path(args.out) if args.out else None
    summary = {
        "window": list(result.window),
        "found": len(result.hits),
        "k": args.k,
        "note": result.note,
    }
    if out is None:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
        print(json.dumps(summary, sort_keys=True))
    else:
        _write_jsonl(out, rows)
        with out.with_name(out.stem + "_summary.json").open("w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "repurpose", seed, {"k": args.k, "sample_size": args.sample_size})
        print(f"wrote {len(rows)} hits to {out}")
        if result.note:
            print(result.note)
    return EXIT_OK


def _featured_from_arg(text: str, seed: int) -> expressivity.FeaturedGraph:
    """A SMILES string, or a path to a featured-graph JSON file with keys
    node_features, edges, and optional coords."""
    path = Path(text)
    if path.suffix == ".json" or path.exists():
        obj = _read_json(path)
        return expressivity.FeaturedGraph(
            tuple(obj["node_features"]),
            tuple(tuple(e) for e in obj["edges"]),
            tuple(tuple(p) for p in obj["coords"]) if obj.get("coords") else None,
        )
    m = parse_smiles(text)
    coords = _embedded_coords(m, seed)
    return expressivity.featured_from_molecule(m, coords)


def _embedded_coords(m, seed: int) -> tuple:
    from .dock import generate_pose

    pose = generate_pose(m, seed, gtol=1e-10)
    x = pose.as_array()
    if m.bonds:
        lengths = [float(np.linalg.norm(x[i] - x[j])) for i, j, _ in m.bonds]
        x = x / (sum(lengths) / len(lengths))
    return tuple(map(tuple, x))


def _certificate_dict(g: expressivity.FeaturedGraph):
    if g.n_nodes > expressivity.MAX_CERTIFICATE_NODES:
        return {"note": f"skipped: more than {expressivity.MAX_CERTIFICATE_NODES} nodes"}
    cert = expressivity.graph_properties(g)
    return {
        "girth": cert.girth,
        "largest_cycle": cert.largest_cycle,
        "cut_edges": cert.cut_edges,
        "conjoined": cert.conjoined,
        "cycle_count": cert.cycle_count,
    }


def cmd_expressivity_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    g1 = _featured_from_arg(args.a, seed)
    g2 = _featured_from_arg(args.b, prng.derive_seed(seed, "second-graph"))
    checks = {}
    for mode in ("LU", "LU3D"):
        if mode == "LU3D" and (g1.coords is None or g2.coords is None):
            checks[mode] = {"note": "skipped: no coordinates"}
            continue
        verdict = expressivity.indistinguishable(g1, g2, mode=mode, L=args.depth)
        checks[mode] = {
            "indistinguishable": verdict.indistinguishable,
            "depth_checked": verdict.depth_checked,
            "separating_depth": verdict.separating_depth,
        }
    report = {
        "inputs": {"a": args.a, "b": args.b},
        "checks": checks,
        "certificates": {"a": _certificate_dict(g1), "b": _certificate_dict(g2)},
    }
    for name, text in (("a", args.a), ("b", args.b)):
        if not Path(text).exists() and Path(text).suffix != ".json":
            f = extract(strip_labels(parse_smiles(text)))
            report.setdefault("features", {})[name] = {
                "n_nodes": f.n_nodes,
                "n_rings": f.n_rings,
                "n_rotatable": f.n_rotatable,
                "diameter": f.diameter,
            }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
        _write_manifest(out, "expressivity-check", seed, report["inputs"])
    print(text)
    return EXIT_OK


def _resolve_pocket_file(pocket_arg: str, pocket_id: str) -> Path:
    base = Path(pocket_arg)
    if base.is_dir():
        candidate = base / "pockets" / f"{pocket_id}.json"
        if not candidate.exists():
            raise ValueError(f"no pocket file for {pocket_id} under {base}")
        return candidate
    return base


def cmd_eval(args) -> int:
    rows = []
    with open(args.candidates, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    if not rows:
        raise ValueError(f"no candidates in {args.candidates}")
    by_pocket: dict[str, list[dict]] = {}
    for row in rows:
        by_pocket.setdefault(row["pocket_id"], []).append(row)

    train_records = _load_db_records(args.train_db)
    train_mols = [m for _, m in train_records]
    seed = args.oracle_seed
    config = DockConfig()
    reports = []
    scores_by_label: dict[str, list[float]] = {"oracle": [], "predicted": []}
    for pocket_id in sorted(by_pocket):
        pocket_path = _resolve_pocket_file(args.pocket, pocket_id)
        pocket_obj = _read_json(pocket_path)
        pocket = affinity.pocket_from_dict(pocket_obj)
        if pocket.pocket_id != pocket_id:
            raise ValueError(
                f"candidates name pocket {pocket_id!r} but {pocket_path} holds "
                f"{pocket.pocket_id!r}"
            )
        mols = [parse_smiles(r["smiles"]) for r in by_pocket[pocket_id]]
        if args.reference_smiles:
            reference = parse_smiles(args.reference_smiles)
        elif "reference" in pocket_obj:
            reference = parse_smiles(pocket_obj["reference"]["smiles"])
        else:
            raise ValueError(
                f"no reference ligand: {pocket_path} has no 'reference' entry "
                "and --reference-smiles was not given"
            )
        report, scores = bench.eval_pocket_detailed(
            pocket, mols, reference, train_mols, config=config, seed=seed,
            threads=args.threads,
        )
        reports.append(report)
        scores_by_label["oracle"].extend(scores)
        scores_by_label["predicted"].extend(
            float(r["predicted_score"]) for r in by_pocket[pocket_id]
            if "predicted_score" in r
        )

    full = bench.build_report(reports)
    body = bench.report_to_dict(full, with_timing=False)
    timing = {
        "pockets": {p.pocket_id: p.wall_clock_s for p in full.pockets},
        "total_s": full.aggregate.wall_clock_s,
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with out.with_name(out.stem + "_timing.json").open("w", encoding="utf-8") as fh:
            json.dump(timing, fh, indent=2, sort_keys=True)
            fh.write("\n")
        plots.save_metric_bars(full, out.with_name(out.stem + "_metrics.png"))
        plots.save_score_histogram(
            {k: v for k, v in scores_by_label.items() if v},
            out.with_name(out.stem + "_scores.png"),
        )
        _write_manifest(out, "eval", seed, {"candidates": str(args.candidates)})
        print(f"report written to {out}")
    else:
        print(json.dumps(body, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bench_throughput(args) -> int:
    if args.pocket:
        pocket = affinity.load_pocket(args.pocket)
    else:
        pocket = synth.shell_pocket("throughput-pocket", seed=0, n_residues=30)
    records = _load_db_records(args.db)
    feats = [extract(strip_labels(m)) for _, m in records]
    reps = max(1, args.n // len(feats))
    batch = (feats * reps)[: args.n]
    scorer = affinity.init_scorer(0)

    t0 = time.perf_counter()
    affinity.score_batch(scorer, batch, pocket)
    dt = time.perf_counter() - t0
    per_s = len(batch) / dt if dt > 0 else float("inf")

    seed = args.seed if args.seed is not None else 0
    t0 = time.perf_counter()
    db = synth.synthetic_structure_db(args.scan, seed)
    build_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = design.repurpose_scan(
        pocket, db, scorer, k=min(100, len(db)), sample_size=args.scan
    )
    scan_s = time.perf_counter() - t0

    out = {
        "score_batch_molecules": len(batch),
        "score_batch_per_s": per_s,
        "scan_entries": len(db),
        "scan_db_build_s": build_s,
        "scan_s": scan_s,
        "scan_hits": len(result.hits),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run seed")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads")

    parser = argparse.ArgumentParser(
        prog="pocketdraft",
        description="pocket-conditioned molecule generation and analysis",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", parents=[common], help="synthesize a labeled dataset")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train-scorer", parents=[common], help="fit the affinity scorer")
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_train_scorer)

    p = sub.add_parser("train-com", parents=[common], help="fit the center-of-mass model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_train_com)

    p = sub.add_parser("generate", parents=[common], help="generate candidates for a pocket")
    p.add_argument("--pocket", required=True)
    p.add_argument("--scorer", required=True, help="scorer checkpoint")
    p.add_argument("--com", required=True, help="center-of-mass checkpoint")
    p.add_argument("--db", default=None, help="ligand db (default: bundled)")
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "generate-po", parents=[common], help="generate with property optimization"
    )
    p.add_argument("--pocket", required=True)
    p.add_argument("--scorer", required=True)
    p.add_argument("--com", required=True)
    p.add_argument("--db", default=None)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--objective", required=True, help="comma list of name=weight")
    p.add_argument("--proposals", type=int, default=50, help="proposal block size")
    p.set_defaults(func=cmd_generate_po)

    p = sub.add_parser("repurpose", parents=[common], help="scan a db against a pocket")
    p.add_argument("--pocket", required=True)
    p.add_argument("--scorer", required=True)
    p.add_argument("--db", default=None)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--sample-size", type=int, default=design.SCAN_SAMPLE_SIZE)
    p.set_defaults(func=cmd_repurpose)

    p = sub.add_parser(
        "expressivity-check",
        parents=[common],
        help="compare two graphs under locally unordered refinement",
    )
    p.add_argument("a", help="SMILES or featured-graph JSON file")
    p.add_argument("b", help="SMILES or featured-graph JSON file")
    p.add_argument("--depth", type=int, default=None, help="refinement depth L")
    p.set_defaults(func=cmd_expressivity_check)

    p = sub.add_parser("eval", parents=[common], help="metric report for a candidate file")
    p.add_argument("--candidates", required=True, help="candidates JSONL")
    p.add_argument("--pocket", required=True, help="pocket JSON or dataset directory")
    p.add_argument("--oracle-seed", type=int, default=0)
    p.add_argument("--train-db", default=None, help="novelty baseline (default: bundled)")
    p.add_argument("--reference-smiles", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-throughput", parents=[common], help="scoring throughput probe")
    p.add_argument("--pocket", default=None)
    p.add_argument("--db", default=None)
    p.add_argument("--n", type=int, default=4096, help="molecules per scoring batch")
    p.add_argument("--scan", type=int, default=16384, help="repurpose scan size")
    p.set_defaults(func=cmd_bench_throughput)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
