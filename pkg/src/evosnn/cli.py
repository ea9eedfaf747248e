"""Command-line entry point: ``evosnn search | eval | describe | sample``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .data import DatasetError, load_dataset
from .evaluation import CachedEvaluator, KnowledgeSet, SNNEvaluator
from .genome import ConfigError, Genome, GenomeConfig, GenomeParseError, deserialize, random_genome, serialize, validate
from .landscape import SyntheticLandscape
from .motifs import DecodeConfig, decode, describe, export_graph
from .snn import ENCODINGS
from .search import MODES, SearchConfig, SearchResult, ablation_transform, archive_record, run_search

log = logging.getLogger("evosnn")


class CLIError(Exception):
    def __init__(self, kind: str, message: str, details=None):
        super().__init__(message)
        self.kind = kind
        self.details = details


def _out_root() -> Path:
    return Path(os.environ.get("EVOSNN_OUT", "runs"))


def _default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _read_genome(path) -> Genome:
    p = Path(path)
    if not p.exists():
        raise CLIError("FileNotFound", f"{p}: no such file")
    text = p.read_text().strip()
    line = text.splitlines()[0] if text else ""
    g = deserialize(line)
    bad = validate(g)
    if bad:
        raise CLIError("InvalidGenome", f"{p}: genome fails validation", [str(v) for v in bad])
    return g


def _make_evaluator(kind: str, dataset_spec: str, noise: float = 0.0, seed: int = 0, encoding: str = "current"):
    if kind == "landscape":
        return SyntheticLandscape(noise=noise), None
    ds = load_dataset(dataset_spec, seed=seed)
    return SNNEvaluator(ds, encoding=encoding), ds


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports(out: Path, result: SearchResult) -> list[Path]:
    """Archive, hypervolume, predictor and Pareto CSVs plus best genome and summary."""
    written = []
    p = out / "archive.jsonl"
    with open(p, "w") as fh:
        for rec in result.archive.members:
            fh.write(json.dumps(archive_record(rec), sort_keys=True) + "\n")
    written.append(p)
    p = out / "hypervolume.csv"
    _write_csv(p, ["iteration", "hypervolume"], [(i + 1, repr(float(v))) for i, v in enumerate(result.hv_history)])
    written.append(p)
    p = out / "predictor.csv"
    _write_csv(
        p,
        ["iteration", "spearman", "undefined"],
        [(i + 1, repr(float(r)), int(u)) for i, (r, u) in enumerate(result.rho_history)],
    )
    written.append(p)
    p = out / "pareto.csv"
    _write_csv(p, ["f1", "f2", "key"], [(repr(r.f1), repr(r.f2), r.genome.key) for r in result.archive.members])
    written.append(p)
    p = out / "best_genome.json"
    if result.best is not None:
        p.write_text(serialize(result.best.genome) + "\n")
        written.append(p)
    summary = {
        "best": None if result.best is None else archive_record(result.best),
        "final": None if result.final is None else archive_record(result.final),
        "final_accuracy": result.final_accuracy,
        "reference_point": list(result.reference),
        "hypervolume_initial": result.hv_initial,
        "hypervolume_final": result.hv_history[-1] if result.hv_history else result.hv_initial,
        "true_evaluations": len(result.knowledge),
        "predicted_per_iteration": result.scored_per_iteration,
        "trained_per_iteration": result.trained_per_iteration,
    }
    p = out / "result.json"
    _dump(p, summary)
    written.append(p)
    return written


def cmd_search(args) -> int:
    if args.from_manifest:
        man = json.loads(Path(args.from_manifest).read_text())
        cfg = SearchConfig.from_dict(man["config"])
        dataset_spec = man["dataset"]["spec"]
        evaluator_kind = man["evaluator"]["kind"]
        noise = man["evaluator"].get("noise", 0.0)
        encoding = man["evaluator"].get("encoding", "current")
        split_seed = man["dataset"].get("split_seed", 0)
    else:
        cfg = SearchConfig.load(args.config) if args.config else SearchConfig.desk()
        overrides = {}
        if args.mode is not None:
            overrides["mode"] = args.mode
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = cfg.replace(**overrides)
        dataset_spec = args.dataset
        evaluator_kind = args.evaluator
        noise = args.noise
        encoding = args.encoding
        split_seed = args.split_seed
    out = Path(args.out) if args.out else _out_root() / f"{cfg.mode}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    evaluator, ds = _make_evaluator(evaluator_kind, dataset_spec, noise, split_seed, encoding)
    if args.from_manifest and ds is not None and man["dataset"].get("fingerprint") != ds.fingerprint():
        raise CLIError("ManifestMismatch", "dataset content differs from the manifest fingerprint")
    manifest = {
        "tool": "evosnn",
        "version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "mode": cfg.mode,
        "dataset": {
            "spec": dataset_spec,
            "split_seed": split_seed,
            "fingerprint": None if ds is None else ds.fingerprint(),
            "name": None if ds is None else ds.name,
        },
        "evaluator": evaluator.describe(),
        "layout": {
            "knowledge": "knowledge.jsonl",
            "archive": "archive.jsonl",
            "hypervolume": "hypervolume.csv",
            "predictor": "predictor.csv",
            "pareto": "pareto.csv",
            "best_genome": "best_genome.json",
            "result": "result.json",
            "checkpoint": "checkpoint/",
        },
    }
    if not (args.resume and (out / "manifest.json").exists()):
        _dump(out / "manifest.json", manifest)
    result = run_search(
        cfg,
        CachedEvaluator(evaluator),
        workdir=out,
        resume=args.resume,
        workers=args.workers or _default_workers(),
        progress=lambda s: print(
            f"iteration {s['iteration']}: records={s['records']} hv={s['hypervolume']:.6g} "
            f"rho={s['rho']:.3f} archive={s['archive']}",
            flush=True,
        ),
    )
    write_reports(out, result)
    if result.best is not None:
        print(f"best genome: f1={result.best.f1:.6g} f2={result.best.f2:.6g} key={result.best.genome.key[:12]}")
    if result.final_accuracy is not None:
        print(f"final accuracy after {cfg.e_trn} epochs: {result.final_accuracy:.4f}")
    print(f"outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    if args.epochs < 1:
        raise CLIError("InvalidArgument", "--epochs must be at least 1")
    g = _read_genome(args.genome)
    evaluator, _ = _make_evaluator(args.evaluator, args.dataset, args.noise, args.split_seed, args.encoding)
    rec = evaluator.evaluate(g, args.epochs, args.seed)
    if args.append:
        KnowledgeSet.load(args.append).append(rec)
    obj = rec.to_dict()
    print(json.dumps(obj, sort_keys=True))
    return 0


def cmd_describe(args) -> int:
    g = _read_genome(args.genome)
    net = decode(g, DecodeConfig())
    print(describe(net))
    target = Path(args.export) if args.export else _out_root() / f"{Path(args.genome).stem}.graph.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    export_graph(net, target)
    print(f"graph exported to {target}")
    return 0


def cmd_sample(args) -> int:
    cfg = GenomeConfig(args.l, args.b, args.ops)
    g = random_genome(cfg, seed=args.seed)
    clamp = ablation_transform(args.mode, cfg)
    if clamp is not None:
        g = clamp(g)
    print(serialize(g))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evosnn", description="Evolutionary architecture search for spiking networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def evaluator_flags(sp):
        sp.add_argument("--dataset", default="blobs", help="CSV path or blobs[:n[:seed]] (default: blobs)")
        sp.add_argument("--split-seed", type=int, default=0, help="seed of the CSV train/validation split")
        sp.add_argument("--evaluator", choices=("snn", "landscape"), default="snn")
        sp.add_argument("--noise", type=float, default=0.0, help="f1 noise of the landscape evaluator")
        sp.add_argument("--encoding", choices=ENCODINGS, default="current", help="input encoding of the SNN evaluator")

    s = sub.add_parser("search", help="run a search, an ablation or the random baseline")
    s.add_argument("--config", help="search config JSON (default: desk profile)")
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=0, help="evaluation processes (default: available cores)")
    s.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    s.add_argument("--out", help="output directory (default: $EVOSNN_OUT/<mode>-seed<seed>)")
    s.add_argument("--from-manifest", help="rerun exactly the run described by a manifest.json")
    evaluator_flags(s)
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="train one genome and print its evaluation record")
    e.add_argument("--genome", required=True)
    e.add_argument("--epochs", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--append", metavar="KNOWLEDGE_JSONL", help="also append the record to this knowledge set")
    evaluator_flags(e)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("describe", help="summarise a genome's decoded graph")
    d.add_argument("--genome", required=True)
    d.add_argument("--export", help="graph JSON path (default: $EVOSNN_OUT/<genome>.graph.json)")
    d.set_defaults(func=cmd_describe)

    r = sub.add_parser("sample", help="print a random genome record")
    r.add_argument("--l", type=int, default=4)
    r.add_argument("--b", type=int, default=20)
    r.add_argument("--ops", type=int, default=2)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", choices=MODES, default="full")
    r.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        err = {"error": exc.kind, "message": str(exc)}
        if exc.details is not None:
            err["details"] = exc.details
    except (GenomeParseError, ConfigError, DatasetError, ValueError, OSError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, GenomeParseError) and exc.position is not None:
            err["position"] = exc.position
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
