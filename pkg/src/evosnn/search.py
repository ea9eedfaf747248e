"""The surrogate-assisted evolutionary search loop, its random baseline and ablation clamps."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .evaluation import SENTINEL_F1, SENTINEL_F2, EvaluationRecord, KnowledgeSet
from .genome import (
    ConfigError,
    Genome,
    GenomeConfig,
    MotifKind,
    VariationParams,
    clamp_self_loops,
    hierarchical_connections,
    random_genome,
)
from .metrics import hypervolume_2d
from .nsga import Population, dominates, nsga2_generation, sort_order
from .surrogate import FitError, RegressionTree, TreeParams, predictor_report

log = logging.getLogger(__name__)

MODES = ("full", "FE", "FI", "FbI", "LI", "MI", "CL-0", "random")


@dataclass(frozen=True)
class SearchConfig:
    n0: int = 300
    iters: int = 50
    n_new: int = 60
    gens: int = 40
    e_eval: int = 10
    e_trn: int = 600
    k: int = 10
    seed: int = 0
    l: int = 4
    b: int = 20
    ops: int = 2
    mode: str = "full"
    crossover_probability: float = 0.9
    mutation_probability: float | None = None
    eta: float = 3.0
    max_depth: int = 12
    min_samples_leaf: int = 5
    # replace the predictor by true evaluations (only sensible for cheap evaluators)
    use_true_f1: bool = False

    def __post_init__(self):
        for name in ("n0", "iters", "n_new", "gens", "e_eval", "e_trn", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.k > self.n_new:
            raise ConfigError(f"k ({self.k}) must not exceed n_new ({self.n_new})")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        self.genome_config  # validates l, b, ops
        self.variation  # validates rates

    @classmethod
    def desk(cls, **overrides) -> "SearchConfig":
        """Scaled-down profile that runs on one laptop core."""
        base = dict(n0=20, iters=5, n_new=12, gens=8, e_eval=3, e_trn=10, k=4)
        base.update(overrides)
        return cls(**base)

    @property
    def genome_config(self) -> GenomeConfig:
        return GenomeConfig(self.l, self.b, self.ops)

    @property
    def variation(self) -> VariationParams:
        return VariationParams(self.crossover_probability, self.mutation_probability, self.eta, self.seed)

    @property
    def tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_samples_leaf)

    def replace(self, **changes) -> "SearchConfig":
        return SearchConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown search config keys: {', '.join(sorted(unknown))}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "SearchConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        profile = obj.pop("profile", None)
        if profile == "desk":
            return cls.desk(**obj)
        if profile not in (None, "paper"):
            raise ConfigError(f"{path}: unknown profile {profile!r}")
        return cls.from_dict(obj)


def evaluation_budget(cfg: SearchConfig) -> dict:
    """Per-iteration and total evaluation counts implied by ``cfg``."""
    return {
        "predicted_per_iteration": cfg.n_new * cfg.gens,
        "trained_per_iteration": cfg.k,
        "ratio": cfg.n_new * cfg.gens / cfg.k,
        "true_evaluations": cfg.n0 + cfg.iters * cfg.k,
        "final_trainings": 1,
    }


def ablation_transform(mode: str, cfg: GenomeConfig) -> Callable[[Genome], Genome] | None:
    """Clamp applied to every sampled or varied genome in ``mode``."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if mode in ("full", "random"):
        return None
    if mode == "CL-0":
        chain = hierarchical_connections(cfg.l).ravel()

        def clamp(g: Genome) -> Genome:
            genes = np.array(g.genes)
            genes[cfg.connection_offset :] = chain
            return g.replace(genes)

        return clamp
    kind = int(MotifKind[mode])
    idx = np.array([cfg.motif_gene_index(m, s) for m in range(cfg.l) for s in range(5)])

    def clamp_motifs(g: Genome) -> Genome:
        genes = np.array(g.genes)
        genes[idx] = kind
        return g.replace(clamp_self_loops(genes, cfg))

    return clamp_motifs


class ParetoArchive:
    """Insertion-only non-dominated set of measured, non-degenerate records."""

    def __init__(self):
        self.members: list[EvaluationRecord] = []

    def insert(self, rec: EvaluationRecord) -> bool:
        if rec.degenerate:
            return False
        p = (rec.f1, rec.f2)
        for m in self.members:
            if m.genome.key == rec.genome.key or dominates((m.f1, m.f2), p):
                return False
        self.members = [m for m in self.members if not dominates(p, (m.f1, m.f2))]
        self.members.append(rec)
        self.members.sort(key=lambda r: (r.f1, r.f2, r.genome.key))
        return True

    def points(self) -> np.ndarray:
        return np.array([(m.f1, m.f2) for m in self.members], dtype=np.float64).reshape(-1, 2)

    def hypervolume(self, ref) -> float:
        pts = self.points()
        inside = pts[(pts[:, 0] <= ref[0]) & (pts[:, 1] <= ref[1])]
        return hypervolume_2d(inside, ref)

    def best(self) -> EvaluationRecord | None:
        """Lowest measured f1; ties go to lower f2."""
        return self.members[0] if self.members else None

    def __len__(self) -> int:
        return len(self.members)


def reference_point(records) -> tuple[float, float]:
    pts = np.array([(r.f1, r.f2) for r in records if not r.degenerate]).reshape(-1, 2)
    if len(pts) == 0:
        return (SENTINEL_F1 * 1.1, SENTINEL_F2 * 1.1)
    m = pts.max(axis=0)
    return tuple(float(v * 1.1) if v > 0 else float(v + 1.0) for v in m)


def evaluation_seed(seed: int, index: int) -> int:
    """Training seed of the ``index``-th true evaluation of a run."""
    return int(np.random.SeedSequence([seed, 2, index]).generate_state(1)[0])


def final_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 3]).generate_state(1)[0])


# process-pool plumbing: the evaluator is shipped once per worker
_WORKER_EVALUATOR = None


def _init_worker(evaluator) -> None:
    global _WORKER_EVALUATOR
    import torch

    torch.set_num_threads(1)
    _WORKER_EVALUATOR = evaluator


def _worker_eval(args) -> EvaluationRecord:
    genome, epochs, seed = args
    return _WORKER_EVALUATOR.evaluate(genome, epochs, seed)


class EvaluationPool:
    """Runs true evaluations serially or in a process pool; results keep input order."""

    def __init__(self, evaluator, workers: int = 1):
        self.evaluator = evaluator
        self.workers = max(1, int(workers))
        self._pool = None

    def map(self, jobs: list[tuple[Genome, int, int]]) -> list[EvaluationRecord]:
        if self.workers == 1 or len(jobs) <= 1:
            return [self.evaluator.evaluate(*j) for j in jobs]
        if self._pool is None:
            self._pool = ProcessPoolExecutor(
                self.workers, initializer=_init_worker, initargs=(self.evaluator,)
            )
        return list(self._pool.map(_worker_eval, jobs))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class SearchResult:
    config: SearchConfig
    best: EvaluationRecord | None
    final: EvaluationRecord | None
    archive: ParetoArchive
    knowledge: KnowledgeSet
    reference: tuple[float, float]
    hv_initial: float
    hv_history: list = field(default_factory=list)
    rho_history: list = field(default_factory=list)  # (rho, undefined)
    scored_per_iteration: list = field(default_factory=list)
    trained_per_iteration: list = field(default_factory=list)

    @property
    def final_accuracy(self) -> float | None:
        return None if self.final is None else self.final.accuracy


class Checkpoint:
    """Per-iteration search state in ``<dir>/state.json`` plus the predictor."""

    def __init__(self, directory):
        self.dir = Path(directory)

    def save(self, state: dict, tree: RegressionTree | None) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self.dir / "state.json.tmp"
        with open(tmp, "w") as fh:
            json.dump(state, fh, sort_keys=True)
        os.replace(tmp, self.dir / "state.json")
        if tree is not None:
            (self.dir / "predictor.json").write_text(tree.to_json())
        with open(self.dir / "archive.jsonl", "w") as fh:
            for rec in state["archive"]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def load(self) -> dict | None:
        path = self.dir / "state.json"
        if not path.exists():
            return None
        with open(path) as fh:
            return json.load(fh)


def _sample_unseen(n: int, gcfg, rng, seen: set, transform, max_tries: int = 1000) -> list[Genome]:
    out = []
    tries = 0
    while len(out) < n:
        g = random_genome(gcfg, rng=rng)
        if transform is not None:
            g = transform(g)
        tries += 1
        if g.key in seen and tries < max_tries * max(n, 1):
            continue
        seen.add(g.key)
        out.append(g)
    return out


def _scorer(evaluator, tree: RegressionTree | None, cfg: SearchConfig, f2_seed: int, stats: dict):
    """f1 from the predictor (or true evaluation), f2 from a forward-only measurement."""

    def score(genomes):
        stats["scored"] += len(genomes)
        pts = [None] * len(genomes)
        live = []
        for i, g in enumerate(genomes):
            if evaluator.reachable(g):
                live.append(i)
            else:
                pts[i] = (SENTINEL_F1, SENTINEL_F2)
        if live:
            gs = [genomes[i] for i in live]
            if cfg.use_true_f1:
                f1 = [evaluator.evaluate(g, cfg.e_eval, f2_seed).f1 for g in gs]
            else:
                f1 = tree.predict(gs)
            for i, g, v in zip(live, gs, f1):
                pts[i] = (float(v), float(evaluator.measure_f2(g, f2_seed)))
        return pts

    return score


def run_search(
    cfg: SearchConfig,
    evaluator,
    workdir=None,
    resume: bool = False,
    workers: int = 1,
    progress: Callable[[dict], None] | None = None,
) -> SearchResult:
    """Initial sampling, then ``iters`` rounds of predictor-guided evolution and true evaluation.

    Args:
        cfg: search configuration; ``cfg.mode == "random"`` gives the baseline.
        evaluator: provides ``evaluate``, ``measure_f2`` and ``reachable``.
        workdir: if set, the knowledge set and checkpoints live here.
        resume: continue from the checkpoint in ``workdir``.
        workers: process-pool width for true evaluations.
        progress: called with a summary dict after every iteration.
    """
    gcfg = cfg.genome_config
    variation = cfg.variation
    transform = ablation_transform(cfg.mode, gcfg)
    workdir = Path(workdir) if workdir is not None else None
    if workdir is not None:
        workdir.mkdir(parents=True, exist_ok=True)
    ks_path = workdir / "knowledge.jsonl" if workdir is not None else None
    ckpt = Checkpoint(workdir / "checkpoint") if workdir is not None else None
    f2_seed = cfg.seed

    state = ckpt.load() if (ckpt is not None and resume) else None
    if resume and state is None:
        log.info("no checkpoint found, starting fresh")
    if state is not None:
        if state["config"] != cfg.to_dict():
            raise ConfigError("checkpoint was written with a different search config")
        knowledge = KnowledgeSet.load(ks_path)
        knowledge.truncate(state["n_records"])
        archive = ParetoArchive()
        for obj in state["archive"]:
            archive.insert(EvaluationRecord.from_dict(obj))
        ref = tuple(state["reference"])
        hv_initial = state["hv_initial"]
        hv_history = list(state["hv"])
        rho_history = [tuple(r) for r in state["rho"]]
        scored = list(state["scored"])
        trained = list(state["trained"])
        start = state["iteration"] + 1
    else:
        if ks_path is not None and ks_path.exists():
            ks_path.unlink()
        knowledge = KnowledgeSet(ks_path)
        hv_history, rho_history, scored, trained = [], [], [], []
        start = 1

    with EvaluationPool(evaluator, workers) as pool:
        if state is None:
            rng0 = np.random.default_rng([cfg.seed, 0])
            init = _sample_unseen(cfg.n0, gcfg, rng0, set(), transform)
            jobs = [(g, cfg.e_eval, evaluation_seed(cfg.seed, i)) for i, g in enumerate(init)]
            for rec in pool.map(jobs):
                knowledge.append(rec)
            archive = ParetoArchive()
            for rec in knowledge:
                archive.insert(rec)
            ref = reference_point(knowledge)
            hv_initial = archive.hypervolume(ref)
            log.info("initial population: %d records, hv %.6g", len(knowledge), hv_initial)

        for t in range(start, cfg.iters + 1):
            rng = np.random.default_rng([cfg.seed, 1, t])
            seen = knowledge.keys()
            tree = None
            try:
                tree = RegressionTree(cfg.tree_params).fit(knowledge.records)
            except FitError:
                if cfg.mode != "random" and not cfg.use_true_f1:
                    raise
            stats = {"scored": 0}
            if cfg.mode == "random":
                cands = _sample_unseen(cfg.k, gcfg, rng, set(seen), transform)
            else:
                score = _scorer(evaluator, tree, cfg, f2_seed, stats)
                genomes = _sample_unseen(cfg.n_new, gcfg, rng, set(), transform)
                pop = Population(genomes, score(genomes))
                for _ in range(cfg.gens - 1):
                    pop = nsga2_generation(pop, score, variation, rng, transform)
                cands = []
                picked = set(seen)
                for i in sort_order(pop.points):
                    g = pop.genomes[i]
                    if g.key not in picked:
                        picked.add(g.key)
                        cands.append(g)
                    if len(cands) == cfg.k:
                        break
                if len(cands) < cfg.k:
                    cands += _sample_unseen(cfg.k - len(cands), gcfg, rng, picked, transform)
            base = len(knowledge)
            jobs = [(g, cfg.e_eval, evaluation_seed(cfg.seed, base + i)) for i, g in enumerate(cands)]
            new = pool.map(jobs)
            for rec in new:
                knowledge.append(rec)
                archive.insert(rec)
            hv_history.append(archive.hypervolume(ref))
            if tree is not None:
                r = predictor_report(tree, new) if len(new) >= 3 else (0.0, True)
                rho_history.append((float(r[0]), bool(r[1])))
            else:
                rho_history.append((0.0, True))
            scored.append(stats["scored"])
            trained.append(len(new))
            summary = {
                "iteration": t,
                "records": len(knowledge),
                "hypervolume": hv_history[-1],
                "rho": rho_history[-1][0],
                "archive": len(archive),
            }
            log.info("iteration %(iteration)d: %(records)d records, hv %(hypervolume).6g", summary)
            if ckpt is not None:
                ckpt.save(
                    {
                        "config": cfg.to_dict(),
                        "iteration": t,
                        "n_records": len(knowledge),
                        "archive": [archive_record(r) for r in archive.members],
                        "reference": list(ref),
                        "hv_initial": hv_initial,
                        "hv": hv_history,
                        "rho": [list(r) for r in rho_history],
                        "scored": scored,
                        "trained": trained,
                    },
                    tree,
                )
            if progress is not None:
                progress(summary)

    best = archive.best()
    final = None
    if best is not None:
        final = evaluator.evaluate(best.genome, cfg.e_trn, final_seed(cfg.seed))
    return SearchResult(
        cfg, best, final, archive, knowledge, ref, hv_initial, hv_history, rho_history, scored, trained
    )


def run_random_baseline(cfg: SearchConfig, evaluator, **kwargs) -> SearchResult:
    """Same budget as :func:`run_search`, but the ``k`` candidates per iteration are uniform random."""
    return run_search(cfg.replace(mode="random"), evaluator, **kwargs)


def archive_record(rec: EvaluationRecord) -> dict:
    """Record fields that are reproducible across runs (no wall time)."""
    d = rec.to_dict()
    d.pop("wall_time", None)
    return d
