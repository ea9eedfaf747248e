import json

import numpy as np
import pytest

from evosnn.evaluation import EvaluationRecord
from evosnn.genome import ConfigError, GenomeConfig, random_genome
from evosnn.landscape import SyntheticLandscape
from evosnn.motifs import decode, graph_stats
from evosnn.search import (
    ParetoArchive,
    SearchConfig,
    ablation_transform,
    evaluation_budget,
    reference_point,
    run_random_baseline,
    run_search,
)

SMALL = dict(n0=12, iters=3, n_new=8, gens=4, e_eval=1, e_trn=2, k=3, l=3, b=6)


def test_paper_budget_ratio():
    b = evaluation_budget(SearchConfig())
    assert b["predicted_per_iteration"] == 2400 and b["trained_per_iteration"] == 10
    assert b["ratio"] == 240


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        SearchConfig(k=100)
    with pytest.raises(ConfigError):
        SearchConfig(mode="XX")
    with pytest.raises(ConfigError):
        SearchConfig.from_dict({"bogus": 1})
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"profile": "desk", "iters": 2}))
    assert SearchConfig.load(p) == SearchConfig.desk(iters=2)
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="line 1"):
        SearchConfig.load(p)


@pytest.mark.parametrize("mode", ["full", "random", "LI", "CL-0"])
def test_bookkeeping(mode):
    cfg = SearchConfig(**SMALL, mode=mode)
    res = run_search(cfg, SyntheticLandscape())
    assert len(res.knowledge) == cfg.n0 + cfg.iters * cfg.k
    assert res.trained_per_iteration == [cfg.k] * cfg.iters
    expected = 0 if mode == "random" else cfg.n_new * cfg.gens
    assert res.scored_per_iteration == [expected] * cfg.iters
    assert len(res.knowledge.keys()) == len(res.knowledge)
    assert len(res.hv_history) == cfg.iters


def test_hypervolume_history_nondecreasing():
    res = run_search(SearchConfig(**SMALL, seed=4), SyntheticLandscape(noise=0.02))
    hv = [res.hv_initial] + res.hv_history
    assert all(a <= b + 1e-12 for a, b in zip(hv, hv[1:]))


def test_deterministic():
    a = run_search(SearchConfig(**SMALL, seed=2), SyntheticLandscape())
    b = run_search(SearchConfig(**SMALL, seed=2), SyntheticLandscape())
    assert [r.genome.key for r in a.knowledge] == [r.genome.key for r in b.knowledge]
    assert a.hv_history == b.hv_history


class Interrupt(Exception):
    pass


def test_resume_matches_uninterrupted(tmp_path):
    cfg = SearchConfig(**SMALL, seed=1)
    full = run_search(cfg, SyntheticLandscape(), workdir=tmp_path / "a")

    def stop_after_two(summary):
        if summary["iteration"] == 2:
            raise Interrupt

    with pytest.raises(Interrupt):
        run_search(cfg, SyntheticLandscape(), workdir=tmp_path / "b", progress=stop_after_two)
    resumed = run_search(cfg, SyntheticLandscape(), workdir=tmp_path / "b", resume=True)
    assert [r.genome.key for r in resumed.knowledge] == [r.genome.key for r in full.knowledge]
    assert resumed.hv_history == full.hv_history
    for name in ("a", "b"):
        assert (tmp_path / name / "knowledge.jsonl").read_text().count("\n") == len(full.knowledge)


def test_resume_rejects_other_config(tmp_path):
    run_search(SearchConfig(**SMALL), SyntheticLandscape(), workdir=tmp_path)
    with pytest.raises(ConfigError):
        run_search(SearchConfig(**SMALL, seed=9), SyntheticLandscape(), workdir=tmp_path, resume=True)


def test_random_baseline_same_budget():
    cfg = SearchConfig(**SMALL)
    a = run_search(cfg, SyntheticLandscape())
    b = run_random_baseline(cfg, SyntheticLandscape())
    assert len(a.knowledge) == len(b.knowledge)
    # both start from the same initial population and reference point
    assert [r.genome.key for r in a.knowledge][: cfg.n0] == [r.genome.key for r in b.knowledge][: cfg.n0]
    assert a.reference == b.reference


@pytest.mark.parametrize("mode", ["FE", "FI", "FbI", "LI", "MI"])
def test_single_motif_clamp(mode):
    cfg = GenomeConfig()
    clamp = ablation_transform(mode, cfg)
    for s in range(50):
        stats = graph_stats(decode(clamp(random_genome(cfg, seed=s))))
        assert stats.motif_counts[mode] == 5 * cfg.l


def test_cl0_clamp():
    cfg = GenomeConfig()
    clamp = ablation_transform("CL-0", cfg)
    for s in range(50):
        net = decode(clamp(random_genome(cfg, seed=s)))
        assert [(e.src, e.dst) for e in net.global_edges] == [(0, 1), (1, 2), (2, 3)]


def test_archive_rules():
    g = [random_genome(GenomeConfig(l=1, b=2), seed=s) for s in range(4)]
    arc = ParetoArchive()
    assert arc.insert(EvaluationRecord(g[0], 1.0, 1.0, 1, 0))
    assert not arc.insert(EvaluationRecord(g[1], 1.0, 2.0, 1, 0))  # dominated
    assert not arc.insert(EvaluationRecord(g[2], 9.0, 9.0, 1, 0, degenerate=True))
    assert arc.insert(EvaluationRecord(g[3], 0.5, 0.5, 1, 0))
    assert [m.genome for m in arc.members] == [g[3]]
    assert arc.hypervolume((2.0, 2.0)) == 2.25
    assert arc.best().genome == g[3]


def test_reference_point_ignores_degenerate():
    g = random_genome(GenomeConfig(l=1, b=2), seed=0)
    recs = [EvaluationRecord(g, 1.0, 10.0, 1, 0), EvaluationRecord(g, 10.0, 1e9, 1, 0, degenerate=True)]
    assert reference_point(recs) == pytest.approx((1.1, 11.0))


def test_true_f1_mode_runs():
    cfg = SearchConfig(**{**SMALL, "l": 2, "b": 2, "ops": 1}, use_true_f1=True)
    res = run_search(cfg, SyntheticLandscape())
    assert res.best is not None and not res.best.degenerate
    assert np.isfinite(res.final.f1)


def test_worker_pool_matches_serial():
    cfg = SearchConfig(**SMALL, seed=3)
    a = run_search(cfg, SyntheticLandscape(noise=0.05), workers=1)
    b = run_search(cfg, SyntheticLandscape(noise=0.05), workers=2)
    assert [(r.genome.key, r.f1) for r in a.knowledge] == [(r.genome.key, r.f1) for r in b.knowledge]
