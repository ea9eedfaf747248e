import json
from pathlib import Path

import pytest

from evosnn.cli import main
from evosnn.genome import GenomeConfig, genome_from_parts, random_genome, serialize

DATA = Path(__file__).parent / "data"
REPORTS = ("archive.jsonl", "hypervolume.csv", "predictor.csv", "pareto.csv", "best_genome.json", "result.json")


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"profile": "desk", "iters": 2, "n0": 10, "n_new": 6, "gens": 3, "k": 3, "e_trn": 2}))
    return p


def test_search_landscape_writes_reports(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    code = main(["search", "--config", str(small_config), "--evaluator", "landscape", "--out", str(out), "--workers", "1"])
    assert code == 0
    for name in REPORTS + ("manifest.json", "knowledge.jsonl"):
        assert (out / name).exists(), name
    text = capsys.readouterr().out
    assert "iteration 2:" in text and "best genome:" in text
    result = json.loads((out / "result.json").read_text())
    assert result["true_evaluations"] == 10 + 2 * 3


def test_rerun_from_manifest_is_byte_identical(tmp_path, small_config):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["search", "--config", str(small_config), "--evaluator", "landscape", "--noise", "0.05", "--out", str(a)])
    main(["search", "--from-manifest", str(a / "manifest.json"), "--out", str(b)])
    for name in REPORTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_eval_landscape_and_append(tmp_path, capsys):
    g = genome_from_parts(GenomeConfig(l=2, b=2, ops=1), [[1] * 5, [4] * 5], [[0, 1], [0, 0]])
    gp = tmp_path / "g.json"
    gp.write_text(serialize(g))
    ks = tmp_path / "k.jsonl"
    assert main(["eval", "--genome", str(gp), "--evaluator", "landscape", "--epochs", "1", "--append", str(ks)]) == 0
    rec = json.loads(capsys.readouterr().out)
    # 0.30 + (0.6 + 0.05)/2 - 0.30*min(0, .5) - 0.05*1 - 0 + 0 - 0 from the landscape definition
    assert rec["f1"] == pytest.approx(0.575)
    assert rec["f2"] == pytest.approx(100 * 0.95 * 2 / 4 + 5)
    assert len(ks.read_text().splitlines()) == 1


def test_eval_snn_runs(tmp_path, capsys):
    g = genome_from_parts(GenomeConfig(l=1, b=4, ops=1), [[4] * 5], [[0]])
    gp = tmp_path / "g.json"
    gp.write_text(serialize(g))
    assert main(["eval", "--genome", str(gp), "--epochs", "1", "--dataset", "blobs:100"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["degenerate"] is False and rec["f1"] > 0


def test_describe(tmp_path, capsys):
    gp = tmp_path / "g.json"
    gp.write_text(serialize(random_genome(GenomeConfig(), seed=0)))
    export = tmp_path / "graph.json"
    assert main(["describe", "--genome", str(gp), "--export", str(export)]) == 0
    assert "feedback edges:" in capsys.readouterr().out
    assert len(json.loads(export.read_text())["modules"]) == 4


def test_sample_respects_mode(capsys):
    assert main(["sample", "--seed", "3", "--mode", "CL-0"]) == 0
    obj = json.loads(capsys.readouterr().out)
    assert obj["genes"][-16:] == [0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0]


def test_structured_errors(tmp_path, capsys):
    assert main(["describe", "--genome", str(tmp_path / "nope.json")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFound"
    bad = tmp_path / "bad.json"
    bad.write_text('{"config": {"l": 1, "b": 2, "ops": 1}, "genes": [1, 1')
    assert main(["describe", "--genome", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "GenomeParseError" and "position" in err
    gp = tmp_path / "g.json"
    gp.write_text(serialize(random_genome(GenomeConfig(l=1, b=2), seed=0)))
    assert main(["eval", "--genome", str(gp), "--epochs", "0"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "InvalidArgument"


def test_eval_matches_golden_values(capsys):
    gold = json.loads((DATA / "golden_eval.json").read_text())
    args = ["eval", "--genome", str(DATA / "golden_genome.json"), "--dataset", gold["dataset"]]
    assert main(args + ["--epochs", str(gold["epochs"]), "--seed", str(gold["seed"])]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert abs(rec["f1"] - gold["f1"]) <= 1e-9
    assert abs(rec["f2"] - gold["f2"]) <= 1e-9


def test_eval_append_twice_grows_by_two(tmp_path):
    gp = tmp_path / "g.json"
    gp.write_text(serialize(random_genome(GenomeConfig(l=2, b=3), seed=1)))
    ks = tmp_path / "k.jsonl"
    for seed in ("0", "1"):
        main(["eval", "--genome", str(gp), "--evaluator", "landscape", "--seed", seed, "--append", str(ks)])
    assert len(ks.read_text().splitlines()) == 2


def test_eval_does_not_touch_genome_file(tmp_path):
    gp = tmp_path / "g.json"
    gp.write_text(serialize(random_genome(GenomeConfig(l=2, b=3), seed=1)))
    before = gp.read_bytes()
    main(["eval", "--genome", str(gp), "--evaluator", "landscape"])
    main(["describe", "--genome", str(gp), "--export", str(tmp_path / "x.json")])
    assert gp.read_bytes() == before


def test_resume_after_kill_matches_uninterrupted(tmp_path, small_config, monkeypatch):
    import evosnn.cli as cli

    full, cut = tmp_path / "full", tmp_path / "cut"
    base = ["search", "--config", str(small_config), "--evaluator", "landscape", "--noise", "0.05"]
    assert main(base + ["--out", str(full)]) == 0

    real = cli.run_search

    def killed(cfg, evaluator, **kw):
        def die(summary):
            if summary["iteration"] == 1:
                raise KeyboardInterrupt

        return real(cfg, evaluator, **{**kw, "progress": die})

    monkeypatch.setattr(cli, "run_search", killed)
    with pytest.raises(KeyboardInterrupt):
        main(base + ["--out", str(cut)])
    monkeypatch.setattr(cli, "run_search", real)
    assert main(base + ["--out", str(cut), "--resume"]) == 0
    for name in REPORTS + ("knowledge.jsonl",):
        if name == "knowledge.jsonl":
            strip = lambda p: [{k: v for k, v in json.loads(l).items() if k != "wall_time"} for l in p.read_text().splitlines()]
            assert strip(full / name) == strip(cut / name)
        else:
            assert (full / name).read_bytes() == (cut / name).read_bytes(), name


def test_hypervolume_csv_has_one_row_per_iteration(tmp_path, small_config):
    out = tmp_path / "run"
    main(["search", "--config", str(small_config), "--evaluator", "landscape", "--mode", "random", "--out", str(out)])
    rows = (out / "hypervolume.csv").read_text().splitlines()
    assert rows[0] == "iteration,hypervolume" and len(rows) == 1 + 2
