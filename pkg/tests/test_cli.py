import csv
import json

import numpy as np
import pytest

from modcomplete.cli import main
from modcomplete.io import read_features, read_graph, write_features, write_graph
from modcomplete.synthetic import SyntheticSpec, generate_synthetic

TINY_MODEL = {"model": {"d": 8, "k": 3, "heads": 2, "codebook_size": 4, "top_p": 2, "epochs": 2, "batch_size": 16}}


def run(*argv):
    return main([str(a) for a in argv])


def test_build_graph_example(tmp_path, capsys):
    (tmp_path / "i.tsv").write_text("u0\t0\nu0\t1\nu1\t1\nu1\t2\n")
    assert run("build-graph", "--interactions", tmp_path / "i.tsv", "--out", tmp_path / "o") == 0
    assert "N=3 E=2" in capsys.readouterr().out
    g = read_graph(tmp_path / "o" / "graph.ggr")
    assert g.n == 3 and g.edge_count == 2
    first = (tmp_path / "o" / "graph.ggr").read_bytes()
    run("build-graph", "--interactions", tmp_path / "i.tsv", "--out", tmp_path / "o")
    assert (tmp_path / "o" / "graph.ggr").read_bytes() == first
    ids = (tmp_path / "o" / "item_ids.csv").read_text().splitlines()
    assert ids == ["dense_id,external_id", "0,0", "1,1", "2,2"]


def test_build_graph_empty_file(tmp_path, capsys):
    (tmp_path / "i.tsv").write_text("")
    assert run("build-graph", "--interactions", tmp_path / "i.tsv", "--out", tmp_path) == 2
    assert "error" in capsys.readouterr().err


def test_mask_forty_percent_summary(tmp_path, capsys):
    write_features(tmp_path / "a.gmc", np.zeros((7050, 2)))
    write_features(tmp_path / "b.gmc", np.zeros((7050, 3)))
    feats = ["--features", f"visual={tmp_path / 'a.gmc'}", "--features", f"text={tmp_path / 'b.gmc'}"]
    assert run("mask", *feats, "--rate", 0.4, "--seed", 3, "--out", tmp_path / "m") == 0
    assert "full=1410" in capsys.readouterr().out
    rows = list(csv.DictReader(open(tmp_path / "m" / "mask_summary.csv")))
    assert rows[0]["full"] == "1410"
    first = (tmp_path / "m" / "mask.csv").read_bytes()
    run("mask", *feats, "--rate", 0.4, "--seed", 3, "--out", tmp_path / "m")
    assert (tmp_path / "m" / "mask.csv").read_bytes() == first
    run("mask", *feats, "--rate", 0, "--out", tmp_path / "z")
    obs = [r["observed"] for r in csv.DictReader(open(tmp_path / "z" / "mask.csv"))]
    assert set(obs) == {"1"}


def test_mask_infeasible_rate(tmp_path, capsys):
    write_features(tmp_path / "a.gmc", np.zeros((10, 2)))
    assert run("mask", "--features", f"a={tmp_path / 'a.gmc'}", "--features", f"b={tmp_path / 'a.gmc'}",
               "--rate", 0.7, "--out", tmp_path) == 2
    assert "infeasible" in capsys.readouterr().err


def test_missing_upstream_named(tmp_path, capsys, small_files):
    d, feats = small_files
    assert run("retrieve", "--graph", d / "g.ggr", *feats, "--out", d / "r") == 2
    assert "--mask" in capsys.readouterr().err
    assert run("retrieve", "--graph", d / "absent.ggr", *feats, "--mask", d / "m.csv") == 2
    assert "absent.ggr" in capsys.readouterr().err


def test_features_flag_syntax(tmp_path, capsys):
    assert run("mask", "--features", "novalue", "--out", tmp_path) == 2
    assert "MODALITY=PATH" in capsys.readouterr().err


def _pipeline(d, feats, out, cfg_path):
    base = ["--graph", d / "g.ggr", *feats, "--mask", out / "mask" / "mask.csv", "--config", cfg_path]
    assert run("mask", *feats, "--rate", 0.4, "--seed", 1, "--out", out / "mask") == 0
    assert run("retrieve", *base, "--k", 5, "--t", 5, "--out", out / "ret") == 0
    assert run("train", *base, "--out", out / "train") == 0
    assert run("complete", *base, "--model", out / "train" / "model.gmp", "--out", out / "comp") == 0
    assert run("evaluate", *base, "--sample", 10, "--out", out / "eval") == 0


def _artifacts(out):
    skip = {"report.json"}
    return {
        p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file() and p.name not in skip
    }


def test_pipeline_determinism(small_files):
    d, feats = small_files
    (d / "cfg.json").write_text(json.dumps(TINY_MODEL))
    _pipeline(d, feats, d / "run", d / "cfg.json")
    a = _artifacts(d / "run")
    ra = json.loads((d / "run" / "eval" / "report.json").read_text())
    _pipeline(d, feats, d / "run", d / "cfg.json")
    b = _artifacts(d / "run")
    rb = json.loads((d / "run" / "eval" / "report.json").read_text())
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name
    ra.pop("timings"), rb.pop("timings")
    assert ra == rb


def test_pipeline_outputs(small_files):
    d, feats = small_files
    (d / "cfg.json").write_text(json.dumps(TINY_MODEL))
    out = d / "run"
    _pipeline(d, feats, out, d / "cfg.json")
    rows = list(csv.DictReader(open(out / "ret" / "retrieval.csv")))
    assert list(rows[0]) == ["query_id", "modality", "anchor_ids", "subgraph_ids", "phi"]
    for r in rows:
        assert set(r["anchor_ids"].split(";")) <= set(r["subgraph_ids"].split(";"))
    log = (out / "train" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,recon,usage,load,total,val_recon" and len(log) == 3
    report = json.loads((out / "eval" / "report.json").read_text())
    assert set(report) == {"relevance", "completion", "timings", "config_echo"}
    assert report["config_echo"]["run"]["retrieval"] == {}
    manifest = json.loads((out / "comp" / "manifest.json").read_text())
    assert manifest["seed"] == 0 and str(out / "train" / "model.gmp") in manifest["inputs"]
    assert "timestamp" not in json.dumps(manifest)


def test_complete_emits_text_vector(tmp_path):
    data = generate_synthetic(SyntheticSpec(n_clusters=2, items_per_cluster=15, dims=(6, 384), seed=1))
    write_graph(tmp_path / "g.ggr", data.graph)
    write_features(tmp_path / "v.gmc", data.store.features[0])
    write_features(tmp_path / "t.gmc", data.store.features[1])
    (tmp_path / "m.csv").write_text(
        "item_id,modality,observed\n" + "".join(f"{i},text,{0 if i == 4 else 1}\n" for i in range(30))
    )
    (tmp_path / "cfg.json").write_text(json.dumps(TINY_MODEL))
    base = ["--graph", tmp_path / "g.ggr", "--features", f"visual={tmp_path / 'v.gmc'}",
            "--features", f"text={tmp_path / 't.gmc'}", "--mask", tmp_path / "m.csv", "--config", tmp_path / "cfg.json"]
    assert run("train", *base, "--out", tmp_path / "t") == 0
    assert run("complete", *base, "--model", tmp_path / "t" / "model.gmp", "--out", tmp_path / "c") == 0
    rows = list(csv.DictReader(open(tmp_path / "c" / "completions.csv")))
    assert rows == [{"item_id": "4", "modality": "text", "row": "0", "dim": "384"}]
    assert read_features(tmp_path / "c" / "completions_text.gmc").shape == (1, 384)
    filled = read_features(tmp_path / "c" / "completed_text.gmc")
    np.testing.assert_array_equal(filled[5], data.store.features[1][5].astype(np.float32))


def test_config_file_overridden_by_flags(small_files):
    d, feats = small_files
    (d / "cfg.json").write_text(json.dumps({"masking": {"rate": 0.2}, "seed": 4}))
    assert run("mask", *feats, "--config", d / "cfg.json", "--rate", 0.4, "--out", d / "m") == 0
    manifest = json.loads((d / "m" / "manifest.json").read_text())
    assert manifest["config"]["masking"]["rate"] == 0.4 and manifest["seed"] == 4


def test_unknown_config_section(small_files, capsys):
    d, feats = small_files
    (d / "cfg.json").write_text(json.dumps({"bogus": {}}))
    assert run("mask", *feats, "--config", d / "cfg.json", "--out", d) == 2


@pytest.mark.parametrize("cmd", ["build-graph", "mask", "retrieve", "train", "complete", "evaluate", "bench"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
