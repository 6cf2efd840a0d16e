import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from modcomplete.graph import ItemGraph
from modcomplete.io import (
    FormatError,
    read_checkpoint,
    read_features,
    read_graph,
    read_interactions,
    read_mask,
    write_checkpoint,
    write_features,
    write_graph,
    write_mask,
)
from modcomplete.modality import apply_masking
from modcomplete.model.network import TrainConfig, init_params


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(1, 15), st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), max_size=30))
def test_graph_roundtrip(tmp_path, n, raw):
    edges = sorted({(min(a, b), max(a, b)) for a, b in raw if a != b and max(a, b) < n})
    g = ItemGraph.from_edges(n, edges)
    write_graph(tmp_path / "g.ggr", g)
    assert read_graph(tmp_path / "g.ggr") == g


def test_graph_bad_magic(tmp_path):
    (tmp_path / "x.ggr").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(FormatError, match="magic"):
        read_graph(tmp_path / "x.ggr")


def test_graph_truncated(tmp_path):
    write_graph(tmp_path / "g.ggr", ItemGraph.from_edges(3, [(0, 1)]))
    data = (tmp_path / "g.ggr").read_bytes()
    (tmp_path / "g.ggr").write_bytes(data[:-2])
    with pytest.raises(FormatError):
        read_graph(tmp_path / "g.ggr")


def test_features_roundtrip_f32(tmp_path, rng):
    mat = rng.standard_normal((7, 3))
    write_features(tmp_path / "f.gmc", mat)
    np.testing.assert_array_equal(read_features(tmp_path / "f.gmc"), mat.astype(np.float32))
    header = (tmp_path / "f.gmc").read_bytes()[:24]
    assert header[:4] == b"GMC1"
    assert int.from_bytes(header[8:16], "little") == 7


def test_mask_roundtrip(tmp_path):
    mask = apply_masking(30, 2, 0.4, 5)
    write_mask(tmp_path / "m.csv", mask, ["visual", "text"])
    back = read_mask(tmp_path / "m.csv", ["visual", "text"], 30)
    np.testing.assert_array_equal(back.observed, mask.observed)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "item_id,modality,observed"


def test_mask_bad_value_reports_line(tmp_path):
    (tmp_path / "m.csv").write_text("item_id,modality,observed\n0,visual,1\n0,text,7\n")
    with pytest.raises(FormatError, match=":3:"):
        read_mask(tmp_path / "m.csv", ["visual", "text"], 1)


def test_interactions_malformed_line(tmp_path):
    (tmp_path / "i.tsv").write_text("u1\t1\nu2 2\n")
    with pytest.raises(FormatError, match=":2:"):
        read_interactions(tmp_path / "i.tsv")


def test_interactions_empty_file(tmp_path):
    (tmp_path / "i.tsv").write_text("")
    with pytest.raises(ValueError):
        read_interactions(tmp_path / "i.tsv")


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = TrainConfig(d=8, k=3, heads=2, codebook_size=4, top_p=2)
    params = init_params(cfg, (5, 4), rng)
    write_checkpoint(tmp_path / "m.gmp", params, {"train_config": cfg.to_dict()})
    back, meta = read_checkpoint(tmp_path / "m.gmp")
    assert list(back) == list(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k].astype(np.float32))
    assert TrainConfig.from_dict(meta["train_config"]) == cfg
