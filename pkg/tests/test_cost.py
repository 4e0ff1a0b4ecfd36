import json

import pytest

from yololite import blocks as B
from yololite import cost
from yololite import graph as G


def model(name, **overrides):
    return G.build_graph(G.load_model_config(f"builtin:{name}", **overrides))


@pytest.fixture(scope="module")
def reports():
    return {name: cost.count_model(model(name)) for name in G.BUILTINS}


def test_params_equal_sum_of_blocks(reports):
    g = model("baseline")
    assert reports["baseline"].params == sum(B.block_params(s) for n in g.nodes for s in n.specs)


@pytest.mark.parametrize("name", G.BUILTINS)
def test_brute_force_weight_count(name, reports):
    g = model(name)
    stored = sum(a.size for node_w in G.init_graph_weights(g, 0) for bw in node_w for a in bw.arrays())
    assert stored == reports[name].params


@pytest.mark.parametrize("name", G.BUILTINS)
def test_macs_homogeneous_degree_two(name, reports):
    r640 = reports[name]
    r1280 = cost.count_model(model(name), (1280, 1280))
    assert r1280.macs == 4 * r640.macs
    assert r1280.params == r640.params
    r320 = cost.count_model(model(name), (320, 320))
    assert r640.macs == 4 * r320.macs


def test_rectangular_input():
    r = cost.count_model(model("baseline"), (320, 640))
    assert 2 * r.macs == cost.count_model(model("baseline")).macs


def test_gflops_definition(reports):
    r = reports["baseline"]
    assert r.gflops == 2 * r.macs / 1e9


def test_json_schema_round_trip(reports):
    r = reports["fostc3net"]
    doc = json.loads(json.dumps(r.to_json()))
    assert set(doc) == {"input", "rows", "totals"}
    assert set(doc["totals"]) == {"params", "macs", "gflops"}
    assert {"i", "kind", "params", "macs"} <= set(doc["rows"][0])
    assert cost.CostReport.from_json(doc) == r


def test_render_mentions_totals(reports):
    text = reports["baseline"].render()
    assert "7,030,417" in text and "GFLOPs" in text


def test_diff_self_is_zero(reports):
    d = cost.diff_reports(reports["baseline"], reports["baseline"])
    assert all(r["d_params"] == 0 and r["d_macs"] == 0 for r in d.rows)
    assert d.params_delta == 0 and d.gflops_delta == 0 and not d.unmatched


def test_diff_localizes_changes(reports):
    d = cost.diff_reports(reports["baseline"], reports["fostc3net"])
    changed = [r["i"] for r in d.rows if r["d_params"]]
    assert changed == [2, 4, 6, 8, 13, 17, 20, 23]
    assert sum(r["d_params"] for r in d.rows) == d.params_delta


def test_diff_flags_unmatched(reports):
    a = reports["baseline"]
    short = cost.CostReport(a.input_shape, a.rows[:-2], a.params, a.macs)
    d = cost.diff_reports(a, short)
    assert d.unmatched == [23, 24]


def _swap_node(cfg, index, module):
    layers = cfg.layers
    nb = len(cfg.backbone)
    entry = layers[index]
    new = G.LayerEntry(entry.source, entry.repeats, module, entry.args)
    backbone, head = list(cfg.backbone), list(cfg.head)
    if index < nb:
        backbone[index] = new
    else:
        head[index - nb] = new
    return G.ModelConfig(cfg.nc, cfg.depth_multiple, cfg.width_multiple, cfg.anchors, backbone, head)


@pytest.mark.parametrize("index", [2, 4, 6, 8, 13, 17, 20, 23])
def test_ghost_swap_never_increases_params(index):
    cfg = G.load_model_config("builtin:baseline")
    before = cost.count_model(G.build_graph(cfg)).params
    after = cost.count_model(G.build_graph(_swap_node(cfg, index, "C3Ghost"))).params
    assert after < before


@pytest.mark.parametrize("hw", [(40, 40), (80, 80), (13, 29)])
def test_pconv_mac_ratio_exact(hw):
    for c in (16, 64, 256):
        p = B.block_macs(B.make_spec("PConv", c, c), hw)
        full = B.block_macs(B.conv_bn_act(c, c, k=3), hw)
        assert p * 16 == full
