import numpy as np
import pytest

from yololite import graph as G

BASE = G.builtin_text("baseline")
VARIANT = G.builtin_text("fostc3net")


@pytest.fixture(scope="module")
def base_graph():
    return G.build_graph(G.parse_model_config(BASE))


@pytest.fixture(scope="module")
def variant_graph():
    return G.build_graph(G.parse_model_config(VARIANT))


def test_baseline_entry_counts():
    cfg = G.parse_model_config(BASE)
    assert len(cfg.backbone) == 10 and len(cfg.head) == 15
    assert cfg.nc == 4 and cfg.depth_multiple == 0.33 and cfg.width_multiple == 0.5
    assert cfg.anchors[0] == [10, 13, 16, 30, 33, 23]


def test_variant_is_kind_substitution_only():
    a, b = G.parse_model_config(BASE), G.parse_model_config(VARIANT)
    assert len(a.layers) == len(b.layers)
    for i, (x, y) in enumerate(zip(a.layers, b.layers)):
        assert (x.source, x.repeats, x.args) == (y.source, y.repeats, y.args)
        if x.module != y.module:
            assert x.module == "C3"
            assert y.module == ("C3Faster" if i < 10 else "C3Ghost")


@pytest.mark.parametrize("c,w,out", [(64, 0.5, 32), (1024, 0.5, 512), (128, 0.25, 32),
                                     (3, 0.5, 8), (20, 0.5, 8), (24, 0.5, 16), (40, 0.5, 24)])
def test_scale_width(c, w, out):
    assert G.scale_width(c, w) == out


def test_scale_width_identity():
    for c in range(8, 2049, 8):
        assert G.scale_width(c, 1.0) == c


@pytest.mark.parametrize("n,d,out", [(3, 0.33, 1), (6, 0.33, 2), (9, 0.33, 3), (1, 0.01, 1),
                                     (1, 2.0, 1), (3, 1.0, 3), (3, 0.5, 2), (2, 0.1, 1)])
def test_scale_depth(n, d, out):
    assert G.scale_depth(n, d) == out


def test_channel_plan(base_graph, variant_graph):
    n0, n9 = base_graph.nodes[0], base_graph.nodes[9]
    assert (n0.kind, n0.c_out) == ("ConvBnAct", 32)
    assert (n9.kind, n9.c_out) == ("SPPF", 512)
    assert base_graph.nodes[2].specs[0].hyper["n"] == 1
    assert base_graph.nodes[6].specs[0].hyper["n"] == 3
    assert len(base_graph.nodes) == len(variant_graph.nodes) == 25
    for a, b in zip(base_graph.nodes, variant_graph.nodes):
        assert (a.inputs, a.c_in, a.c_out) == (b.inputs, b.c_in, b.c_out)
    assert base_graph.detect.c_out == 27


def test_round_trip_fixed_point():
    for text in (BASE, VARIANT):
        cfg = G.parse_model_config(text)
        canon = G.serialize_model_config(cfg)
        again = G.parse_model_config(canon)
        assert again == cfg
        assert G.serialize_model_config(again) == canon


def test_nc_override():
    cfg = G.load_model_config("builtin:baseline", nc=80)
    assert G.build_graph(cfg).detect.c_out == 255


def test_load_from_path(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text(VARIANT)
    assert G.load_model_config(str(p)) == G.parse_model_config(VARIANT)


def drop_line(text, prefix):
    return "\n".join(ln for ln in text.splitlines() if not ln.startswith(prefix)) + "\n"


def test_missing_nc():
    with pytest.raises(G.ConfigError, match="missing required key nc"):
        G.parse_model_config(drop_line(BASE, "nc:"))


@pytest.mark.parametrize("old,new,what", [
    ("depth_multiple: 0.33", "depth_multiple: 0.33\nnc: 3", "duplicate"),
    ("nc: 4", "nc: four", None),
    ("nc: 4", "nc: 0", None),
    ("width_multiple: 0.50", "width_multiple: 2.5", None),
    ("  - [-1, 1, Conv, [128, 3, 2]]", "  - [-1, 1, Conv, [128, 3, 2]", None),
    ("  - [-1, 1, Conv, [128, 3, 2]]", "\t- [-1, 1, Conv, [128, 3, 2]]", "tab"),
    ("  - [-1, 1, Conv, [128, 3, 2]]", "   - [-1, 1, Conv, [128, 3, 2]]", None),
    ("nc: 4", "nc: 4\nstride: 8", "unknown"),
    ("[-1, 1, Conv, [128, 3, 2]]", "[-1, 1, Bogus, [128, 3, 2]]", "unknown module"),
    ("  - [10,13, 16,30, 33,23]  # P3/8", "  - [10,13, 16,30, 33]", None),
])
def test_parse_errors_carry_position(old, new, what):
    assert old in BASE
    with pytest.raises(G.ConfigError) as ei:
        G.parse_model_config(BASE.replace(old, new, 1))
    assert ei.value.line >= 1 and ei.value.col >= 1
    if what:
        assert what in ei.value.reason


@pytest.mark.parametrize("old,new", [
    ("[[-1, 6], 1, Concat, [1]]", "[[-1, 16], 1, Concat, [1]]"),
    ("[[17, 20, 23], 1, Detect, [nc, anchors]]", "[[17, 20], 1, Detect, [nc, anchors]]"),
    ("[-1, 1, SPPF, [1024, 5]]  # 9", "[-1, 1, SPPF, [1024, 5]]\n  - [-1, 1, Detect, [nc, anchors]]"),
])
def test_graph_errors(old, new):
    assert old in BASE
    cfg = G.parse_model_config(BASE.replace(old, new, 1))
    with pytest.raises(G.GraphError):
        G.build_graph(cfg)


@pytest.mark.parametrize("hw", [(65, 64), (64, 48), (16, 16)])
def test_bad_input_size(base_graph, hw):
    with pytest.raises(G.GraphError):
        G.trace_graph(base_graph, hw)
    with pytest.raises(G.GraphError):
        G.forward_graph(base_graph, G.init_graph_weights(base_graph),
                        np.zeros((1, 3) + hw, np.float32))


def test_strides(base_graph):
    assert G.detect_strides(base_graph) == [8, 16, 32]


@pytest.mark.parametrize("which", ["base_graph", "variant_graph"])
def test_forward_64_declared_channels(which, request):
    g = request.getfixturevalue(which)
    traces = G.trace_graph(g, (64, 64))
    outs = G.forward_graph(g, G.init_graph_weights(g, 0), np.zeros((2, 3, 64, 64), np.float32))
    assert [o.shape for o in outs] == [(2, 27, 8, 8), (2, 27, 4, 4), (2, 27, 2, 2)]
    for node, tr in zip(g.nodes, traces):
        if node.kind != "Detect":
            assert tr.out_shapes[0][0] == node.c_out


def test_every_node_output_matches_trace(base_graph):
    # run node by node and compare channel counts with the declared plan
    from yololite import blocks as B
    weights = G.init_graph_weights(base_graph, 1)
    cache = {G.INPUT: np.random.default_rng(0).standard_normal((1, 3, 64, 64)).astype(np.float32)}
    for node, ws in zip(base_graph.nodes, weights):
        cur = [cache[r] for r in node.inputs]
        for spec, w in zip(node.specs, ws):
            out = B.block_forward(spec, w, cur)
            cur = out if isinstance(out, list) else [out]
        cache[node.index] = cur[0]
        if node.kind != "Detect":
            assert cur[0].shape[1] == node.c_out
