import numpy as np
import pytest

from oracles import random_dataset, reference_evaluate, reference_nms
from yololite import metrics as M
from yololite.loss import BBox

ANCHORS = [[10, 13, 16, 30, 33, 23], [30, 61, 62, 45, 59, 119], [116, 90, 156, 198, 373, 326]]


def empty_maps(nc=4, sizes=((4, 4), (2, 2), (1, 1))):
    return [np.full((1, 3 * (nc + 5), h, w), -np.inf, np.float32) for h, w in sizes]


def test_decode_all_negative_is_empty():
    assert M.decode(empty_maps(), ANCHORS, [8, 16, 32], 0.25) == []


def test_decode_single_cell():
    maps = empty_maps()
    m = maps[0]
    m[0, 0:4, 0, 0] = 0.0     # tx, ty, tw, th for anchor 0
    m[0, 4, 0, 0] = np.inf    # objectness
    m[0, 5 + 2, 0, 0] = np.inf
    dets = M.decode(maps, ANCHORS, [8, 16, 32], 0.25, nc=4)
    assert len(dets) == 1
    d = dets[0]
    assert d.class_id == 2 and d.confidence == 1.0
    assert (d.box.cx, d.box.cy, d.box.w, d.box.h) == pytest.approx((4.0, 4.0, 10.0, 13.0))


def test_decode_scale_order_invariant():
    rng = np.random.default_rng(0)
    maps = [rng.standard_normal((1, 27, s, s)).astype(np.float32) for s in (4, 2, 1)]
    a = M.decode(maps, ANCHORS, [8, 16, 32], 0.1)
    b = M.decode(maps[::-1], ANCHORS[::-1], [32, 16, 8], 0.1)
    key = lambda d: (d.box.as_tuple(), d.class_id, d.confidence)
    assert sorted(map(key, a)) == sorted(map(key, b))


def test_decode_rejects_bad_channels():
    with pytest.raises(M.MetricsError):
        M.decode([np.zeros((1, 26, 2, 2))], ANCHORS[:1], [8], 0.25)
    with pytest.raises(M.MetricsError):
        M.decode([np.zeros((1, 27, 2, 2))], ANCHORS[:1], [8], 0.25, nc=3)


def det(x1, y1, x2, y2, c=0, conf=0.5):
    return M.Detection(BBox(x1, y1, x2, y2), c, conf)


def test_nms_examples():
    one = [det(0, 0, 1, 1)]
    assert M.nms(one, 0.45) == one
    # IoU 0.8: second box is 0.8 of the first's area and inside it
    a, b = det(0, 0, 10, 10, conf=0.9), det(0, 0, 10, 8, conf=0.8)
    assert M.nms([b, a], 0.45) == [a]
    other = det(0, 0, 10, 8, c=1, conf=0.8)
    assert M.nms([a, other], 0.45) == [a, other]


def random_dets(rng, n, nc=3):
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, 100, 2)
        w, h = rng.uniform(5, 30, 2)
        conf = float(rng.choice([0.3, 0.5, 0.7])) if rng.random() < 0.3 else float(rng.random())
        out.append(det(x, y, x + w, y + h, int(rng.integers(nc)), conf))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_nms_matches_reference(seed):
    rng = np.random.default_rng(seed)
    dets = random_dets(rng, 200)
    ref = reference_nms([(d.box.as_tuple(), d.class_id, d.confidence) for d in dets], 0.45)
    assert M.nms(dets, 0.45) == [dets[i] for i in ref]


def test_average_precision_simple():
    assert M.average_precision(np.array([0.5, 1.0]), np.array([1.0, 1.0])) == 1.0
    assert M.average_precision(np.array([]), np.array([])) == 0.0
    assert M.average_precision(np.array([0.0, 0.5]), np.array([0.0, 0.5])) == 0.25


def gt(x1, y1, x2, y2, c=0):
    return M.GroundTruth(BBox(x1, y1, x2, y2), c)


def test_single_pred_thresholds():
    # IoU 0.6 exactly: pred covers 6/10 of the gt and lies inside it
    res = M.evaluate({"a": [det(0, 0, 6, 10, conf=0.9)]}, {"a": [gt(0, 0, 10, 10)]})
    assert res.map_at(0.5) == 1.0 and res.map_at(0.75) == 0.0
    assert res.precision == 1.0 and res.recall == 1.0


def test_zero_predictions():
    res = M.evaluate({}, {"a": [gt(0, 0, 1, 1)]})
    assert (res.precision, res.recall, res.map50, res.map50_95) == (0.0, 0.0, 0.0, 0.0)


def test_class_out_of_range():
    with pytest.raises(M.MetricsError):
        M.evaluate({"a": [det(0, 0, 1, 1, c=5)]}, {"a": []}, nc=4)


def as_tuples(preds, gts):
    return ({k: [(d.box.as_tuple(), d.class_id, d.confidence) for d in v] for k, v in preds.items()},
            {k: [(g.box.as_tuple(), g.class_id) for g in v] for k, v in gts.items()})


@pytest.mark.parametrize("seed", range(10))
def test_evaluate_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    preds, gts = random_dataset(rng)
    res = M.evaluate(preds, gts)
    ref = reference_evaluate(*as_tuples(preds, gts), M.IOU_THRESHOLDS)
    assert res.classes == sorted(ref)
    for c in ref:
        assert res.ap[c] == pytest.approx(ref[c], abs=1e-12)
    assert res.map50_95 <= res.map50 + 1e-12


def test_perfect_predictions():
    rng = np.random.default_rng(11)
    _, gts = random_dataset(rng)
    preds = {k: [M.Detection(g.box, g.class_id, 1.0) for g in v] for k, v in gts.items()}
    res = M.evaluate(preds, gts)
    assert (res.precision, res.recall, res.map50, res.map50_95) == (1.0, 1.0, 1.0, 1.0)


def test_image_order_invariance():
    rng = np.random.default_rng(12)
    preds, gts = random_dataset(rng)
    a = M.evaluate(preds, gts)
    b = M.evaluate(dict(reversed(list(preds.items()))), dict(reversed(list(gts.items()))))
    assert a.ap == b.ap and a.precision == b.precision


def test_adding_confident_correct_prediction_never_lowers_ap():
    rng = np.random.default_rng(13)
    for _ in range(20):
        preds, gts = random_dataset(rng)
        before = M.evaluate(preds, gts, [0.5])
        new_gt = gt(500, 500, 520, 520, 0)
        gts2 = dict(gts)
        gts2["extra"] = [new_gt]
        preds2 = dict(preds)
        preds2["extra"] = [M.Detection(new_gt.box, 0, 1.0)]
        after = M.evaluate(preds2, gts2, [0.5])
        if 0 in before.ap:
            assert after.ap[0][0] >= before.ap[0][0] - 1e-12


def test_best_f1_and_curve():
    preds = {"a": [det(0, 0, 10, 10, conf=0.9), det(50, 50, 60, 60, conf=0.8)]}
    gts = {"a": [gt(0, 0, 10, 10), gt(20, 20, 30, 30)]}
    res = M.evaluate(preds, gts)
    assert res.pr_curve == [(0.9, 1.0, 0.5), (0.8, 0.5, 0.5)]
    assert res.best_f1 == pytest.approx((0.9, 1.0, 0.5, 2 / 3))
    assert res.precision == 0.5 and res.recall == 0.5


def test_dataset_loading(tmp_path):
    labels, preds = tmp_path / "labels", tmp_path / "preds"
    labels.mkdir()
    preds.mkdir()
    (labels / "a.txt").write_text("640 480\n0 0.5 0.5 0.25 0.5\n")
    (labels / "b.txt").write_text("1 0.1 0.1 0.1 0.1\n")
    (labels / "b.size").write_text("100 200\n")
    (preds / "a.txt").write_text("0 0.9 0.5 0.5 0.25 0.5\n")
    (preds / "b.txt").write_text("# nothing here\n")
    gts, sizes = M.load_labels(labels)
    assert sizes == {"a": (640.0, 480.0), "b": (100.0, 200.0)}
    assert gts["a"][0].box == BBox.from_cxcywh(320, 240, 160, 240)
    p = M.load_predictions(preds, sizes)
    assert p["b"] == [] and p["a"][0].confidence == 0.9
    res = M.evaluate(p, gts)
    assert res.ap[0][0] == 1.0 and res.ap[1][0] == 0.0


def test_dataset_errors(tmp_path):
    (tmp_path / "a.txt").write_text("0 0.5 0.5\n")
    with pytest.raises(M.MetricsError, match="a.txt:1"):
        M.load_labels(tmp_path)
