"""Detection decoding, NMS and Precision / Recall / mAP evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .loss import EPS, BBox, iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_CONF = 0.25
DEFAULT_NMS_IOU = 0.45


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    confidence: float


@dataclass(frozen=True)
class GroundTruth:
    box: BBox
    class_id: int


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode(raw_maps: Sequence[np.ndarray], anchors: Sequence[Sequence[float]],
           strides: Sequence[int], conf_thresh: float = DEFAULT_CONF,
           nc: Optional[int] = None, na: int = 3) -> List[Detection]:
    """Turn raw Detect maps of one image into scored boxes.

    Each map is ``(1, na*(nc+5), h, w)`` with per-anchor channel layout
    ``tx, ty, tw, th, obj, cls_0..cls_{nc-1}``. ``anchors[i]`` is the flat
    ``[w0, h0, w1, h1, ...]`` list for scale ``i`` in pixels.
    """
    if not (len(raw_maps) == len(anchors) == len(strides)):
        raise MetricsError("raw_maps, anchors and strides must have equal length")
    dets: List[Detection] = []
    for fmap, anc, stride in zip(raw_maps, anchors, strides):
        fmap = np.asarray(fmap)
        if fmap.ndim != 4 or fmap.shape[0] != 1:
            raise MetricsError(f"expected a (1, C, h, w) map, got {fmap.shape}")
        _, c, h, w = fmap.shape
        no = c // na
        if c % na or no < 6 or (nc is not None and no != nc + 5):
            want = "na*(nc+5)" if nc is None else str(na * (nc + 5))
            raise MetricsError(f"map has {c} channels, expected {want}")
        if len(anc) != 2 * na:
            raise MetricsError(f"each scale needs {na} anchor pairs")
        p = _sigmoid(fmap[0].reshape(na, no, h, w))
        gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        for a in range(na):
            aw, ah = anc[2 * a], anc[2 * a + 1]
            cx = (2 * p[a, 0] - 0.5 + gx) * stride
            cy = (2 * p[a, 1] - 0.5 + gy) * stride
            bw = (2 * p[a, 2]) ** 2 * aw
            bh = (2 * p[a, 3]) ** 2 * ah
            cls = p[a, 5:]
            best = cls.argmax(axis=0)
            score = p[a, 4] * np.take_along_axis(cls, best[None], axis=0)[0]
            for y, x in zip(*np.nonzero(score > conf_thresh)):
                dets.append(Detection(BBox.from_cxcywh(cx[y, x], cy[y, x], bw[y, x], bh[y, x]),
                                      int(best[y, x]), float(score[y, x])))
    return dets


def _iou_matrix(boxes: np.ndarray) -> np.ndarray:
    x1, y1, x2, y2 = boxes.T
    area = (x2 - x1) * (y2 - y1)
    iw = np.clip(np.minimum(x2[:, None], x2[None]) - np.maximum(x1[:, None], x1[None]), 0, None)
    ih = np.clip(np.minimum(y2[:, None], y2[None]) - np.maximum(y1[:, None], y1[None]), 0, None)
    inter = iw * ih
    return inter / (area[:, None] + area[None] - inter + EPS)


def nms(dets: Sequence[Detection], iou_thresh: float = DEFAULT_NMS_IOU) -> List[Detection]:
    """Class-aware greedy NMS.

    Ordered by confidence descending, ties broken by input position. A box is
    dropped if its IoU with an already kept box of the same class exceeds
    ``iou_thresh``.
    """
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    boxes = np.array([dets[i].box.as_tuple() for i in order], dtype=np.float64)
    cls = np.array([dets[i].class_id for i in order])
    ious = _iou_matrix(boxes)
    same = cls[:, None] == cls[None]
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for k in range(len(order)):
        if suppressed[k]:
            continue
        keep.append(order[k])
        suppressed |= same[k] & (ious[k] > iou_thresh)
    return [dets[i] for i in keep]


# ---------------------------------------------------------------------------
# evaluation

def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated AP (area under the monotone precision envelope)."""
    if len(recall) == 0:
        return 0.0
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


@dataclass
class EvalResult:
    classes: List[int]
    thresholds: Tuple[float, ...]
    ap: Dict[int, List[float]]
    precision: float
    recall: float
    n_preds: int
    n_gts: int
    pr_curve: List[Tuple[float, float, float]] = field(default_factory=list)
    best_f1: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def map_at(self, t: float) -> float:
        if not self.classes:
            return 0.0
        j = self.thresholds.index(t)
        return float(np.mean([self.ap[c][j] for c in self.classes]))

    @property
    def map50(self) -> float:
        return self.map_at(0.5) if 0.5 in self.thresholds else 0.0

    @property
    def map50_95(self) -> float:
        if not self.classes:
            return 0.0
        return float(np.mean([np.mean(self.ap[c]) for c in self.classes]))

    def to_json(self) -> Dict:
        conf, p, r, f1 = self.best_f1
        return {
            "precision": self.precision, "recall": self.recall,
            "map50": self.map50, "map50_95": self.map50_95,
            "n_preds": self.n_preds, "n_gts": self.n_gts,
            "per_class_ap": {str(c): self.ap[c] for c in self.classes},
            "thresholds": list(self.thresholds),
            "best_f1": {"conf": conf, "precision": p, "recall": r, "f1": f1},
            "pr_curve": [list(x) for x in self.pr_curve],
        }


def _match(preds_by_image, gts_by_image, order, cls: int, t: float) -> Dict[Tuple[str, int], bool]:
    """Greedy matching for one class/threshold; returns TP flag per (image, pred index)."""
    used = {img: [False] * len(g) for img, g in gts_by_image.items()}
    flags = {}
    for img, j in order:
        d = preds_by_image[img][j]
        if d.class_id != cls:
            continue
        best, best_k = -1.0, -1
        for k, g in enumerate(gts_by_image.get(img, ())):
            if g.class_id != cls or used[img][k]:
                continue
            v = iou(d.box, g.box)
            if v >= t and v > best:
                best, best_k = v, k
        if best_k >= 0:
            used[img][best_k] = True
        flags[(img, j)] = best_k >= 0
    return flags


def evaluate(preds_by_image: Mapping[str, Sequence[Detection]],
             gts_by_image: Mapping[str, Sequence[GroundTruth]],
             iou_thresholds: Sequence[float] = IOU_THRESHOLDS,
             nc: Optional[int] = None) -> EvalResult:
    """Per-class AP at each IoU threshold plus Precision/Recall at IoU 0.5.

    Predictions are ranked by confidence; ties go to the lexicographically
    smaller image key, then the earlier prediction. Classes without ground
    truth are left out of the mAP mean.
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    for src in (preds_by_image, gts_by_image):
        for img, items in src.items():
            for it in items:
                if it.class_id < 0 or (nc is not None and it.class_id >= nc):
                    raise MetricsError(f"class id {it.class_id} out of range in image {img!r}")
    gts = {img: list(g) for img, g in gts_by_image.items()}
    preds = {img: list(p) for img, p in preds_by_image.items()}
    order = sorted(((img, j) for img, ps in preds.items() for j in range(len(ps))),
                   key=lambda k: (-preds[k[0]][k[1]].confidence, k[0], k[1]))
    n_gt_cls: Dict[int, int] = {}
    for g in gts.values():
        for x in g:
            n_gt_cls[x.class_id] = n_gt_cls.get(x.class_id, 0) + 1
    classes = sorted(n_gt_cls)
    pred_classes = sorted({preds[i][j].class_id for i, j in order})

    ap: Dict[int, List[float]] = {c: [] for c in classes}
    for t in thresholds:
        for c in classes:
            flags = _match(preds, gts, order, c, t)
            tp = np.array([flags[k] for k in order if k in flags], dtype=float)
            ctp = np.cumsum(tp)
            rec = ctp / n_gt_cls[c]
            prec = ctp / np.arange(1, len(tp) + 1) if len(tp) else tp
            ap[c].append(average_precision(rec, prec))

    # operating point at IoU 0.5 over every prediction, all classes pooled
    tp50: Dict[Tuple[str, int], bool] = {}
    for c in pred_classes:
        tp50.update(_match(preds, gts, order, c, 0.5))
    n_preds, n_gts = len(order), sum(n_gt_cls.values())
    tp_seq = np.array([tp50.get(k, False) for k in order], dtype=float)
    ctp = np.cumsum(tp_seq)
    curve = []
    best = (0.0, 0.0, 0.0, 0.0)
    for i, k in enumerate(order):
        p = ctp[i] / (i + 1)
        r = ctp[i] / n_gts if n_gts else 0.0
        conf = preds[k[0]][k[1]].confidence
        curve.append((conf, float(p), float(r)))
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        if f1 > best[3]:
            best = (conf, float(p), float(r), float(f1))
    precision = float(ctp[-1] / n_preds) if n_preds else 0.0
    recall = float(ctp[-1] / n_gts) if n_preds and n_gts else 0.0
    return EvalResult(classes, thresholds, ap, precision, recall, n_preds, n_gts, curve, best)


# ---------------------------------------------------------------------------
# dataset files

def _read_size(lines, companion: Path):
    for ln in lines:
        parts = ln.split()
        if len(parts) == 2:
            return float(parts[0]), float(parts[1])
    if companion.exists():
        parts = companion.read_text().split()
        if len(parts) == 2:
            return float(parts[0]), float(parts[1])
    return 1.0, 1.0


def _to_box(cx, cy, w, h, W, H) -> BBox:
    return BBox.from_cxcywh(cx * W, cy * H, w * W, h * H)


def _data_lines(path: Path) -> List[str]:
    out = []
    for raw in path.read_text().splitlines():
        s = raw.split("#", 1)[0].strip()
        if s:
            out.append(s)
    return out


def load_labels(directory) -> Tuple[Dict[str, List[GroundTruth]], Dict[str, Tuple[float, float]]]:
    """Read ``<stem>.txt`` files of ``class cx cy w h`` (normalized) lines.

    Image size comes from a ``W H`` line in the same file or a
    ``<stem>.size`` companion; without either the boxes stay normalized
    (IoU is unaffected by per-axis scaling).
    """
    gts, sizes = {}, {}
    for path in sorted(Path(directory).glob("*.txt")):
        lines = _data_lines(path)
        W, H = _read_size(lines, path.with_suffix(".size"))
        items = []
        for n, ln in enumerate(lines, start=1):
            parts = ln.split()
            if len(parts) == 2:
                continue
            if len(parts) != 5:
                raise MetricsError(f"{path}:{n}: expected 'class cx cy w h'")
            c, vals = int(parts[0]), [float(v) for v in parts[1:]]
            items.append(GroundTruth(_to_box(*vals, W, H), c))
        gts[path.stem] = items
        sizes[path.stem] = (W, H)
    return gts, sizes


def load_predictions(directory, sizes: Mapping[str, Tuple[float, float]]) -> Dict[str, List[Detection]]:
    """Read ``<stem>.txt`` files of ``class conf cx cy w h`` (normalized) lines."""
    preds = {}
    for path in sorted(Path(directory).glob("*.txt")):
        lines = _data_lines(path)
        W, H = sizes.get(path.stem) or _read_size(lines, path.with_suffix(".size"))
        items = []
        for n, ln in enumerate(lines, start=1):
            parts = ln.split()
            if len(parts) == 2:
                continue
            if len(parts) != 6:
                raise MetricsError(f"{path}:{n}: expected 'class conf cx cy w h'")
            conf = float(parts[1])
            if not 0.0 <= conf <= 1.0:
                raise MetricsError(f"{path}:{n}: confidence {conf} outside [0, 1]")
            vals = [float(v) for v in parts[2:]]
            items.append(Detection(_to_box(*vals, W, H), int(parts[0]), conf))
        preds[path.stem] = items
    return preds
