"""Bounding-box regression losses with closed-form gradients.

All losses act on a single (pred, gt) pair of axis-aligned boxes in xyxy
form and return the loss value together with its gradient with respect to
the four predicted coordinates. Quantities that are treated as constants
during back-propagation (the CIoU trade-off weight, the WIoU distance
normalizer, the WIoU v2/v3 gains) are returned in ``LossValueGrad.detached``
so a numerical check can freeze exactly the same values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

EPS = 1e-9
LOSS_KINDS = ("iou", "ciou", "wiou_v1", "wiou_v2", "wiou_v3")

Grad = Tuple[float, float, float, float]


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    @classmethod
    def from_cxcywh(cls, cx, cy, w, h) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @property
    def w(self) -> float:
        return self.x2 - self.x1

    @property
    def h(self) -> float:
        return self.y2 - self.y1

    @property
    def cx(self) -> float:
        return (self.x1 + self.x2) / 2

    @property
    def cy(self) -> float:
        return (self.y1 + self.y2) / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def scaled(self, s: float) -> "BBox":
        return BBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)


@dataclass(frozen=True)
class LossValueGrad:
    value: float
    grad: Grad
    iou: float = 0.0
    detached: Dict[str, float] = field(default_factory=dict)


def enclosing(a: BBox, b: BBox) -> BBox:
    return BBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def iou(a: BBox, b: BBox) -> float:
    return _iou_grad(a, b)[0]


def _active(a: float, b: float) -> float:
    """Weight of the ``a`` side in ``max(a, b)``: 1, 0, or 1/2 on a tie."""
    return 1.0 if a > b else (0.5 if a == b else 0.0)


def _iou_grad(p: BBox, g: BBox) -> Tuple[float, Grad]:
    iw_raw = min(p.x2, g.x2) - max(p.x1, g.x1)
    ih_raw = min(p.y2, g.y2) - max(p.y1, g.y1)
    iw, ih = max(iw_raw, 0.0), max(ih_raw, 0.0)
    inter = iw * ih
    w, h = p.w, p.h
    union = w * h + g.area - inter + EPS
    value = inter / union
    if p == g:
        # a minimizer of 1 - IoU: zero is a valid subgradient, and it keeps an
        # exact fit from drifting through the EPS residual
        return value, (0.0, 0.0, 0.0, 0.0)

    # d(iw)/d(x1, x2), d(ih)/d(y1, y2); zero once the boxes stop overlapping.
    # Coinciding edges take the midpoint subgradient, which makes the gradient
    # vanish exactly at pred == gt.
    dix1 = -_active(p.x1, g.x1) if iw_raw > 0 else 0.0
    dix2 = _active(g.x2, p.x2) if iw_raw > 0 else 0.0
    diy1 = -_active(p.y1, g.y1) if ih_raw > 0 else 0.0
    diy2 = _active(g.y2, p.y2) if ih_raw > 0 else 0.0
    d_inter = (ih * dix1, iw * diy1, ih * dix2, iw * diy2)
    d_area = (-h, -w, h, w)
    grad = tuple(di / union - inter * (da - di) / union ** 2 for di, da in zip(d_inter, d_area))
    return value, grad


def _center_dist2(p: BBox, g: BBox) -> Tuple[float, Grad]:
    dx, dy = p.cx - g.cx, p.cy - g.cy
    return dx * dx + dy * dy, (dx, dy, dx, dy)


def _enclosing_diag2(p: BBox, g: BBox) -> Tuple[float, Grad]:
    cw = max(p.x2, g.x2) - min(p.x1, g.x1)
    ch = max(p.y2, g.y2) - min(p.y1, g.y1)
    grad = (
        -2 * cw * _active(g.x1, p.x1),
        -2 * ch * _active(g.y1, p.y1),
        2 * cw * _active(p.x2, g.x2),
        2 * ch * _active(p.y2, g.y2),
    )
    return cw * cw + ch * ch + EPS, grad


def iou_loss(pred: BBox, gt: BBox) -> LossValueGrad:
    v, d = _iou_grad(pred, gt)
    return LossValueGrad(1.0 - v, tuple(-x for x in d), v)


def ciou_loss(pred: BBox, gt: BBox, alpha_c: Optional[float] = None) -> LossValueGrad:
    """Complete-IoU loss; ``alpha_c`` (the aspect trade-off weight) is detached.

    Passing ``alpha_c`` freezes it instead of computing it from the pair.
    """
    v_iou, d_iou = _iou_grad(pred, gt)
    rho2, d_rho2 = _center_dist2(pred, gt)
    c2, d_c2 = _enclosing_diag2(pred, gt)

    w, h = pred.w, pred.h + EPS
    theta = math.atan(w / h)
    theta_gt = math.atan(gt.w / (gt.h + EPS))
    k = 4 / math.pi ** 2
    aspect = k * (theta_gt - theta) ** 2
    dv_dtheta = -2 * k * (theta_gt - theta)
    den = w * w + h * h
    dtheta_dw, dtheta_dh = h / den, -w / den
    d_aspect = (-dv_dtheta * dtheta_dw, -dv_dtheta * dtheta_dh,
                dv_dtheta * dtheta_dw, dv_dtheta * dtheta_dh)

    if alpha_c is None:
        alpha_c = aspect / ((1 - v_iou) + aspect + EPS)
    value = 1 - v_iou + rho2 / c2 + alpha_c * aspect
    grad = tuple(
        -di + dr / c2 - rho2 * dc / c2 ** 2 + alpha_c * da
        for di, dr, dc, da in zip(d_iou, d_rho2, d_c2, d_aspect)
    )
    return LossValueGrad(value, grad, v_iou, {"alpha_c": alpha_c})


def wiou_v1_loss(pred: BBox, gt: BBox, norm: Optional[float] = None) -> LossValueGrad:
    """Wise-IoU v1: ``exp(center_dist^2 / (Wg^2 + Hg^2)) * (1 - IoU)``.

    The enclosing-box normalizer ``Wg^2 + Hg^2`` is detached; pass ``norm``
    to freeze it.
    """
    v_iou, d_iou = _iou_grad(pred, gt)
    rho2, d_rho2 = _center_dist2(pred, gt)
    if norm is None:
        enc = enclosing(pred, gt)
        norm = enc.w ** 2 + enc.h ** 2 + EPS
    attn = math.exp(rho2 / norm)
    l_iou = 1 - v_iou
    value = attn * l_iou
    grad = tuple(attn * (dr / norm) * l_iou - attn * di for di, dr in zip(d_iou, d_rho2))
    return LossValueGrad(value, grad, v_iou, {"norm": norm})


@dataclass(frozen=True)
class WiouState:
    """Running mean of the IoU loss used to normalize the outlier degree."""

    running_mean: float = 1.0
    momentum: float = 0.01
    alpha: float = 1.9
    delta: float = 3.0
    update_count: int = 0

    def __post_init__(self):
        if not 0 < self.momentum < 1:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.alpha <= 1 or self.delta <= 0:
            raise ValueError(f"need alpha > 1 and delta > 0, got {self.alpha}, {self.delta}")

    def update(self, iou_loss_value: float) -> "WiouState":
        m = self.momentum
        return replace(self, running_mean=(1 - m) * self.running_mean + m * iou_loss_value,
                       update_count=self.update_count + 1)

    def outlier_degree(self, iou_loss_value: float) -> float:
        return iou_loss_value / (self.running_mean + EPS)


def focusing_gain(beta: float, alpha: float = 1.9, delta: float = 3.0) -> float:
    """Non-monotonic gain r = beta / (delta * alpha**(beta - delta))."""
    return beta / (delta * alpha ** (beta - delta))


def wiou_v3_loss(pred: BBox, gt: BBox, state: WiouState,
                 gain: Optional[float] = None, norm: Optional[float] = None):
    """Wise-IoU v3. Returns ``(LossValueGrad, updated_state)``.

    The outlier degree uses the running mean *before* this sample's update.
    """
    base = wiou_v1_loss(pred, gt, norm)
    l_iou = 1 - base.iou
    beta = state.outlier_degree(l_iou)
    if gain is None:
        gain = focusing_gain(beta, state.alpha, state.delta)
    out = LossValueGrad(gain * base.value, tuple(gain * g for g in base.grad), base.iou,
                        {"norm": base.detached["norm"], "gain": gain, "beta": beta})
    return out, state.update(l_iou)


def wiou_v2_loss(pred: BBox, gt: BBox, state: WiouState, gamma: float = 0.5,
                 gain: Optional[float] = None, norm: Optional[float] = None):
    """Wise-IoU v2 (monotonic focusing), kept for comparison runs."""
    base = wiou_v1_loss(pred, gt, norm)
    l_iou = 1 - base.iou
    if gain is None:
        gain = state.outlier_degree(l_iou) ** gamma
    out = LossValueGrad(gain * base.value, tuple(gain * g for g in base.grad), base.iou,
                        {"norm": base.detached["norm"], "gain": gain})
    return out, state.update(l_iou)


def evaluate_loss(kind: str, pred: BBox, gt: BBox, state: Optional[WiouState] = None):
    """Dispatch by name. Returns ``(LossValueGrad, state)``; state passes through unchanged
    for the stateless losses."""
    if kind == "iou":
        return iou_loss(pred, gt), state
    if kind == "ciou":
        return ciou_loss(pred, gt), state
    if kind == "wiou_v1":
        return wiou_v1_loss(pred, gt), state
    if kind == "wiou_v2":
        return wiou_v2_loss(pred, gt, state or WiouState())
    if kind == "wiou_v3":
        return wiou_v3_loss(pred, gt, state or WiouState())
    raise ValueError(f"unknown loss {kind!r}; expected one of {', '.join(LOSS_KINDS)}")


def _frozen_value(kind: str, gt: BBox, res: LossValueGrad) -> Callable[[BBox], float]:
    d = res.detached
    if kind == "iou":
        return lambda p: iou_loss(p, gt).value
    if kind == "ciou":
        return lambda p: ciou_loss(p, gt, alpha_c=d["alpha_c"]).value
    if kind == "wiou_v1":
        return lambda p: wiou_v1_loss(p, gt, norm=d["norm"]).value
    # v2/v3: frozen gain times frozen-normalizer v1
    return lambda p: d["gain"] * wiou_v1_loss(p, gt, norm=d["norm"]).value


def numerical_grad(f: Callable[[BBox], float], box: BBox, h: float = 1e-4) -> Grad:
    """Central finite differences over the four coordinates."""
    coords = list(box.as_tuple())
    out = []
    for i in range(4):
        hi, lo = list(coords), list(coords)
        hi[i] += h
        lo[i] -= h
        out.append((f(BBox(*hi)) - f(BBox(*lo))) / (2 * h))
    return tuple(out)


def random_pair(rng: np.random.Generator, min_iou: float = 0.01, margin: float = 1e-3,
                max_tries: int = 1000) -> Tuple[BBox, BBox]:
    """Random overlapping boxes on a unit-ish scale, away from every max/min kink."""
    for _ in range(max_tries):
        gw, gh = rng.uniform(0.3, 2.0, 2)
        gx, gy = rng.uniform(1.0, 3.0, 2)
        gt = BBox.from_cxcywh(gx, gy, gw, gh)
        pw, ph = gw * math.exp(rng.normal(0, 0.4)), gh * math.exp(rng.normal(0, 0.4))
        px, py = gx + rng.normal(0, 0.3 * gw), gy + rng.normal(0, 0.3 * gh)
        pred = BBox.from_cxcywh(px, py, pw, ph)
        gaps = (
            abs(pred.x1 - gt.x1), abs(pred.x2 - gt.x2), abs(pred.y1 - gt.y1), abs(pred.y2 - gt.y2),
            min(pred.x2, gt.x2) - max(pred.x1, gt.x1), min(pred.y2, gt.y2) - max(pred.y1, gt.y1),
        )
        if min(gaps) > margin and iou(pred, gt) > min_iou:
            return pred, gt
    raise RuntimeError("could not sample a non-degenerate box pair")


@dataclass
class GradCheckReport:
    loss: str
    trials: int
    h: float
    errors: List[float] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max(self.errors, default=0.0)

    @property
    def mean_rel_err(self) -> float:
        return float(np.mean(self.errors)) if self.errors else 0.0

    def to_json(self) -> Dict:
        return {"loss": self.loss, "trials": self.trials, "h": self.h,
                "max_rel_err": self.max_rel_err, "mean_rel_err": self.mean_rel_err}


def relative_error(analytic: Sequence[float], numeric: Sequence[float]) -> float:
    """Max coordinate error scaled by the larger gradient magnitude."""
    scale = max(max(abs(x) for x in analytic), max(abs(x) for x in numeric), 1e-12)
    return max(abs(a - n) for a, n in zip(analytic, numeric)) / scale


def grad_check(loss_kind: str, trials: int = 1000, h: float = 1e-4, seed: int = 0,
               state: Optional[WiouState] = None) -> GradCheckReport:
    """Compare closed-form gradients with central differences on random pairs.

    Detached quantities are taken from the analytic evaluation and held fixed
    while differencing. For the stateful losses the running mean evolves over
    the trials in order.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {loss_kind!r}")
    rng = np.random.default_rng(seed)
    report = GradCheckReport(loss_kind, trials, h)
    for _ in range(trials):
        pred, gt = random_pair(rng)
        res, state = evaluate_loss(loss_kind, pred, gt, state)
        num = numerical_grad(_frozen_value(loss_kind, gt, res), pred, h)
        report.errors.append(relative_error(res.grad, num))
    return report


# ---------------------------------------------------------------------------
# toy trainer

@dataclass
class Trajectory:
    loss: str
    mean_iou: List[float] = field(default_factory=list)
    mean_loss: List[float] = field(default_factory=list)
    mean_r: List[float] = field(default_factory=list)
    gains: Optional[np.ndarray] = None  # (steps, n_boxes)
    betas: Optional[np.ndarray] = None
    boxes: List[BBox] = field(default_factory=list)
    state: Optional[WiouState] = None

    def to_csv(self) -> str:
        rows = ["step,mean_iou,mean_loss,mean_r"]
        for i, (a, b, c) in enumerate(zip(self.mean_iou, self.mean_loss, self.mean_r), start=1):
            rows.append(f"{i},{a:.9g},{b:.9g},{c:.9g}")
        return "\n".join(rows) + "\n"


def toy_train(targets: Sequence[BBox], init: Sequence[BBox], loss_kind: str = "ciou",
              steps: int = 500, lr: float = 0.01, state: Optional[WiouState] = None) -> Trajectory:
    """Plain gradient descent on each box's corners.

    Each step evaluates every box in order (one shared WIoU state for v2/v3),
    records the means, then applies all updates.
    """
    if len(targets) != len(init):
        raise ValueError("targets and init must have the same length")
    if loss_kind in ("wiou_v2", "wiou_v3") and state is None:
        state = WiouState()
    boxes = list(init)
    n = len(boxes)
    traj = Trajectory(loss_kind, gains=np.ones((steps, n)), betas=np.zeros((steps, n)))
    for step in range(steps):
        ious, losses, new = [], [], []
        for j, (b, t) in enumerate(zip(boxes, targets)):
            res, state = evaluate_loss(loss_kind, b, t, state)
            ious.append(res.iou)
            losses.append(res.value)
            traj.gains[step, j] = res.detached.get("gain", 1.0)
            traj.betas[step, j] = res.detached.get("beta", np.nan)
            new.append(BBox(*(c - lr * g for c, g in zip(b.as_tuple(), res.grad))))
        boxes = new
        traj.mean_iou.append(float(np.mean(ious)) if n else 1.0)
        traj.mean_loss.append(float(np.mean(losses)) if n else 0.0)
        traj.mean_r.append(float(traj.gains[step].mean()) if n else 1.0)
    traj.boxes = boxes
    traj.state = state
    return traj


# Documented easy/moderate/outlier population used by the focusing demonstration.
# The non-outlier 90% splits into an easy tier (80%) and a moderately hard tier
# (10%). lr is small enough that the moderate tier is still converging at step
# 1000; once it fully converges its gain collapses along with its loss and
# there is nothing "moderately hard" left to compare against.
MIXTURE_TIERS = (("easy", 80, 0.02, 0.15), ("moderate", 10, 0.3, 0.6), ("outlier", 10, 1.5, 3.0))
MIXTURE_LR = 5e-4
MIXTURE_STEPS = 1000


def outlier_mixture(seed: int = 0):
    """Targets, initial boxes and tier index ranges for the focusing demo.

    Targets are roughly unit-sized; each initial box is its target shifted by
    a tier-specific multiple of the target size in a random direction.
    """
    rng = np.random.default_rng(seed)
    targets, init, tiers = [], [], {}
    for name, n, lo, hi in MIXTURE_TIERS:
        start = len(targets)
        for _ in range(n):
            w, h = rng.uniform(0.8, 1.2, 2)
            cx, cy = rng.uniform(0.0, 5.0, 2)
            ang, d = rng.uniform(0, 2 * np.pi), rng.uniform(lo, hi)
            targets.append(BBox.from_cxcywh(cx, cy, w, h))
            init.append(BBox.from_cxcywh(cx + d * np.cos(ang) * w, cy + d * np.sin(ang) * h, w, h))
        tiers[name] = range(start, len(targets))
    return targets, init, tiers
