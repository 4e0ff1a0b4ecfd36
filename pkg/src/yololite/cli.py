"""Command-line entry point: ``yololite <command> [flags]``.

Exit status: 0 on success, 1 on invalid input, 2 when an ``--assert`` band or
gradient tolerance is not met.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import cost, graph, loss, metrics
from . import tensor as T

GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _model_flags(p, name="--model", default="builtin:baseline"):
    p.add_argument(name, default=default, help="path or builtin:NAME")


def _common(p, imgsz=640):
    p.add_argument("--nc", type=int, default=None, help="override class count")
    p.add_argument("--imgsz", type=int, default=imgsz)
    p.add_argument("--json", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def _wiou_flags(p):
    p.add_argument("--loss", choices=loss.LOSS_KINDS, default="wiou_v3")
    p.add_argument("--alpha", type=float, default=1.9)
    p.add_argument("--delta", type=float, default=3.0)
    p.add_argument("--momentum", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="yololite", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="parameter/FLOPs report for one model")
    p.add_argument("model_pos", nargs="?", metavar="MODEL", help="same as --model")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("diff", help="compare the cost of two models")
    _model_flags(p, "--a", "builtin:baseline")
    _model_flags(p, "--b", "builtin:fostc3net")
    p.add_argument("pair", nargs="*", metavar="MODEL", help="positional A [B], overriding --a/--b")
    _common(p)
    p.add_argument("--assert", dest="asserts", nargs="+", default=[], metavar="SPEC",
                   help="bands such as params:-26.61%%±4 gflops:-13.09%%±4")

    p = sub.add_parser("forward", help="random-weight forward pass smoke run")
    _model_flags(p)
    _common(p, imgsz=64)
    p.add_argument("--conf", type=float, default=metrics.DEFAULT_CONF)
    p.add_argument("--nms-iou", type=float, default=metrics.DEFAULT_NMS_IOU)
    p.add_argument("--out", type=Path, default=None, help="directory for FTNSR1 output maps")

    p = sub.add_parser("gradcheck", help="closed-form vs finite-difference gradients")
    _wiou_flags(p)
    p.add_argument("--trials", type=int, default=1000)

    p = sub.add_parser("toytrain", help="box-regression toy trainer (CSV trajectory)")
    _wiou_flags(p)
    p.add_argument("--steps", type=int, default=loss.MIXTURE_STEPS)
    p.add_argument("--lr", type=float, default=loss.MIXTURE_LR)

    p = sub.add_parser("eval", help="Precision/Recall/mAP over label and prediction dirs")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--preds", type=Path, required=True)
    p.add_argument("--nc", type=int, default=None)
    p.add_argument("--conf", type=float, default=None, help="drop predictions at or below this score")
    p.add_argument("--nms-iou", type=float, default=None, help="apply class-aware NMS per image")
    p.add_argument("--json", action="store_true")
    return ap


# ---------------------------------------------------------------------------

_ASSERT = re.compile(r"^(params|gflops|macs):([+-]?\d+(?:\.\d+)?)%(?:±|\+-|\+/-)(\d+(?:\.\d+)?)$")


def parse_assert(spec: str):
    """``params:-26.61%±4`` -> ("params", -26.61, 4.0); change is relative, in percent."""
    m = _ASSERT.match(spec.strip())
    if m is None:
        raise UsageError(f"bad --assert spec {spec!r}; expected e.g. params:-26.61%±4")
    return m.group(1), float(m.group(2)), float(m.group(3))


def _change_pct(a: float, b: float) -> float:
    return 100.0 * (b - a) / a if a else 0.0


def _emit(args, payload, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _resolve(ref: str) -> str:
    # a bare builtin name is accepted unless a file of that name exists
    if ref in graph.BUILTINS and not Path(ref).exists():
        return f"builtin:{ref}"
    return ref


def _load_graph(ref: str, nc: Optional[int]):
    return graph.build_graph(graph.load_model_config(_resolve(ref), nc))


def cmd_analyze(args) -> int:
    if args.model_pos:
        args.model = args.model_pos
    t0 = time.perf_counter()
    report = cost.count_model(_load_graph(args.model, args.nc), (args.imgsz, args.imgsz))
    doc = report.to_json()
    doc["model"] = args.model
    doc["seconds"] = time.perf_counter() - t0
    _emit(args, doc, f"model {args.model}\n{report.render()}")
    return 0


def cmd_diff(args) -> int:
    if len(args.pair) > 2:
        raise UsageError("diff takes at most two positional models")
    if args.pair:
        args.a = args.pair[0]
    if len(args.pair) == 2:
        args.b = args.pair[1]
    hw = (args.imgsz, args.imgsz)
    asserts = [parse_assert(s) for s in args.asserts]
    ra = cost.count_model(_load_graph(args.a, args.nc), hw)
    rb = cost.count_model(_load_graph(args.b, args.nc), hw)
    d = cost.diff_reports(ra, rb)
    values = {"params": (ra.params, rb.params), "gflops": (ra.gflops, rb.gflops),
              "macs": (ra.macs, rb.macs)}
    results = []
    for key, target, tol in asserts:
        got = _change_pct(*values[key])
        results.append({"metric": key, "target_pct": target, "tol_pp": tol,
                        "observed_pct": round(got, 2), "pass": abs(got - target) <= tol})
    doc = d.to_json()
    doc["a"], doc["b"], doc["input"] = args.a, args.b, list(hw)
    doc["asserts"] = results
    lines = [f"{args.a} -> {args.b} at {hw[0]}x{hw[1]}", d.render()]
    for r in results:
        lines.append(f"assert {r['metric']}: observed {r['observed_pct']:+.2f}% "
                     f"target {r['target_pct']:+.2f}% ±{r['tol_pp']:g} -> "
                     f"{'PASS' if r['pass'] else 'FAIL'}")
    _emit(args, doc, "\n".join(lines))
    return 0 if all(r["pass"] for r in results) else 2


def cmd_forward(args) -> int:
    g = _load_graph(args.model, args.nc)
    weights = graph.init_graph_weights(g, args.seed)
    x = np.random.default_rng(args.seed).standard_normal((1, 3, args.imgsz, args.imgsz))
    t0 = time.perf_counter()
    maps = graph.forward_graph(g, weights, x.astype(np.float32))
    elapsed = time.perf_counter() - t0
    strides = graph.detect_strides(g)
    dets = metrics.nms(metrics.decode(maps, g.anchors, strides, args.conf, nc=g.nc), args.nms_iou)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(maps):
            T.write_tensor(args.out / f"p{i}.ftnsr", m)
    doc = {"model": args.model, "input": [1, 3, args.imgsz, args.imgsz],
           "outputs": [list(m.shape) for m in maps], "strides": strides,
           "detections": len(dets), "seconds": elapsed,
           "finite": bool(all(np.isfinite(m).all() for m in maps))}
    text = "\n".join([f"model {args.model}, input 1x3x{args.imgsz}x{args.imgsz}"]
                     + [f"  scale {i} (stride {s}): {tuple(m.shape)}"
                        for i, (m, s) in enumerate(zip(maps, strides))]
                     + [f"  {len(dets)} detections after decode+NMS, {elapsed:.2f}s"])
    _emit(args, doc, text)
    return 0


def _state(args) -> loss.WiouState:
    return loss.WiouState(momentum=args.momentum, alpha=args.alpha, delta=args.delta)


def cmd_gradcheck(args) -> int:
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    rep = loss.grad_check(args.loss, args.trials, 1e-4, args.seed, _state(args))
    ok = rep.max_rel_err < GRAD_TOL
    doc = rep.to_json()
    doc["pass"] = ok
    _emit(args, doc, f"{args.loss}: {rep.trials} trials, max rel err {rep.max_rel_err:.3e} "
                     f"(mean {rep.mean_rel_err:.3e}) -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_toytrain(args) -> int:
    targets, init, tiers = loss.outlier_mixture(args.seed)
    state = _state(args) if args.loss in ("wiou_v2", "wiou_v3") else None
    traj = loss.toy_train(targets, init, args.loss, args.steps, args.lr, state)
    summary = {}
    if args.steps:
        for name, idx in tiers.items():
            summary[name] = {"mean_r": float(traj.gains[-1, list(idx)].mean()),
                             "mean_iou": float(np.mean([loss.iou(traj.boxes[i], targets[i]) for i in idx]))}
    if args.json:
        print(json.dumps({"loss": args.loss, "steps": args.steps, "lr": args.lr,
                          "tiers": summary, "trajectory": traj.to_csv().splitlines()}, indent=2))
    else:
        sys.stdout.write(traj.to_csv())
        for name, s in summary.items():
            print(f"# {name}: mean r {s['mean_r']:.4f}, mean IoU {s['mean_iou']:.4f}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    gts, sizes = metrics.load_labels(args.labels)
    preds = metrics.load_predictions(args.preds, sizes)
    for img in list(preds):
        ds = preds[img]
        if args.conf is not None:
            ds = [d for d in ds if d.confidence > args.conf]
        if args.nms_iou is not None:
            ds = metrics.nms(ds, args.nms_iou)
        preds[img] = ds
    res = metrics.evaluate(preds, gts, nc=args.nc)
    conf, p, r, f1 = res.best_f1
    _emit(args, res.to_json(),
          f"images {len(set(gts) | set(preds))}, labels {res.n_gts}, predictions {res.n_preds}\n"
          f"P {res.precision:.4f}  R {res.recall:.4f}  mAP@.5 {res.map50:.4f}  "
          f"mAP@.5-.95 {res.map50_95:.4f}\n"
          f"max-F1 {f1:.4f} at conf {conf:.4f} (P {p:.4f}, R {r:.4f})")
    return 0


COMMANDS = {"analyze": cmd_analyze, "diff": cmd_diff, "forward": cmd_forward,
            "gradcheck": cmd_gradcheck, "toytrain": cmd_toytrain, "eval": cmd_eval}


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, graph.ConfigError, graph.GraphError, metrics.MetricsError,
            T.ShapeError, T.TensorFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
