"""Parameter and FLOPs accounting for whole model graphs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

from . import blocks as B
from .graph import ModelGraph, trace_graph


@dataclass(frozen=True)
class CostRow:
    i: int
    kind: str
    c_in: int
    c_out: int
    out_h: int
    out_w: int
    params: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    input_shape: Tuple[int, int]
    rows: Tuple[CostRow, ...]
    params: int
    macs: int

    @property
    def gflops(self) -> float:
        return 2 * self.macs / 1e9

    def to_json(self) -> Dict:
        return {
            "input": list(self.input_shape),
            "rows": [asdict(r) for r in self.rows],
            "totals": {"params": self.params, "macs": self.macs, "gflops": self.gflops},
        }

    @classmethod
    def from_json(cls, doc: Dict) -> "CostReport":
        rows = tuple(CostRow(**r) for r in doc["rows"])
        t = doc["totals"]
        return cls(tuple(doc["input"]), rows, int(t["params"]), int(t["macs"]))

    def render(self) -> str:
        head = f"{'i':>3}  {'kind':<16}{'c_in':>6}{'c_out':>7}{'out':>11}{'params':>12}{'MACs':>15}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.i:>3}  {r.kind:<16}{r.c_in:>6}{r.c_out:>7}{f'{r.out_h}x{r.out_w}':>11}"
                         f"{r.params:>12,}{r.macs:>15,}")
        lines.append("-" * len(head))
        h, w = self.input_shape
        lines.append(f"input {h}x{w}: {self.params:,} params ({self.params / 1e6:.3f}M), "
                     f"{self.macs:,} MACs, {self.gflops:.2f} GFLOPs")
        return "\n".join(lines)


def count_model(graph: ModelGraph, input_hw: Tuple[int, int] = (640, 640)) -> CostReport:
    """Per-node parameter and MAC counts; no tensors are allocated."""
    traces = trace_graph(graph, input_hw)
    rows = []
    for node, tr in zip(graph.nodes, traces):
        params = sum(B.block_params(s) for s in node.specs)
        c, h, w = tr.out_shapes[0]
        rows.append(CostRow(node.index, node.kind, node.c_in, node.c_out, h, w, params, tr.macs))
    return CostReport(tuple(input_hw), tuple(rows),
                      sum(r.params for r in rows), sum(r.macs for r in rows))


def _reduction(a: float, b: float) -> float:
    """Percentage reduction going from a to b (positive when b is smaller)."""
    return 0.0 if a == 0 else 100.0 * (a - b) / a


@dataclass
class ReportDiff:
    rows: List[Dict] = field(default_factory=list)
    unmatched: List[int] = field(default_factory=list)
    params_a: int = 0
    params_b: int = 0
    gflops_a: float = 0.0
    gflops_b: float = 0.0

    @property
    def params_delta(self) -> int:
        return self.params_b - self.params_a

    @property
    def gflops_delta(self) -> float:
        return self.gflops_b - self.gflops_a

    @property
    def params_reduction(self) -> float:
        return _reduction(self.params_a, self.params_b)

    @property
    def gflops_reduction(self) -> float:
        return _reduction(self.gflops_a, self.gflops_b)

    def to_json(self) -> Dict:
        return {
            "rows": self.rows,
            "unmatched": self.unmatched,
            "totals": {
                "params": [self.params_a, self.params_b, self.params_delta],
                "gflops": [self.gflops_a, self.gflops_b, self.gflops_delta],
                "params_reduction_pct": round(self.params_reduction, 2),
                "gflops_reduction_pct": round(self.gflops_reduction, 2),
            },
        }

    def render(self) -> str:
        lines = [f"{'i':>3}  {'kind a':<16}{'kind b':<16}{'d params':>12}{'d MACs':>15}"]
        for r in self.rows:
            if r["d_params"] or r["d_macs"] or r["kind_a"] != r["kind_b"]:
                lines.append(f"{r['i']:>3}  {r['kind_a']:<16}{r['kind_b']:<16}"
                             f"{r['d_params']:>+12,}{r['d_macs']:>+15,}")
        for i in self.unmatched:
            lines.append(f"{i:>3}  (present in one report only)")
        lines.append(f"params: {self.params_a:,} -> {self.params_b:,} "
                     f"(reduction {self.params_reduction:.2f}%)")
        lines.append(f"GFLOPs: {self.gflops_a:.2f} -> {self.gflops_b:.2f} "
                     f"(reduction {self.gflops_reduction:.2f}%)")
        return "\n".join(lines)


def diff_reports(a: CostReport, b: CostReport) -> ReportDiff:
    """Align two reports by node index and compute deltas (b minus a)."""
    d = ReportDiff(params_a=a.params, params_b=b.params, gflops_a=a.gflops, gflops_b=b.gflops)
    rows_b = {r.i: r for r in b.rows}
    rows_a = {r.i: r for r in a.rows}
    for ra in a.rows:
        rb = rows_b.get(ra.i)
        if rb is None:
            d.unmatched.append(ra.i)
            continue
        d.rows.append({"i": ra.i, "kind_a": ra.kind, "kind_b": rb.kind,
                       "d_params": rb.params - ra.params, "d_macs": rb.macs - ra.macs})
    d.unmatched += [i for i in rows_b if i not in rows_a]
    return d

