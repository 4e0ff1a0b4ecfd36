"""Model-definition parsing, depth/width scaling and whole-model execution.

The definition format is a small line-oriented subset of YAML::

    nc: 4
    depth_multiple: 0.33
    width_multiple: 0.50
    anchors:
      - [10,13, 16,30, 33,23]
    backbone:
      - [-1, 1, Conv, [64, 6, 2, 2]]
    head:
      - [[17, 20, 23], 1, Detect, [nc, anchors]]

Items are indented by exactly two spaces, ``#`` starts a comment, and list
elements are integers, floats, bare identifiers or nested lists.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import blocks as B
from . import tensor as T

Element = Union[int, float, str, list]

MODULE_KINDS = {
    "Conv": "ConvBnAct",
    "ConvBnAct": "ConvBnAct",
    "Bottleneck": "Bottleneck",
    "C3": "C3",
    "C3Ghost": "C3Ghost",
    "C3Faster": "C3Faster",
    "SPPF": "SPPF",
    "GhostConv": "GhostConv",
    "GhostBottleneck": "GhostBottleneck",
    "PConv": "PConv",
    "FasterBlock": "FasterBlock",
    "Upsample": "Upsample",
    "Concat": "Concat",
    "Detect": "Detect",
}

# (min, max) number of args per module name
ARITY = {
    "ConvBnAct": (1, 4), "Bottleneck": (1, 2), "C3": (1, 2), "C3Ghost": (1, 2),
    "C3Faster": (1, 2), "SPPF": (1, 2), "GhostConv": (1, 3), "GhostBottleneck": (1, 3),
    "PConv": (1, 2), "FasterBlock": (1, 1), "Upsample": (2, 2), "Concat": (1, 1),
    "Detect": (2, 2),
}

SCALAR_KEYS = ("nc", "depth_multiple", "width_multiple")
SECTION_KEYS = ("anchors", "backbone", "head")
MAX_NESTING = 8
# Resource limits; a config past these is treated as malformed rather than
# allowed to allocate without bound.
MAX_REPEATS = 100
MAX_CLASSES = 10_000
MAX_CHANNELS = 16_384
MAX_KERNEL = 31


class ConfigError(ValueError):
    """Lexical or structural error in a model definition, with 1-based position."""

    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        self.reason = message
        super().__init__(f"line {line}, col {col}: {message}")


class GraphError(ValueError):
    """A parsed configuration cannot be turned into a valid graph."""

    def __init__(self, message: str, layer: Optional[int] = None, line: Optional[int] = None,
                 col: Optional[int] = None):
        self.layer = layer
        self.line = line
        self.col = col
        where = []
        if layer is not None:
            where.append(f"layer {layer}")
        if line is not None:
            where.append(f"line {line}" + (f", col {col}" if col is not None else ""))
        super().__init__((f"{', '.join(where)}: " if where else "") + message)


@dataclass
class LayerEntry:
    source: Union[int, List[int]]
    repeats: int
    module: str
    args: List[Element]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass
class ModelConfig:
    nc: int
    depth_multiple: float
    width_multiple: float
    anchors: List[List[int]]
    backbone: List[LayerEntry]
    head: List[LayerEntry]

    @property
    def layers(self) -> List[LayerEntry]:
        return self.backbone + self.head


# ---------------------------------------------------------------------------
# lexer / parser

_TOKEN = re.compile(
    r"(?P<ws>[ ]+)"
    r"|(?P<punct>[\[\],])"
    r"|(?P<num>-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_.]*)"
)


def _tokenize(text: str, line: int, col0: int):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ConfigError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), col0 + pos))
        pos = m.end()
    return tokens


def _number(tok: str):
    if re.fullmatch(r"-?\d+", tok):
        return int(tok)
    return float(tok)


def _parse_list(text: str, line: int, col0: int) -> list:
    tokens = _tokenize(text, line, col0)
    end_col = col0 + len(text)
    if not tokens or tokens[0][1] != "[":
        col = tokens[0][2] if tokens else col0
        raise ConfigError("expected '['", line, col)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else ("eol", "", end_col)

    def parse_bracketed(depth):
        nonlocal pos
        if depth > MAX_NESTING:
            raise ConfigError("lists nested too deeply", line, peek()[2])
        pos += 1  # '['
        items = []
        while True:
            kind, val, col = peek()
            if val == "[":
                items.append(parse_bracketed(depth + 1))
            elif kind == "num":
                items.append(_number(val))
                pos += 1
            elif kind == "ident":
                items.append(val)
                pos += 1
            elif kind == "eol":
                raise ConfigError("unterminated list", line, col)
            else:
                raise ConfigError(f"expected list element, got {val!r}", line, col)
            kind, val, col = peek()
            if val == ",":
                pos += 1
            elif val == "]":
                pos += 1
                return items
            elif kind == "eol":
                raise ConfigError("unterminated list", line, col)
            else:
                raise ConfigError(f"expected ',' or ']', got {val!r}", line, col)

    result = parse_bracketed(1)
    if pos != len(tokens):
        raise ConfigError(f"trailing input {tokens[pos][1]!r}", line, tokens[pos][2])
    return result


def _strip_comment(raw: str) -> str:
    i = raw.find("#")
    return (raw if i < 0 else raw[:i]).rstrip()


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _layer_entry(items: list, line: int, col: int) -> LayerEntry:
    if len(items) != 4:
        raise ConfigError(f"layer needs [from, repeats, module, args], got {len(items)} elements", line, col)
    source, repeats, module, args = items
    if isinstance(source, list):
        if not source or not all(_is_int(s) for s in source):
            raise ConfigError("'from' list must hold integers", line, col)
    elif not _is_int(source):
        raise ConfigError("'from' must be an integer or list of integers", line, col)
    if not _is_int(repeats) or not 1 <= repeats <= MAX_REPEATS:
        raise ConfigError(f"repeats must be an integer in [1, {MAX_REPEATS}]", line, col)
    if not isinstance(module, str) or module not in MODULE_KINDS:
        raise ConfigError(f"unknown module {module!r}", line, col)
    if not isinstance(args, list):
        raise ConfigError("args must be a bracketed list", line, col)
    lo, hi = ARITY[MODULE_KINDS[module]]
    if not lo <= len(args) <= hi:
        raise ConfigError(f"{module} takes {lo}..{hi} args, got {len(args)}", line, col)
    return LayerEntry(source, repeats, module, args, line, col)


def parse_model_config(text: str) -> ModelConfig:
    """Parse a model definition. Raises :class:`ConfigError` on any defect."""
    if not isinstance(text, str):
        raise ConfigError("model definition must be text", 1, 1)
    scalars: Dict[str, Union[int, float]] = {}
    sections: Dict[str, List[Tuple[list, int, int]]] = {}
    seen: Dict[str, int] = {}
    current: Optional[str] = None
    lines = text.split("\n")
    for ln, raw in enumerate(lines, start=1):
        if raw.endswith("\r"):
            raw = raw[:-1]
        body = _strip_comment(raw)
        if not body:
            continue
        if "\t" in body:
            raise ConfigError("tab characters are not allowed", ln, body.index("\t") + 1)
        indent = len(body) - len(body.lstrip(" "))
        if indent == 0:
            m = re.match(r"([A-Za-z_][A-Za-z0-9_]*)\s*:(.*)$", body)
            if m is None:
                raise ConfigError("expected 'key: value' or 'section:'", ln, 1)
            key, rest = m.group(1), m.group(2).strip()
            if key not in SCALAR_KEYS + SECTION_KEYS:
                raise ConfigError(f"unknown key {key!r}", ln, 1)
            if key in seen:
                raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", ln, 1)
            seen[key] = ln
            vcol = body.index(":") + 2 + (len(m.group(2)) - len(m.group(2).lstrip()))
            if key in SECTION_KEYS:
                if rest:
                    raise ConfigError(f"section {key!r} takes no inline value", ln, vcol)
                sections[key] = []
                current = key
            else:
                current = None
                if not re.fullmatch(r"-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?", rest):
                    raise ConfigError(f"{key} needs a numeric value", ln, vcol)
                val = _number(rest)
                if key == "nc":
                    if not _is_int(val) or not 1 <= val <= MAX_CLASSES:
                        raise ConfigError(f"nc must be an integer in [1, {MAX_CLASSES}]", ln, vcol)
                else:
                    val = float(val)
                    if not (0.0 < val <= 2.0):
                        raise ConfigError(f"{key} must lie in (0, 2]", ln, vcol)
                scalars[key] = val
            continue
        if indent != 2:
            raise ConfigError("items must be indented by exactly two spaces", ln, indent + 1)
        if current is None:
            raise ConfigError("list item outside of a section", ln, 3)
        if not body.startswith("  - "):
            raise ConfigError("expected '- ' item marker", ln, 3)
        content = body[4:]
        lead = len(content) - len(content.lstrip(" "))
        col = 5 + lead
        sections[current].append((_parse_list(content.strip(), ln, col), ln, col))

    eof = (len(lines) + 1, 1)
    for key in SCALAR_KEYS + SECTION_KEYS:
        if key not in seen:
            raise ConfigError(f"missing required key {key}", *eof)
    for key in SECTION_KEYS:
        if not sections[key]:
            raise ConfigError(f"section {key!r} has no items", seen[key], 1)

    anchors = []
    for items, ln, col in sections["anchors"]:
        if len(items) != 2 * B.NUM_ANCHORS or not all(_is_int(v) and v > 0 for v in items):
            raise ConfigError(f"anchor scale needs {2 * B.NUM_ANCHORS} positive integers", ln, col)
        anchors.append(items)
    if len(anchors) != 3:
        raise ConfigError(f"expected 3 anchor scales, got {len(anchors)}", seen["anchors"], 1)

    backbone = [_layer_entry(items, ln, col) for items, ln, col in sections["backbone"]]
    head = [_layer_entry(items, ln, col) for items, ln, col in sections["head"]]
    return ModelConfig(scalars["nc"], scalars["depth_multiple"], scalars["width_multiple"],
                       anchors, backbone, head)


def _fmt(v) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_model_config(cfg: ModelConfig) -> str:
    """Canonical text form; ``parse(serialize(cfg)) == cfg``."""
    out = [f"nc: {cfg.nc}", f"depth_multiple: {cfg.depth_multiple!r}",
           f"width_multiple: {cfg.width_multiple!r}", "anchors:"]
    out += [f"  - {_fmt(a)}" for a in cfg.anchors]
    for name, entries in (("backbone", cfg.backbone), ("head", cfg.head)):
        out.append(f"{name}:")
        out += [f"  - {_fmt([e.source, e.repeats, e.module, e.args])}" for e in entries]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# built-in definitions

BUILTINS = ("baseline", "fostc3net")


def builtin_text(name: str) -> str:
    if name not in BUILTINS:
        raise GraphError(f"unknown builtin model {name!r}; choose from {', '.join(BUILTINS)}")
    return resources.files("yololite.models").joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_model_config(ref: str, nc: Optional[int] = None) -> ModelConfig:
    """Load ``builtin:NAME`` or a path; optionally override the class count."""
    if ref.startswith("builtin:"):
        text = builtin_text(ref.split(":", 1)[1])
    else:
        with open(ref, encoding="utf-8") as fh:
            text = fh.read()
    cfg = parse_model_config(text)
    if nc is not None:
        if not 1 <= nc <= MAX_CLASSES:
            raise GraphError(f"nc must lie in [1, {MAX_CLASSES}], got {nc}")
        cfg.nc = nc
    return cfg


# ---------------------------------------------------------------------------
# scaling

def _round_half_away(x: float) -> int:
    return int(Decimal(repr(x)).to_integral_value(rounding=ROUND_HALF_UP))


def scale_width(c: int, width_multiple: float) -> int:
    return max(8 * _round_half_away(c * width_multiple / 8), 8)


def scale_depth(n: int, depth_multiple: float) -> int:
    if n == 1:
        return 1
    return max(_round_half_away(n * depth_multiple), 1)


# ---------------------------------------------------------------------------
# graph

INPUT = -1


@dataclass(frozen=True)
class LayerNode:
    index: int
    inputs: Tuple[int, ...]
    specs: Tuple[B.BlockSpec, ...]
    c_out: int
    module: str
    line: Optional[int] = None
    col: Optional[int] = None

    @property
    def kind(self) -> str:
        return self.specs[0].kind

    @property
    def c_in(self) -> int:
        return self.specs[0].c_in


@dataclass(frozen=True)
class ModelGraph:
    nodes: Tuple[LayerNode, ...]
    detect_index: int
    nc: int
    anchors: Tuple[Tuple[int, ...], ...]
    in_channels: int = 3

    @property
    def detect(self) -> LayerNode:
        return self.nodes[self.detect_index]


_IDENT_VALUES = {"true": True, "True": True, "false": False, "False": False, "None": None}


def _resolve_arg(v, cfg: ModelConfig, ctx):
    if isinstance(v, list):
        return [_resolve_arg(x, cfg, ctx) for x in v]
    if isinstance(v, str):
        if v == "nc":
            return cfg.nc
        if v == "anchors":
            return [list(a) for a in cfg.anchors]
        if v in _IDENT_VALUES:
            return _IDENT_VALUES[v]
        if v == "nearest":
            return v
        raise GraphError(f"unknown identifier {v!r} in args", *ctx)
    return v


def _int_arg(args, i, default, name, ctx, minimum=1, allow_none=False, maximum=MAX_KERNEL):
    v = args[i] if i < len(args) else default
    if v is None and allow_none:
        return None
    if not _is_int(v) or not minimum <= v <= maximum:
        raise GraphError(f"{name} must be an integer in [{minimum}, {maximum}], got {v!r}", *ctx)
    return v


def _bool_arg(args, i, default, name, ctx):
    v = args[i] if i < len(args) else default
    if not isinstance(v, bool):
        raise GraphError(f"{name} must be true/false, got {v!r}", *ctx)
    return v


def build_graph(cfg: ModelConfig) -> ModelGraph:
    """Resolve references, scale channels/depths and validate the layer DAG."""
    layers = cfg.layers
    if not layers:
        raise GraphError("model has no layers")
    nodes: List[LayerNode] = []
    channels: List[int] = []
    gw, gd = cfg.width_multiple, cfg.depth_multiple
    for i, entry in enumerate(layers):
        ctx = (i, entry.line or None, entry.col or None)
        kind = MODULE_KINDS.get(entry.module)
        if kind is None:
            raise GraphError(f"unknown module {entry.module!r}", *ctx)
        srcs = entry.source if isinstance(entry.source, list) else [entry.source]
        resolved = []
        for f in srcs:
            if not _is_int(f):
                raise GraphError(f"bad 'from' value {f!r}", *ctx)
            r = i + f if f < 0 else f
            if r == INPUT and i == 0 and f == -1:
                resolved.append(INPUT)
            elif 0 <= r < i:
                resolved.append(r)
            else:
                raise GraphError(f"'from' {f} resolves to {r}, outside [0, {i})", *ctx)
        in_ch = [3 if r == INPUT else channels[r] for r in resolved]
        args = _resolve_arg(entry.args, cfg, ctx)
        if kind not in ("Concat", "Detect") and len(resolved) != 1:
            raise GraphError(f"{entry.module} takes exactly one input", *ctx)
        n = scale_depth(entry.repeats, gd)
        c1 = in_ch[0]
        try:
            specs = _make_specs(kind, c1, in_ch, args, n, cfg, gw, ctx)
        except B.BlockError as exc:
            raise GraphError(str(exc), *ctx) from None
        c_out = specs[-1].c_out
        nodes.append(LayerNode(i, tuple(resolved), tuple(specs), c_out, entry.module, *ctx[1:]))
        channels.append(c_out)

    detects = [n.index for n in nodes if n.kind == "Detect"]
    if len(detects) != 1 or detects[0] != len(nodes) - 1:
        last = layers[-1]
        raise GraphError("exactly one Detect layer is required and it must be last",
                         len(layers) - 1, last.line or None, last.col or None)
    return ModelGraph(tuple(nodes), detects[0], cfg.nc, tuple(tuple(a) for a in cfg.anchors))


def _make_specs(kind, c1, in_ch, args, n, cfg, gw, ctx) -> List[B.BlockSpec]:
    if kind == "Concat":
        dim = _int_arg(args, 0, 1, "concat dim", ctx, minimum=0)
        return [B.make_spec("Concat", sum(in_ch), sum(in_ch), in_channels=in_ch, dim=dim)]
    if kind == "Detect":
        nc = _int_arg(args, 0, None, "nc", ctx, maximum=MAX_CLASSES)
        anchors = args[1]
        if not isinstance(anchors, list) or not all(
                isinstance(a, list) and all(_is_int(x) for x in a) for a in anchors):
            raise GraphError("Detect anchors must be a list of integer lists", *ctx)
        co = B.NUM_ANCHORS * (nc + 5)
        return [B.make_spec("Detect", sum(in_ch), co, in_channels=in_ch, nc=nc,
                            anchors=tuple(tuple(a) for a in anchors))]
    if kind == "Upsample":
        scale = _int_arg(args, 0, 2, "upsample scale", ctx)
        if args[1] != "nearest":
            raise GraphError(f"upsample mode must be nearest, got {args[1]!r}", *ctx)
        return [B.make_spec("Upsample", c1, c1, scale=scale)] * n

    c2 = _int_arg(args, 0, None, "output channels", ctx, maximum=MAX_CHANNELS)
    c2 = scale_width(c2, gw)
    if c2 > MAX_CHANNELS:
        raise GraphError(f"scaled width {c2} exceeds {MAX_CHANNELS}", *ctx)
    if kind in B.C3_FAMILY or kind == "Bottleneck":
        shortcut = _bool_arg(args, 1, True, "shortcut", ctx)
        if kind == "Bottleneck":
            return _repeat(kind, c1, c2, n, shortcut=shortcut)
        return [B.make_spec(kind, c1, c2, n=n, shortcut=shortcut)]
    if kind == "ConvBnAct":
        k = _int_arg(args, 1, 1, "kernel", ctx)
        s = _int_arg(args, 2, 1, "stride", ctx)
        p = _int_arg(args, 3, None, "padding", ctx, minimum=0, allow_none=True)
        return _repeat(kind, c1, c2, n, k=k, s=s, p=p)
    if kind == "SPPF":
        return _repeat(kind, c1, c2, n, k=_int_arg(args, 1, 5, "pool kernel", ctx))
    if kind == "GhostConv":
        return _repeat(kind, c1, c2, n, k=_int_arg(args, 1, 1, "kernel", ctx),
                       s=_int_arg(args, 2, 1, "stride", ctx))
    if kind == "GhostBottleneck":
        return _repeat(kind, c1, c2, n, k=_int_arg(args, 1, 3, "kernel", ctx),
                       s=_int_arg(args, 2, 1, "stride", ctx))
    if kind == "PConv":
        return _repeat(kind, c1, c2, n, k=_int_arg(args, 1, 3, "kernel", ctx))
    return _repeat(kind, c1, c2, n)


def _repeat(kind, c1, c2, n, **hyper) -> List[B.BlockSpec]:
    specs = [B.make_spec(kind, c1, c2, **hyper)]
    for _ in range(n - 1):
        specs.append(B.make_spec(kind, c2, c2, **hyper))
    return specs


# ---------------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class NodeTrace:
    index: int
    in_shapes: Tuple[Tuple[int, int, int], ...]
    out_shapes: Tuple[Tuple[int, int, int], ...]
    macs: int


def _check_input_hw(h: int, w: int) -> None:
    if h < 32 or w < 32 or h % 32 or w % 32:
        raise GraphError(f"input size {h}x{w} must be positive multiples of 32")


def trace_graph(graph: ModelGraph, input_hw: Tuple[int, int]) -> List[NodeTrace]:
    """Symbolic shape propagation and MAC count per node."""
    h, w = input_hw
    _check_input_hw(h, w)
    shapes: Dict[int, Tuple[int, int, int]] = {INPUT: (graph.in_channels, h, w)}
    traces = []
    for node in graph.nodes:
        ins = [shapes[r] for r in node.inputs]
        macs = 0
        cur = ins
        try:
            for spec in node.specs:
                tr = B.trace_block(spec, cur)
                macs += tr.macs
                cur = tr.outputs
        except B.BlockError as exc:
            raise GraphError(str(exc), node.index, node.line, node.col) from None
        shapes[node.index] = cur[0]
        traces.append(NodeTrace(node.index, tuple(ins), tuple(cur), macs))
    return traces


def detect_strides(graph: ModelGraph) -> List[int]:
    tr = trace_graph(graph, (256, 256))[graph.detect_index]
    return [256 // s[1] for s in tr.out_shapes]


def init_graph_weights(graph: ModelGraph, seed: int = 0) -> List[List[B.BlockWeights]]:
    rng = np.random.default_rng(seed)
    return [[B.init_weights(spec, rng) for spec in node.specs] for node in graph.nodes]


def forward_graph(graph: ModelGraph, weights, x: np.ndarray) -> List[np.ndarray]:
    """Run the full model and return Detect's raw per-scale maps."""
    x = T.as_tensor(x)
    n, c, h, w = x.shape
    if c != graph.in_channels:
        raise GraphError(f"input has {c} channels, model expects {graph.in_channels}")
    _check_input_hw(h, w)
    if len(weights) != len(graph.nodes):
        raise GraphError(f"weights for {len(weights)} nodes, graph has {len(graph.nodes)}")
    last_use: Dict[int, int] = {}
    for node in graph.nodes:
        for r in node.inputs:
            last_use[r] = node.index
    cache: Dict[int, np.ndarray] = {INPUT: x}
    out = None
    for node, node_w in zip(graph.nodes, weights):
        cur = [cache[r] for r in node.inputs]
        try:
            for spec, bw in zip(node.specs, node_w):
                out = B.block_forward(spec, bw, cur)
                cur = out if isinstance(out, list) else [out]
        except (B.BlockError, T.ShapeError) as exc:
            raise GraphError(str(exc), node.index, node.line, node.col) from None
        for r in node.inputs:
            if last_use.get(r) == node.index:
                cache.pop(r, None)
        if node.index in last_use:
            cache[node.index] = cur[0]
    return out
