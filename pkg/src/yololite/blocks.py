"""Block zoo: YOLOv5 baseline blocks plus Ghost and FasterNet replacements.

Each block is described by a :class:`BlockSpec` and expands into a
straight-line program of primitive steps (conv, bn, silu, maxpool, upsample,
slice, concat, add). The same expansion drives weight instantiation, the
forward pass and MAC counting. :func:`block_params` is computed separately
from closed-form per-kind formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from . import tensor as T

KINDS = (
    "ConvBnAct", "Bottleneck", "C3", "SPPF", "GhostConv", "GhostBottleneck",
    "C3Ghost", "PConv", "FasterBlock", "C3Faster", "Upsample", "Concat", "Detect",
)
C3_FAMILY = ("C3", "C3Ghost", "C3Faster")

GHOST_DW_KERNEL = 5
FASTER_EXPANSION = 2
NUM_ANCHORS = 3


class BlockError(ValueError):
    """A block specification violates one of its structural constraints."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


@dataclass(frozen=True, eq=False)
class BlockSpec:
    kind: str
    c_in: int
    c_out: int
    hyper: Dict = field(default_factory=dict)
    in_channels: Tuple[int, ...] = ()

    def __post_init__(self):
        if not self.in_channels:
            object.__setattr__(self, "in_channels", (self.c_in,))

    def __eq__(self, other):
        if not isinstance(other, BlockSpec):
            return NotImplemented
        return (self.kind, self.c_in, self.c_out, self.in_channels) == (
            other.kind, other.c_in, other.c_out, other.in_channels) and _hyper_key(
            self.hyper) == _hyper_key(other.hyper)

    def __hash__(self):
        return hash((self.kind, self.c_in, self.c_out, self.in_channels, _hyper_key(self.hyper)))


def _hyper_key(h):
    def freeze(v):
        if isinstance(v, (list, tuple)):
            return tuple(freeze(x) for x in v)
        return v
    return tuple(sorted((k, freeze(v)) for k, v in h.items()))


# ---------------------------------------------------------------------------
# spec constructors

def conv_bn_act(c_in, c_out, k=1, s=1, p=None, groups=1, act=True) -> BlockSpec:
    return make_spec("ConvBnAct", c_in, c_out, k=k, s=s, p=p, groups=groups, act=act)


def make_spec(kind: str, c_in: int, c_out: int, in_channels: Sequence[int] = (), **hyper) -> BlockSpec:
    """Build a validated BlockSpec, filling per-kind defaults."""
    if kind not in KINDS:
        raise BlockError(kind, f"unknown block kind; expected one of {', '.join(KINDS)}")
    defaults = _DEFAULTS.get(kind, {})
    unknown = set(hyper) - set(defaults)
    if unknown:
        raise BlockError(kind, f"unknown hyperparameters {sorted(unknown)}")
    full = dict(defaults)
    full.update({k: v for k, v in hyper.items() if v is not None or k == "p"})
    if kind == "ConvBnAct" and full.get("p") is None:
        full["p"] = full["k"] // 2
    spec = BlockSpec(kind, int(c_in), int(c_out), full, tuple(int(c) for c in in_channels))
    validate(spec)
    return spec


_DEFAULTS: Dict[str, Dict] = {
    "ConvBnAct": {"k": 1, "s": 1, "p": None, "groups": 1, "act": True},
    "Bottleneck": {"shortcut": True, "e": 0.5},
    "C3": {"n": 1, "shortcut": True, "e": 0.5},
    "C3Ghost": {"n": 1, "shortcut": True, "e": 0.5},
    "C3Faster": {"n": 1, "shortcut": True, "e": 0.5, "n_div": 4},
    "SPPF": {"k": 5},
    "GhostConv": {"k": 1, "s": 1, "act": True},
    "GhostBottleneck": {"k": 3, "s": 1},
    "PConv": {"k": 3, "n_div": 4},
    "FasterBlock": {"n_div": 4},
    "Upsample": {"scale": 2, "mode": "nearest"},
    "Concat": {"dim": 1},
    "Detect": {"nc": 80, "anchors": ()},
}


def _hidden(spec: BlockSpec) -> int:
    return int(spec.c_out * spec.hyper["e"])


def validate(spec: BlockSpec) -> None:
    kind, ci, co, h = spec.kind, spec.c_in, spec.c_out, spec.hyper
    if ci < 1 or co < 1:
        raise BlockError(kind, f"channel counts must be positive (c_in={ci}, c_out={co})")
    if kind == "ConvBnAct":
        if h["k"] < 1 or h["s"] < 1 or h["p"] < 0:
            raise BlockError(kind, f"invalid k/s/p ({h['k']}, {h['s']}, {h['p']})")
        g = h["groups"]
        if g < 1 or ci % g or co % g:
            raise BlockError(kind, f"c_in={ci} and c_out={co} must be divisible by groups={g}")
    elif kind == "Bottleneck":
        if _hidden(spec) < 1:
            raise BlockError(kind, "hidden width rounds to zero")
    elif kind in C3_FAMILY:
        c_ = _hidden(spec)
        if h["n"] < 1:
            raise BlockError(kind, f"n must be >= 1, got {h['n']}")
        if c_ < 1:
            raise BlockError(kind, "hidden width rounds to zero")
        if kind == "C3Ghost" and c_ % 4:
            raise BlockError(kind, f"hidden width {c_} must be divisible by 4 for GhostBottleneck")
        if kind == "C3Faster" and c_ % h["n_div"]:
            raise BlockError(kind, f"hidden width {c_} must be divisible by partial denominator {h['n_div']}")
    elif kind == "SPPF":
        if ci < 2 or h["k"] < 1 or h["k"] % 2 == 0:
            raise BlockError(kind, f"needs c_in >= 2 and odd k (c_in={ci}, k={h['k']})")
    elif kind == "GhostConv":
        if co % 2:
            raise BlockError(kind, f"c_out={co} must be even")
        if h["k"] < 1 or h["s"] < 1:
            raise BlockError(kind, "invalid k/s")
    elif kind == "GhostBottleneck":
        if h["s"] != 1:
            raise BlockError(kind, "only stride 1 is supported")
        if ci != co:
            raise BlockError(kind, f"residual add requires c_in == c_out ({ci} != {co})")
        if co % 4:
            raise BlockError(kind, f"c_out={co} must be divisible by 4")
    elif kind == "PConv":
        if ci != co:
            raise BlockError(kind, f"requires c_in == c_out ({ci} != {co})")
        if h["n_div"] < 1 or ci % h["n_div"] or ci // h["n_div"] < 1:
            raise BlockError(kind, f"c={ci} must be divisible by partial denominator {h['n_div']}")
        if h["k"] < 1 or h["k"] % 2 == 0:
            raise BlockError(kind, "kernel must be odd")
    elif kind == "FasterBlock":
        if ci != co:
            raise BlockError(kind, f"residual add requires c_in == c_out ({ci} != {co})")
        if h["n_div"] < 1 or ci % h["n_div"]:
            raise BlockError(kind, f"c={ci} must be divisible by partial denominator {h['n_div']}")
    elif kind == "Upsample":
        if h["scale"] != 2 or h["mode"] != "nearest":
            raise BlockError(kind, "only 2x nearest upsampling is supported")
        if ci != co:
            raise BlockError(kind, "channel count must be preserved")
    elif kind == "Concat":
        if h["dim"] != 1:
            raise BlockError(kind, "only channel concatenation (dim 1) is supported")
        if sum(spec.in_channels) != co:
            raise BlockError(kind, f"c_out={co} must equal sum of inputs {spec.in_channels}")
    elif kind == "Detect":
        nc, anchors = h["nc"], h["anchors"]
        if nc < 1:
            raise BlockError(kind, f"nc must be >= 1, got {nc}")
        if len(anchors) != len(spec.in_channels):
            raise BlockError(kind, f"{len(anchors)} anchor scales for {len(spec.in_channels)} inputs")
        for a in anchors:
            if len(a) != 2 * NUM_ANCHORS:
                raise BlockError(kind, f"each scale needs {NUM_ANCHORS} (w, h) pairs")
        if co != NUM_ANCHORS * (nc + 5):
            raise BlockError(kind, f"c_out must be na*(nc+5)={NUM_ANCHORS * (nc + 5)}, got {co}")


# ---------------------------------------------------------------------------
# expansion

@dataclass(frozen=True)
class Step:
    """One primitive operation reading and writing numbered registers."""

    op: str
    src: Tuple[int, ...]
    dst: int
    attrs: Dict = field(default_factory=dict)
    path: str = ""


@dataclass(frozen=True)
class Expansion:
    steps: Tuple[Step, ...]
    n_inputs: int
    outputs: Tuple[int, ...]

    def __iter__(self) -> Iterator[Step]:
        return iter(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def count(self, op: str) -> int:
        return sum(1 for s in self.steps if s.op == op)

    def parametric(self) -> List[Step]:
        return [s for s in self.steps if s.op in ("conv", "bn")]


class _Builder:
    def __init__(self, n_inputs: int):
        self.steps: List[Step] = []
        self.next = n_inputs

    def emit(self, op, src, path, **attrs) -> int:
        dst = self.next
        self.next += 1
        self.steps.append(Step(op, tuple(src), dst, attrs, path))
        return dst

    def conv(self, x, c_in, c_out, k, s=1, p=None, groups=1, bias=False, path=""):
        p = k // 2 if p is None else p
        return self.emit("conv", [x], path, c_in=c_in, c_out=c_out, k=k, s=s, p=p,
                         groups=groups, bias=bias)

    def cba(self, x, c_in, c_out, k=1, s=1, p=None, groups=1, act=True, path=""):
        y = self.conv(x, c_in, c_out, k, s, p, groups, path=f"{path}.conv")
        y = self.emit("bn", [y], f"{path}.bn", c=c_out)
        if act:
            y = self.emit("silu", [y], f"{path}.act")
        return y


def _emit_bottleneck(b, x, c_in, c_out, shortcut, e, path):
    c_ = int(c_out * e)
    y = b.cba(x, c_in, c_, 1, path=f"{path}.cv1")
    y = b.cba(y, c_, c_out, 3, path=f"{path}.cv2")
    if shortcut and c_in == c_out:
        y = b.emit("add", [x, y], f"{path}.add")
    return y


def _emit_ghostconv(b, x, c_in, c_out, k, s, act, path):
    c_ = c_out // 2
    y = b.cba(x, c_in, c_, k, s, act=act, path=f"{path}.cv1")
    z = b.cba(y, c_, c_, GHOST_DW_KERNEL, 1, groups=c_, act=act, path=f"{path}.cv2")
    return b.emit("concat", [y, z], f"{path}.cat")


def _emit_ghostbottleneck(b, x, c, path):
    y = _emit_ghostconv(b, x, c, c // 2, 1, 1, True, f"{path}.gc1")
    y = _emit_ghostconv(b, y, c // 2, c, 1, 1, False, f"{path}.gc2")
    return b.emit("add", [x, y], f"{path}.add")


def _emit_pconv(b, x, c, k, n_div, path):
    cp = c // n_div
    head = b.emit("slice", [x], f"{path}.head", lo=0, hi=cp)
    head = b.conv(head, cp, cp, k, 1, path=f"{path}.conv")
    if cp == c:
        return head
    tail = b.emit("slice", [x], f"{path}.tail", lo=cp, hi=c)
    return b.emit("concat", [head, tail], f"{path}.cat")


def _emit_fasterblock(b, x, c, n_div, path):
    y = _emit_pconv(b, x, c, 3, n_div, f"{path}.pconv")
    y = b.cba(y, c, FASTER_EXPANSION * c, 1, path=f"{path}.pw1")
    y = b.conv(y, FASTER_EXPANSION * c, c, 1, path=f"{path}.pw2.conv")
    y = b.emit("bn", [y], f"{path}.pw2.bn", c=c)
    return b.emit("add", [x, y], f"{path}.add")


def _emit_c3(b, x, spec: BlockSpec):
    h = spec.hyper
    c_ = _hidden(spec)
    a = b.cba(x, spec.c_in, c_, 1, path="cv1")
    bb = b.cba(x, spec.c_in, c_, 1, path="cv2")
    for i in range(h["n"]):
        path = f"m.{i}"
        if spec.kind == "C3":
            a = _emit_bottleneck(b, a, c_, c_, h["shortcut"], 1.0, path)
        elif spec.kind == "C3Ghost":
            a = _emit_ghostbottleneck(b, a, c_, path)
        else:
            a = _emit_fasterblock(b, a, c_, h["n_div"], path)
    y = b.emit("concat", [a, bb], "cat")
    return b.cba(y, 2 * c_, spec.c_out, 1, path="cv3")


def expand_block(spec: BlockSpec) -> Expansion:
    """Expand a block into its canonical sequence of primitive steps."""
    validate(spec)
    h = spec.hyper
    n_in = len(spec.in_channels)
    b = _Builder(n_in)
    x = 0
    kind = spec.kind
    if kind == "ConvBnAct":
        outs = [b.cba(x, spec.c_in, spec.c_out, h["k"], h["s"], h["p"], h["groups"], h["act"], "")]
    elif kind == "Bottleneck":
        outs = [_emit_bottleneck(b, x, spec.c_in, spec.c_out, h["shortcut"], h["e"], "")]
    elif kind in C3_FAMILY:
        outs = [_emit_c3(b, x, spec)]
    elif kind == "SPPF":
        c_ = spec.c_in // 2
        y = b.cba(x, spec.c_in, c_, 1, path="cv1")
        pools = [y]
        for i in range(3):
            pools.append(b.emit("maxpool", [pools[-1]], f"m.{i}", k=h["k"], s=1, p=h["k"] // 2))
        y = b.emit("concat", pools, "cat")
        outs = [b.cba(y, 4 * c_, spec.c_out, 1, path="cv2")]
    elif kind == "GhostConv":
        outs = [_emit_ghostconv(b, x, spec.c_in, spec.c_out, h["k"], h["s"], h["act"], "")]
    elif kind == "GhostBottleneck":
        outs = [_emit_ghostbottleneck(b, x, spec.c_out, "")]
    elif kind == "PConv":
        outs = [_emit_pconv(b, x, spec.c_in, h["k"], h["n_div"], "")]
    elif kind == "FasterBlock":
        outs = [_emit_fasterblock(b, x, spec.c_in, h["n_div"], "")]
    elif kind == "Upsample":
        outs = [b.emit("upsample", [x], "up")]
    elif kind == "Concat":
        outs = [b.emit("concat", list(range(n_in)), "cat")]
    elif kind == "Detect":
        outs = [b.conv(i, c, spec.c_out, 1, bias=True, path=f"m.{i}")
                for i, c in enumerate(spec.in_channels)]
    else:  # pragma: no cover - validate() rejects unknown kinds
        raise BlockError(kind, "no expansion")
    steps = tuple(Step(s.op, s.src, s.dst, s.attrs, s.path.lstrip(".")) for s in b.steps)
    return Expansion(steps, n_in, tuple(outs))


# ---------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class BNAffine:
    gamma: np.ndarray
    beta: np.ndarray

    @property
    def n_params(self) -> int:
        return self.gamma.size + self.beta.size


@dataclass(frozen=True)
class BlockWeights:
    """Parameters aligned with the parametric steps of an expansion."""

    entries: Tuple[Union[T.ConvWeights, BNAffine], ...]

    @property
    def n_params(self) -> int:
        return sum(e.n_params for e in self.entries)

    def arrays(self) -> Iterator[np.ndarray]:
        for e in self.entries:
            if isinstance(e, BNAffine):
                yield e.gamma
                yield e.beta
            else:
                yield e.kernel
                if e.bias is not None:
                    yield e.bias


def conv_weights_for(step: Step, kernel: np.ndarray, bias=None) -> T.ConvWeights:
    a = step.attrs
    return T.ConvWeights(kernel, bias, (a["s"], a["s"]), (a["p"], a["p"]), a["groups"])


def init_weights(spec: BlockSpec, rng: np.random.Generator) -> BlockWeights:
    """Seeded random weights for every parametric step of the expansion."""
    entries = []
    for step in expand_block(spec).parametric():
        a = step.attrs
        if step.op == "conv":
            fan_in = a["c_in"] // a["groups"] * a["k"] * a["k"]
            shape = (a["c_out"], a["c_in"] // a["groups"], a["k"], a["k"])
            kernel = rng.standard_normal(shape) / np.sqrt(fan_in)
            bias = rng.uniform(-0.1, 0.1, a["c_out"]) if a["bias"] else None
            entries.append(conv_weights_for(step, kernel.astype(np.float32), bias))
        else:
            gamma = rng.uniform(0.5, 1.5, a["c"]).astype(np.float32)
            beta = rng.uniform(-0.1, 0.1, a["c"]).astype(np.float32)
            entries.append(BNAffine(gamma, beta))
    return BlockWeights(tuple(entries))


def _check_weights(spec: BlockSpec, exp: Expansion, weights: BlockWeights) -> None:
    params = exp.parametric()
    if len(params) != len(weights.entries):
        raise BlockError(spec.kind, f"expected {len(params)} weight entries, got {len(weights.entries)}")
    for step, w in zip(params, weights.entries):
        a = step.attrs
        if step.op == "conv":
            want = (a["c_out"], a["c_in"] // a["groups"], a["k"], a["k"])
            if not isinstance(w, T.ConvWeights) or w.kernel.shape != want:
                got = getattr(w, "kernel", None)
                raise BlockError(spec.kind, f"{step.path}: kernel shape {want} expected, "
                                            f"got {None if got is None else got.shape}")
            if w.groups != a["groups"] or (w.bias is not None) != a["bias"]:
                raise BlockError(spec.kind, f"{step.path}: groups/bias mismatch")
        else:
            if not isinstance(w, BNAffine) or w.gamma.shape != (a["c"],) or w.beta.shape != (a["c"],):
                raise BlockError(spec.kind, f"{step.path}: BN affine of length {a['c']} expected")


def block_forward(spec: BlockSpec, weights: BlockWeights, inputs: Sequence[np.ndarray]):
    """Run the block. Returns a tensor, or a list of tensors for Detect."""
    exp = expand_block(spec)
    _check_weights(spec, exp, weights)
    if len(inputs) != exp.n_inputs:
        raise BlockError(spec.kind, f"expected {exp.n_inputs} inputs, got {len(inputs)}")
    regs: Dict[int, np.ndarray] = {}
    for i, (x, c) in enumerate(zip(inputs, spec.in_channels)):
        x = T.as_tensor(x, f"input[{i}]")
        if x.shape[1] != c:
            raise BlockError(spec.kind, f"input[{i}] has {x.shape[1]} channels, expected {c}")
        regs[i] = x
    wit = iter(weights.entries)
    for step in exp.steps:
        src = [regs[r] for r in step.src]
        a = step.attrs
        if step.op == "conv":
            y = T.conv2d(src[0], next(wit))
        elif step.op == "bn":
            bn = next(wit)
            y = T.batchnorm_affine(src[0], bn.gamma, bn.beta)
        elif step.op == "silu":
            y = T.silu(src[0])
        elif step.op == "maxpool":
            y = T.maxpool2d(src[0], a["k"], a["s"], a["p"])
        elif step.op == "upsample":
            y = T.upsample_nearest2x(src[0])
        elif step.op == "slice":
            y = T.slice_channels(src[0], a["lo"], a["hi"])
        elif step.op == "concat":
            y = T.concat_channels(src)
        elif step.op == "add":
            y = T.add(src[0], src[1])
        else:  # pragma: no cover
            raise BlockError(spec.kind, f"unknown primitive {step.op}")
        regs[step.dst] = y
    outs = [regs[r] for r in exp.outputs]
    return outs if spec.kind == "Detect" else outs[0]


# ---------------------------------------------------------------------------
# cost

def _cba_params(c_in, c_out, k=1, groups=1):
    return k * k * (c_in // groups) * c_out + 2 * c_out


def _bottleneck_params(c_in, c_out, e):
    c_ = int(c_out * e)
    return _cba_params(c_in, c_, 1) + _cba_params(c_, c_out, 3)


def _ghostconv_params(c_in, c_out, k):
    c_ = c_out // 2
    return _cba_params(c_in, c_, k) + _cba_params(c_, c_, GHOST_DW_KERNEL, groups=c_)


def _ghostbottleneck_params(c):
    return _ghostconv_params(c, c // 2, 1) + _ghostconv_params(c // 2, c, 1)


def _pconv_params(c, k, n_div):
    cp = c // n_div
    return k * k * cp * cp


def _fasterblock_params(c, n_div):
    hidden = FASTER_EXPANSION * c
    return _pconv_params(c, 3, n_div) + _cba_params(c, hidden, 1) + hidden * c + 2 * c


def block_params(spec: BlockSpec) -> int:
    """Trainable parameter count from closed-form per-kind formulas.

    BN contributes 2 parameters per channel; running statistics are excluded.
    Only Detect convolutions carry a bias.
    """
    validate(spec)
    kind, ci, co, h = spec.kind, spec.c_in, spec.c_out, spec.hyper
    if kind == "ConvBnAct":
        return _cba_params(ci, co, h["k"], h["groups"])
    if kind == "Bottleneck":
        return _bottleneck_params(ci, co, h["e"])
    if kind in C3_FAMILY:
        c_ = _hidden(spec)
        if kind == "C3":
            inner = _bottleneck_params(c_, c_, 1.0)
        elif kind == "C3Ghost":
            inner = _ghostbottleneck_params(c_)
        else:
            inner = _fasterblock_params(c_, h["n_div"])
        return 2 * _cba_params(ci, c_) + h["n"] * inner + _cba_params(2 * c_, co)
    if kind == "SPPF":
        c_ = ci // 2
        return _cba_params(ci, c_) + _cba_params(4 * c_, co)
    if kind == "GhostConv":
        return _ghostconv_params(ci, co, h["k"])
    if kind == "GhostBottleneck":
        return _ghostbottleneck_params(co)
    if kind == "PConv":
        return _pconv_params(ci, h["k"], h["n_div"])
    if kind == "FasterBlock":
        return _fasterblock_params(ci, h["n_div"])
    if kind == "Detect":
        return sum((c + 1) * co for c in spec.in_channels)
    return 0


@dataclass(frozen=True)
class Trace:
    """Shapes and MACs obtained by walking an expansion symbolically."""

    outputs: List[Tuple[int, int, int]]
    macs: int
    conv_macs: List[Tuple[str, int]]


def trace_block(spec: BlockSpec, in_shapes: Sequence[Tuple[int, int, int]]) -> Trace:
    """Propagate (c, h, w) shapes through the expansion without allocating tensors."""
    exp = expand_block(spec)
    if len(in_shapes) != exp.n_inputs:
        raise BlockError(spec.kind, f"expected {exp.n_inputs} input shapes, got {len(in_shapes)}")
    regs: Dict[int, Tuple[int, int, int]] = {}
    for i, (shape, c) in enumerate(zip(in_shapes, spec.in_channels)):
        if shape[0] != c:
            raise BlockError(spec.kind, f"input[{i}] has {shape[0]} channels, expected {c}")
        regs[i] = tuple(shape)
    total = 0
    per_conv = []
    for step in exp.steps:
        src = [regs[r] for r in step.src]
        a = step.attrs
        c, h, w = src[0]
        if step.op == "conv":
            ho, wo = T.out_size(h, a["k"], a["s"], a["p"]), T.out_size(w, a["k"], a["s"], a["p"])
            if ho < 1 or wo < 1:
                raise BlockError(spec.kind, f"{step.path}: spatial size collapses ({h}x{w})")
            macs = a["k"] * a["k"] * (a["c_in"] // a["groups"]) * a["c_out"] * ho * wo
            total += macs
            per_conv.append((step.path, macs))
            out = (a["c_out"], ho, wo)
        elif step.op == "maxpool":
            out = (c, T.out_size(h, a["k"], a["s"], a["p"]), T.out_size(w, a["k"], a["s"], a["p"]))
        elif step.op == "upsample":
            out = (c, 2 * h, 2 * w)
        elif step.op == "slice":
            out = (a["hi"] - a["lo"], h, w)
        elif step.op == "concat":
            if any(s[1:] != (h, w) for s in src):
                raise BlockError(spec.kind, f"{step.path}: concat spatial mismatch {src}")
            out = (sum(s[0] for s in src), h, w)
        elif step.op == "add":
            if src[0] != src[1]:
                raise BlockError(spec.kind, f"{step.path}: add shape mismatch {src}")
            out = src[0]
        else:
            out = src[0]
        regs[step.dst] = out
    return Trace([regs[r] for r in exp.outputs], total, per_conv)


def _norm_shapes(spec, in_shape) -> List[Tuple[int, int, int]]:
    if isinstance(in_shape[0], (int, np.integer)):
        if len(in_shape) == 2:
            return [(c, in_shape[0], in_shape[1]) for c in spec.in_channels]
        return [tuple(int(v) for v in in_shape)]
    shapes = []
    for c, s in zip(spec.in_channels, in_shape):
        shapes.append((c, s[0], s[1]) if len(s) == 2 else tuple(s))
    return shapes


def block_macs(spec: BlockSpec, in_shape) -> int:
    """Convolution multiply-accumulates for a block.

    ``in_shape`` is one ``(h, w)`` shared by all inputs, a single
    ``(c, h, w)``, or a list of ``(h, w)`` / ``(c, h, w)`` per input.
    """
    return trace_block(spec, _norm_shapes(spec, in_shape)).macs


def block_out_shapes(spec: BlockSpec, in_shape) -> List[Tuple[int, int, int]]:
    return trace_block(spec, _norm_shapes(spec, in_shape)).outputs
