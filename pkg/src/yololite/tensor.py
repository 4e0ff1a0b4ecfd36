"""Dense NCHW float32 kernels used by the block zoo.

Tensors are plain ``numpy.ndarray`` objects of rank 4 and dtype float32.
Every kernel accumulates in float64 and casts the result back to float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAGIC = b"FTNSR1"
_MAX_DIM = 2**31 - 1


class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible with an operation."""

    def __init__(self, op: str, message: str, **dims):
        self.op = op
        self.dims = dims
        detail = ", ".join(f"{k}={v}" for k, v in dims.items())
        super().__init__(f"{op}: {message}" + (f" ({detail})" if detail else ""))


class TensorFormatError(ValueError):
    """Raised when an FTNSR1 file cannot be decoded."""


def as_tensor(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ShapeError("tensor", f"{name} must be rank 4 (n, c, h, w)", ndim=arr.ndim)
    return arr


def zeros(n: int, c: int, h: int, w: int) -> np.ndarray:
    return np.zeros((n, c, h, w), dtype=np.float32)


@dataclass(frozen=True)
class ConvWeights:
    """Convolution parameters.

    ``kernel`` has shape ``(c_out, c_in // groups, k_h, k_w)``.
    """

    kernel: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float32)
        if kernel.ndim != 4:
            raise ShapeError("ConvWeights", "kernel must be rank 4", ndim=kernel.ndim)
        object.__setattr__(self, "kernel", kernel)
        c_out = kernel.shape[0]
        if self.groups < 1 or c_out % self.groups:
            raise ShapeError("ConvWeights", "c_out must be divisible by groups",
                             c_out=c_out, groups=self.groups)
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ShapeError("ConvWeights", "stride must be >= 1 and padding >= 0",
                             stride=self.stride, padding=self.padding)
        if self.bias is not None:
            bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)
            if bias.shape[0] != c_out:
                raise ShapeError("ConvWeights", "bias length must equal c_out",
                                 bias=bias.shape[0], c_out=c_out)
            object.__setattr__(self, "bias", bias)

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.kernel.shape[2], self.kernel.shape[3]

    @property
    def n_params(self) -> int:
        return self.kernel.size + (0 if self.bias is None else self.bias.size)


def out_size(size: int, k: int, s: int, p: int) -> int:
    """Output length of a sliding window op along one axis."""
    return (size + 2 * p - k) // s + 1


def conv2d(x: np.ndarray, w: ConvWeights) -> np.ndarray:
    """Zero-padded grouped cross-correlation."""
    x = as_tensor(x)
    n, c, h, wd = x.shape
    kh, kw = w.kernel_size
    (sh, sw), (ph, pw), g = w.stride, w.padding, w.groups
    if c != w.c_in:
        raise ShapeError("conv2d", "input channels do not match kernel",
                         input_c=c, kernel_c_in=w.c_in, groups=g)
    if h + 2 * ph < kh or wd + 2 * pw < kw:
        raise ShapeError("conv2d", "kernel larger than padded input",
                         h=h, w=wd, k_h=kh, k_w=kw, p_h=ph, p_w=pw)
    ho, wo = out_size(h, kh, sh, ph), out_size(wd, kw, sw, pw)
    if x.size == 0 or w.c_out == 0:
        return np.zeros((n, w.c_out, ho, wo), dtype=np.float32)

    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # (n, c, ho, wo, kh, kw) strided view, no copy yet
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    kern = w.kernel.astype(np.float64)
    cin_g, cout_g = c // g, w.c_out // g

    if g == 1:
        out = np.tensordot(win, kern, axes=([1, 4, 5], [1, 2, 3]))  # (n, ho, wo, c_out)
        out = out.transpose(0, 3, 1, 2)
    elif cin_g == 1 and cout_g == 1:
        out = np.einsum("nchwij,cij->nchw", win, kern[:, 0])
    else:
        out = np.empty((n, w.c_out, ho, wo), dtype=np.float64)
        for gi in range(g):
            part = win[:, gi * cin_g:(gi + 1) * cin_g]
            kpart = kern[gi * cout_g:(gi + 1) * cout_g]
            res = np.tensordot(part, kpart, axes=([1, 4, 5], [1, 2, 3]))
            out[:, gi * cout_g:(gi + 1) * cout_g] = res.transpose(0, 3, 1, 2)
    if w.bias is not None:
        out = out + w.bias.astype(np.float64)[None, :, None, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def maxpool2d(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """Max pooling; padded cells never win (treated as -inf)."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if k < 1 or s < 1 or p < 0:
        raise ShapeError("maxpool2d", "invalid window", k=k, s=s, p=p)
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeError("maxpool2d", "window larger than padded input", h=h, w=w, k=k, p=p)
    ho, wo = out_size(h, k, s, p), out_size(w, k, s, p)
    if x.size == 0:
        return np.zeros((n, c, ho, wo), dtype=np.float32)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    return np.ascontiguousarray(win.max(axis=(4, 5)), dtype=np.float32)


def upsample_nearest2x(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), evaluated without overflow for large |x|."""
    x64 = np.asarray(x, dtype=np.float64)
    sig = np.empty_like(x64)
    pos = x64 >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return (x64 * sig).astype(np.float32)


def batchnorm_affine(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Inference-form batch norm folded to ``gamma * x + beta`` per channel."""
    x = as_tensor(x)
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise ShapeError("batchnorm", "affine length must equal channels",
                         c=x.shape[1], gamma=gamma.shape[0], beta=beta.shape[0])
    y = x.astype(np.float64) * gamma[None, :, None, None] + beta[None, :, None, None]
    return y.astype(np.float32)


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("concat", "nothing to concatenate")
    parts = [as_tensor(p, f"part[{i}]") for i, p in enumerate(parts)]
    n, _, h, w = parts[0].shape
    for i, p in enumerate(parts[1:], start=1):
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError("concat", f"part[{i}] does not match part[0]",
                             expected=(n, h, w), got=(p.shape[0], p.shape[2], p.shape[3]))
    return np.concatenate(parts, axis=1)


def slice_channels(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    x = as_tensor(x)
    if not 0 <= lo < hi <= x.shape[1]:
        raise ShapeError("slice", "need 0 <= lo < hi <= c", lo=lo, hi=hi, c=x.shape[1])
    return np.ascontiguousarray(x[:, lo:hi])


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_tensor(a, "a"), as_tensor(b, "b")
    if a.shape != b.shape:
        raise ShapeError("add", "operand shapes differ", a=a.shape, b=b.shape)
    return (a.astype(np.float64) + b.astype(np.float64)).astype(np.float32)


# ---------------------------------------------------------------------------
# FTNSR1 file format

def write_tensor(path: Union[str, Path], x: np.ndarray) -> None:
    x = as_tensor(x)
    header = MAGIC + struct.pack("<I", 4) + struct.pack("<4I", *x.shape)
    Path(path).write_bytes(header + x.astype("<f4", copy=False).tobytes(order="C"))


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise TensorFormatError("bad magic")
    off = len(MAGIC)
    if len(buf) < off + 4:
        raise TensorFormatError("truncated file: missing ndim")
    (ndim,) = struct.unpack_from("<I", buf, off)
    off += 4
    if ndim != 4:
        raise TensorFormatError(f"unsupported ndim {ndim}, expected 4")
    if len(buf) < off + 4 * ndim:
        raise TensorFormatError("truncated file: missing dims")
    dims = struct.unpack_from("<4I", buf, off)
    off += 16
    count = 1
    for d in dims:
        if d > _MAX_DIM:
            raise TensorFormatError(f"dim overflow: {d}")
        count *= d
    if count * 4 > len(buf) - off:
        raise TensorFormatError(
            f"truncated file: need {count * 4} data bytes, have {len(buf) - off}")
    if count * 4 != len(buf) - off:
        raise TensorFormatError("trailing bytes after tensor data")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.astype(np.float32).reshape(dims)
