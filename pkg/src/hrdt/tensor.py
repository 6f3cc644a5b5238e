"""Dense tensors with reverse-mode autodiff on an explicit tape.

The engine is deliberately small: float32/float64 numpy storage, 2-D
matmuls, trailing-dimension elementwise broadcasting, and a handful of
fused primitives (rms_norm, rotary encoding, grouped-query attention)
with hand-derived backward rules. Graphs are recorded on an explicit
``Tape``; construction order is topological order, and the backward pass
walks the records exactly once in reverse.

A tape must stay on one thread. Independent tapes may run concurrently.
"""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable, Iterator

import numpy as np

from .errors import ConfigError, CorruptBlobError, ShapeError, TapeError

DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

ROPE_BASE = 10000.0


# ---------------------------------------------------------------------------
# Tensor and tape


class Tensor:
    """A dense f32/f64 array plus a differentiability flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        if data.dtype not in _DTYPE_NAMES:
            raise ShapeError(f"unsupported dtype {data.dtype}; expected f32 or f64")
        self.data = data
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all semantics live in the module-level ops.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))


def tensor(data, dtype: str = "f32", requires_grad: bool = False) -> Tensor:
    """Build a Tensor from array-like data, copying into the given dtype."""
    if dtype not in DTYPES:
        raise ConfigError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    return Tensor(np.asarray(data, dtype=DTYPES[dtype]), requires_grad=requires_grad)


def zeros(shape, dtype: str = "f32", requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPES[dtype]), requires_grad=requires_grad)


_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Records are appended in construction order, which is a topological
    order by construction (an input tensor always exists before the op
    that consumes it). ``gradients`` walks the records once, in reverse.
    """

    __slots__ = ("_records", "_produced")

    def __init__(self):
        # Each record: (out, inputs, backward_fn); backward_fn maps the
        # upstream gradient array to one gradient array (or None) per input.
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape stack corrupted: exiting a tape that is not on top")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self._records.append((out, inputs, backward_fn))
        self._produced.add(id(out))

    def gradients(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a recorded scalar loss for every tensor on its path."""
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
        if id(loss) not in self._produced:
            raise TapeError("loss was not recorded on this tape")
        grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self._records):
            g_out = grads.pop(out, None)
            if g_out is None:
                continue
            for inp, g_in in zip(inputs, backward_fn(g_out)):
                if g_in is None or not inp.requires_grad:
                    continue
                acc = grads.get(inp)
                if acc is None:
                    grads[inp] = g_in
                else:
                    acc += g_in
        return grads

    def backward(self, loss: Tensor, store: "ParamStore") -> dict[str, Tensor]:
        """Named gradient map for a parameter store.

        Parameters that do not appear on the loss path get zero gradients.
        """
        raw = self.gradients(loss)
        out: dict[str, Tensor] = {}
        for param in store:
            g = raw.get(param.tensor)
            if g is None:
                g = np.zeros_like(param.tensor.data)
            out[param.name] = Tensor(g)
        return out


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it if a tape is active and grads flow."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.record(out, inputs, backward_fn)
        return out
    return Tensor(data)


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(
                f"mixed dtypes in one expression: {_DTYPE_NAMES[dt]} vs {_DTYPE_NAMES[t.data.dtype]}"
            )


# ---------------------------------------------------------------------------
# Elementwise and shape primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.data.shape} vs {b.data.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + c, (a,), lambda g: (g,))


def add_row(x: Tensor, v: Tensor) -> Tensor:
    """x[..., d] + v[d], broadcasting v over leading axes."""
    _check_same_dtype(x, v)
    d = v.data.shape[-1] if v.data.ndim == 1 else None
    if d is None or x.data.shape[-1] != d:
        raise ShapeError(f"add_row wants x[..,d] and v[d]; got {x.data.shape} and {v.data.shape}")
    return _result(
        x.data + v.data,
        (x, v),
        lambda g: (g, g.reshape(-1, d).sum(axis=0)),
    )


def mul_row(x: Tensor, v: Tensor) -> Tensor:
    """x[..., d] * v[d], broadcasting v over leading axes."""
    _check_same_dtype(x, v)
    d = v.data.shape[-1] if v.data.ndim == 1 else None
    if d is None or x.data.shape[-1] != d:
        raise ShapeError(f"mul_row wants x[..,d] and v[d]; got {x.data.shape} and {v.data.shape}")
    xd, vd = x.data, v.data
    return _result(
        xd * vd,
        (x, v),
        lambda g: (g * vd, (g * xd).reshape(-1, d).sum(axis=0)),
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.data.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(parts)
    _check_same_dtype(*parts)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[offsets[i]: offsets[i + 1]] for i in range(len(sizes)))

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _result(x.data[start:stop].copy(), (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    return _result(
        np.asarray(x.data.sum(), dtype=x.data.dtype),
        (x,),
        lambda g: (np.broadcast_to(g, shape).copy(),),
    )


def mean_all(x: Tensor) -> Tensor:
    shape = x.data.shape
    n = x.data.size
    return _result(
        np.asarray(x.data.mean(), dtype=x.data.dtype),
        (x,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
    )


# ---------------------------------------------------------------------------
# Linear algebra and network primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    y = x.data * s
    # d/dx x*sigma(x) = sigma(x) + x*sigma(x)*(1-sigma(x)) = sigma(x)*(1 + x - y)
    return _result(y, (x,), lambda g: (g * (s * (1.0 + x.data - y)),))


def rms_norm(x: Tensor, gamma: Tensor, eps: float = 1e-5) -> Tensor:
    """Root-mean-square normalization over the trailing dimension."""
    if eps <= 0:
        raise ConfigError(f"rms_norm eps must be > 0, got {eps}")
    _check_same_dtype(x, gamma)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,):
        raise ShapeError(f"gamma shape {gamma.data.shape} does not match trailing dim {d}")
    xd = x.data
    inv_r = 1.0 / np.sqrt((xd * xd).mean(axis=-1, keepdims=True) + eps)
    y = xd * inv_r * gamma.data

    def bw(g):
        gg = g * gamma.data
        # y_i = g_i x_i r^-1 with r = sqrt(mean x^2 + eps)
        dot = (gg * xd).sum(axis=-1, keepdims=True)
        dx = gg * inv_r - xd * (inv_r ** 3) * (dot / d)
        dgamma = (g * xd * inv_r).reshape(-1, d).sum(axis=0)
        return dx, dgamma

    return _result(y, (x, gamma), bw)


def _rope_tables(n_pos: int, head_dim: int, dtype: np.dtype) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = ROPE_BASE ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.arange(n_pos, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


_ROPE_CACHE: dict[tuple[int, int, str], tuple[np.ndarray, np.ndarray]] = {}


def apply_rope(x: Tensor, heads: int) -> Tensor:
    """Rotary position encoding over rows 0..L-1, applied per head."""
    L, width = x.data.shape
    if width % heads != 0:
        raise ShapeError(f"width {width} not divisible by heads {heads}")
    hd = width // heads
    if hd % 2 != 0:
        raise ConfigError(f"rotary encoding needs an even head dim, got {hd}")
    key = (L, hd, _DTYPE_NAMES[x.data.dtype])
    tables = _ROPE_CACHE.get(key)
    if tables is None:
        tables = _rope_tables(L, hd, x.data.dtype)
        _ROPE_CACHE[key] = tables
    cos, sin = tables  # [L, hd/2]
    cos3 = cos[:, None, :]
    sin3 = sin[:, None, :]
    half = hd // 2

    xh = x.data.reshape(L, heads, hd)
    x1, x2 = xh[..., :half], xh[..., half:]
    y = np.empty_like(xh)
    y[..., :half] = x1 * cos3 - x2 * sin3
    y[..., half:] = x2 * cos3 + x1 * sin3

    def bw(g):
        gh = g.reshape(L, heads, hd)
        g1, g2 = gh[..., :half], gh[..., half:]
        dx = np.empty_like(gh)
        dx[..., :half] = g1 * cos3 + g2 * sin3
        dx[..., half:] = g2 * cos3 - g1 * sin3
        return (dx.reshape(L, width),)

    return _result(y.reshape(L, width), (x,), bw)


def attention_core(
    q: Tensor, k: Tensor, v: Tensor, heads: int, kv_heads: int, causal: bool = False
) -> Tensor:
    """Scaled-dot-product attention with grouped key/value heads.

    q is [Lq, heads*hd]; k and v are [Lk, kv_heads*hd]. Each contiguous
    group of heads/kv_heads query heads shares one key/value head. The
    softmax is stabilized by per-row max subtraction.
    """
    _check_same_dtype(q, k, v)
    if heads % kv_heads != 0:
        raise ConfigError(f"heads ({heads}) must be a multiple of kv_heads ({kv_heads})")
    Lq, qw = q.data.shape
    Lk, kw = k.data.shape
    if qw % heads != 0:
        raise ConfigError(f"query width {qw} not divisible by heads {heads}")
    hd = qw // heads
    if kw != kv_heads * hd or v.data.shape != (Lk, kw):
        raise ShapeError(
            f"attention shapes incompatible: q {q.data.shape}, k {k.data.shape}, v {v.data.shape}"
        )
    group = heads // kv_heads
    inv_scale = 1.0 / math.sqrt(hd)

    qh = np.ascontiguousarray(q.data.reshape(Lq, heads, hd).transpose(1, 0, 2))
    kh = k.data.reshape(Lk, kv_heads, hd).transpose(1, 0, 2)
    vh = v.data.reshape(Lk, kv_heads, hd).transpose(1, 0, 2)
    kf = np.repeat(kh, group, axis=0)  # [heads, Lk, hd]
    vf = np.repeat(vh, group, axis=0)

    scores = (qh @ kf.transpose(0, 2, 1)) * inv_scale
    if causal:
        if Lq != Lk:
            raise ShapeError(f"causal attention needs Lq == Lk, got {Lq} vs {Lk}")
        scores = np.where(np.tril(np.ones((Lq, Lk), dtype=bool)), scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ vf  # [heads, Lq, hd]

    def bw(g):
        gh = g.reshape(Lq, heads, hd).transpose(1, 0, 2)
        dvf = p.transpose(0, 2, 1) @ gh
        dp = gh @ vf.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dq = (ds @ kf) * inv_scale
        dkf = (ds.transpose(0, 2, 1) @ qh) * inv_scale
        dk = dkf.reshape(kv_heads, group, Lk, hd).sum(axis=1)
        dv = dvf.reshape(kv_heads, group, Lk, hd).sum(axis=1)
        return (
            dq.transpose(1, 0, 2).reshape(Lq, qw),
            dk.transpose(1, 0, 2).reshape(Lk, kw),
            dv.transpose(1, 0, 2).reshape(Lk, kw),
        )

    return _result(
        np.ascontiguousarray(out.transpose(1, 0, 2)).reshape(Lq, qw), (q, k, v), bw
    )


def swiglu_ffn(x: Tensor, wg: Tensor, wu: Tensor, wd: Tensor) -> Tensor:
    """Gated feed-forward: (SiLU(x Wg) * (x Wu)) Wd, no bias terms."""
    return matmul(mul(silu(matmul(x, wg)), matmul(x, wu)), wd)


def gqa_attention(
    q_in: Tensor,
    kv_in: Tensor,
    params: "AttentionParams",
    heads: int,
    kv_heads: int,
    causal: bool = False,
    rope: bool = False,
    weights_out: list | None = None,
) -> Tensor:
    """Full attention layer: projections, optional rotary encoding, core, output.

    ``weights_out``, when given, receives the [heads, Lq, Lk] attention
    probability array (forward-only instrumentation).
    """
    d = q_in.data.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"model dim {d} not divisible by heads {heads}")
    if heads % kv_heads != 0:
        raise ConfigError(f"heads ({heads}) must be a multiple of kv_heads ({kv_heads})")
    q = matmul(q_in, params.wq)
    k = matmul(kv_in, params.wk)
    v = matmul(kv_in, params.wv)
    if rope:
        q = apply_rope(q, heads)
        k = apply_rope(k, kv_heads)
    out = attention_core(q, k, v, heads, kv_heads, causal=causal)
    if weights_out is not None:
        weights_out.append(
            _attention_probs(q.data, k.data, heads, kv_heads, causal=causal)
        )
    return matmul(out, params.wo)


def _attention_probs(
    q: np.ndarray, k: np.ndarray, heads: int, kv_heads: int, causal: bool
) -> np.ndarray:
    Lq = q.shape[0]
    Lk = k.shape[0]
    hd = q.shape[1] // heads
    qh = q.reshape(Lq, heads, hd).transpose(1, 0, 2)
    kf = np.repeat(k.reshape(Lk, kv_heads, hd).transpose(1, 0, 2), heads // kv_heads, axis=0)
    s = (qh @ kf.transpose(0, 2, 1)) / math.sqrt(hd)
    if causal:
        s = np.where(np.tril(np.ones((Lq, Lk), dtype=bool)), s, -np.inf)
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass
class AttentionParams:
    """Projection weights for one attention layer."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class InitSpec:
    """How a parameter tensor is materialized: scheme plus a private seed."""

    scheme: str  # zeros | ones | fan_in_uniform
    seed: int


def materialize(spec: InitSpec, shape: tuple[int, ...], dtype: str) -> np.ndarray:
    np_dtype = DTYPES[dtype]
    if spec.scheme == "zeros":
        return np.zeros(shape, dtype=np_dtype)
    if spec.scheme == "ones":
        return np.ones(shape, dtype=np_dtype)
    if spec.scheme == "fan_in_uniform":
        rng = np.random.Generator(np.random.PCG64(spec.seed))
        bound = 1.0 / math.sqrt(shape[0])
        return rng.uniform(-bound, bound, size=shape).astype(np_dtype)
    raise ConfigError(f"unknown init scheme {spec.scheme!r}")


@dataclass
class Parameter:
    """A named, trainable tensor. Dots in the name encode module membership."""

    name: str
    tensor: Tensor
    init_spec: InitSpec


class ParamStore:
    """Insertion-ordered collection of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray, init_spec: InitSpec) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        param = Parameter(name, Tensor(data, requires_grad=True), init_spec)
        self._params[name] = param
        return param

    def create(self, name: str, shape: tuple[int, ...], spec: InitSpec, dtype: str) -> Parameter:
        return self.add(name, materialize(spec, shape, dtype), spec)

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def tensor(self, name: str) -> Tensor:
        return self._params[name].tensor

    def total_scalars(self) -> int:
        return sum(p.tensor.data.size for p in self)

    def with_prefix(self, prefix: str) -> list[Parameter]:
        return [p for p in self if p.name.startswith(prefix)]

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for p in self:
            out.add(p.name, p.tensor.data.copy(), p.init_spec)
        return out


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(
    f: Callable[[ParamStore], Tensor],
    store: ParamStore,
    eps: float,
    probes: int = 100,
    seed: int = 0,
) -> float:
    """Compare tape gradients of ``f`` against central finite differences.

    ``f`` must be deterministic. A random subset of ``probes`` scalar
    parameter entries is perturbed by +/- eps; the worst relative error is
    returned, with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ConfigError(f"grad_check eps must be > 0, got {eps}")
    with Tape() as tape:
        loss = f(store)
    analytic = tape.backward(loss, store)

    entries: list[tuple[Parameter, int]] = []
    for p in store:
        entries.extend((p, i) for i in range(p.tensor.data.size))
    rng = np.random.Generator(np.random.PCG64(seed))
    if probes < len(entries):
        picked = rng.choice(len(entries), size=probes, replace=False)
    else:
        picked = np.arange(len(entries))

    worst = 0.0
    for j in picked:
        param, idx = entries[int(j)]
        flat = param.tensor.data.reshape(-1)
        saved = flat[idx]
        flat[idx] = saved + eps
        f_plus = f(store).item()
        flat[idx] = saved - eps
        f_minus = f(store).item()
        flat[idx] = saved
        numeric = (f_plus - f_minus) / (2.0 * eps)
        exact = float(analytic[param.name].data.reshape(-1)[idx])
        rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Tensor blob serialization

BLOB_MAGIC = b"HRDT-T1\n"
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_OF_TAG = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_blob(stream: BinaryIO, arr: np.ndarray) -> None:
    """Write one array: magic, u32 rank, u32 extents, u8 dtype tag, raw LE scalars."""
    if arr.dtype not in _TAG_OF:
        raise ShapeError(f"only f32/f64 blobs supported, got {arr.dtype}")
    stream.write(BLOB_MAGIC)
    stream.write(struct.pack("<I", arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    stream.write(struct.pack("<B", _TAG_OF[arr.dtype]))
    stream.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_blob(stream: BinaryIO) -> np.ndarray:
    """Read one array written by write_blob; raises CorruptBlobError on damage."""
    magic = stream.read(len(BLOB_MAGIC))
    if magic != BLOB_MAGIC:
        raise CorruptBlobError(f"bad tensor blob magic {magic!r}")
    head = stream.read(4)
    if len(head) != 4:
        raise CorruptBlobError("truncated blob: missing rank")
    (rank,) = struct.unpack("<I", head)
    if rank > 8:
        raise CorruptBlobError(f"implausible blob rank {rank}")
    ext_bytes = stream.read(4 * rank)
    if len(ext_bytes) != 4 * rank:
        raise CorruptBlobError("truncated blob: missing extents")
    shape = struct.unpack(f"<{rank}I", ext_bytes)
    if any(e < 1 for e in shape):
        raise CorruptBlobError(f"blob extents must be >= 1, got {shape}")
    tag_byte = stream.read(1)
    if len(tag_byte) != 1:
        raise CorruptBlobError("truncated blob: missing dtype tag")
    tag = tag_byte[0]
    if tag not in _DTYPE_OF_TAG:
        raise CorruptBlobError(f"unknown blob dtype tag {tag}")
    dtype = _DTYPE_OF_TAG[tag]
    count = int(np.prod(shape)) if shape else 1
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise CorruptBlobError("truncated blob: payload too short")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def blob_bytes(arr: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    write_blob(buf, arr)
    return buf.getvalue()
