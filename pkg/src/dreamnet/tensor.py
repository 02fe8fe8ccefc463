"""Dense float64 tensors with reverse-mode differentiation.

Every operation records its operands and a local gradient rule on the
output tensor; ``backward`` walks the recorded graph in reverse
topological order and accumulates gradients additively across fan-out.
Shapes are limited to scalars, vectors, and matrices, and broadcasting
is restricted to scalar-tensor and row-bias forms so each gradient rule
stays small enough to audit by hand. All arithmetic is double precision.
"""

from __future__ import annotations

import struct
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CheckpointError, ContractError, ShapeError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that suppresses graph recording (inference mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A node in a recorded compute graph.

    data: row-major float64 ndarray.
    grad: same-shape gradient buffer, populated by ``backward``.
    requires_grad: whether gradients flow to and through this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() called on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'unset'})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], bw: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bw
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    # Copy on first write: closures may hand the same array to two parents.
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad += g


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    Gradients of all nodes in the graph are cleared first, so repeated
    calls on the same graph reproduce identical values.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.data.shape}")
    order = _topo(loss)
    for t in order:
        t.grad = None
    loss.grad = np.ones_like(loss.data)
    for t in reversed(order):
        if t._backward is not None:
            t._backward(t.grad)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bw)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """(m, k) matrix times (k,) vector."""
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {w.data.shape} x {x.data.shape}")

    def bw(g):
        _acc(w, np.outer(g, x.data))
        _acc(x, w.data.T @ g)

    return _node(w.data @ x.data, (w, x), bw)


def vecmat(x: Tensor, w: Tensor) -> Tensor:
    """(k,) row vector times (k, n) matrix."""
    if x.data.ndim != 1 or w.data.ndim != 2 or x.data.shape[0] != w.data.shape[0]:
        raise ShapeError(f"vecmat: incompatible shapes {x.data.shape} x {w.data.shape}")

    def bw(g):
        _acc(x, w.data @ g)
        _acc(w, np.outer(x.data, g))

    return _node(x.data @ w.data, (x, w), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected matrix, got shape {a.data.shape}")

    def bw(g):
        _acc(a, g.T)

    return _node(a.data.T.copy(), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        _acc(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a scalar or a row bias as ``b``."""
    if a.data.shape == b.data.shape:
        def bw(g):
            _acc(a, g)
            _acc(b, g)
    elif b.data.ndim == 0 or b.data.size == 1:
        def bw(g):
            _acc(a, g)
            _acc(b, np.sum(g).reshape(b.data.shape))
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        def bw(g):
            _acc(a, g)
            _acc(b, g.sum(axis=0))
    else:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} + {b.data.shape}")
    return _node(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; also accepts a scalar as either operand."""
    if a.data.shape == b.data.shape:
        def bw(g):
            _acc(a, g * b.data)
            _acc(b, g * a.data)
    elif b.data.size == 1:
        def bw(g):
            _acc(a, g * b.data)
            _acc(b, np.sum(g * a.data).reshape(b.data.shape))
    elif a.data.size == 1:
        def bw(g):
            _acc(a, np.sum(g * b.data).reshape(a.data.shape))
            _acc(b, g * a.data)
    else:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} * {b.data.shape}")
    return _node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _acc(a, g * s)

    return _node(a.data * s, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bw(g):
        _acc(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bw(g):
        _acc(a, g * (a.data > 0))

    return _node(out_data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(g):
        _acc(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, g / a.data)

    return _node(np.log(a.data), (a,), bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient is zero where the clip is active."""
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        _acc(a, g * inside)

    return _node(np.clip(a.data, lo, hi), (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: no operands")
    nd = parts[0].data.ndim
    if any(p.data.ndim != nd for p in parts):
        raise ShapeError("concat: operands must share rank")
    sizes = [p.data.shape[axis] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bw(g):
        for p, s, e in zip(parts, offs[:-1], offs[1:]):
            if nd == 1:
                _acc(p, g[s:e])
            elif axis == 0:
                _acc(p, g[s:e, :])
            else:
                _acc(p, g[:, s:e])

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one per row."""
    parts = list(parts)
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise ShapeError("stack_rows: expected a nonempty sequence of vectors")

    def bw(g):
        for i, p in enumerate(parts):
            _acc(p, g[i])

    return _node(np.stack([p.data for p in parts]), tuple(parts), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    if axis >= a.data.ndim or start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] on axis {axis} of shape {a.data.shape}")
    idx = tuple(slice(start, start + length) if d == axis else slice(None) for d in range(a.data.ndim))

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _acc(a, full)

    return _node(a.data[idx].copy(), (a,), bw)


def gather_rows(a: Tensor, ids: Sequence[int]) -> Tensor:
    """Select rows of a matrix by index (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected matrix, got shape {a.data.shape}")

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, ids, g)
            _acc(a, full)

    return _node(a.data[ids].copy(), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        _acc(a, np.full_like(a.data, float(g) / n))

    return _node(a.data.mean(), (a,), bw)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows of a matrix, returning a vector."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows: expected matrix, got shape {a.data.shape}")
    n = a.data.shape[0]

    def bw(g):
        _acc(a, np.tile(g / n, (n, 1)))

    return _node(a.data.mean(axis=0), (a,), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; a vector is one row."""
    axis = x.data.ndim - 1
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _acc(x, (g - dot) * out_data)

    return _node(out_data, (x,), bw)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learned gain and bias."""
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != gain.data.shape:
        raise ShapeError(f"layer_norm_rows: shapes {x.data.shape}, {gain.data.shape}, {bias.data.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bw(g):
        _acc(gain, (g * xhat).sum(axis=0))
        _acc(bias, g.sum(axis=0))
        gx = g * gain.data
        m1 = gx.mean(axis=1, keepdims=True)
        m2 = (gx * xhat).mean(axis=1, keepdims=True)
        _acc(x, inv * (gx - m1 - xhat * m2))

    return _node(xhat * gain.data + bias.data, (x, gain, bias), bw)


def cross_entropy_rows(logits: Tensor, targets: Sequence[int], reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy of each row against its target class id."""
    t = np.asarray(targets, dtype=np.intp)
    if logits.data.ndim != 2 or t.shape[0] != logits.data.shape[0]:
        raise ShapeError(f"cross_entropy_rows: {logits.data.shape} rows vs {t.shape[0]} targets")
    n = logits.data.shape[0]
    m = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    losses = np.log(z).ravel() + m.ravel() - logits.data[np.arange(n), t]
    denom = n if reduction == "mean" else 1
    out_data = losses.sum() / denom

    def bw(g):
        d = probs.copy()
        d[np.arange(n), t] -= 1.0
        _acc(logits, d * (float(g) / denom))

    return _node(out_data, (logits,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout as a recorded mask node; identity at rate 0."""
    if rate <= 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


def _sigmoid_arr(z: np.ndarray) -> np.ndarray:
    # One-sided clamp: exp of large positives would overflow; large
    # negatives underflow harmlessly to a sigmoid of exactly 1.
    return 1.0 / (1.0 + np.exp(np.minimum(-z, 60.0)))


def lstm_direction(rows: Tensor, w: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over the rows of a matrix; returns the final
    hidden state.

    Gate layout along the weight rows is input, forget, output, cell
    candidate; initial states are zero. The whole unrolled recurrence is
    one recorded node whose gradient rule is backpropagation through
    time; input projections and weight-gradient reductions are batched
    across timesteps.
    """
    if rows.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(f"lstm_direction: shapes {rows.data.shape}, {w.data.shape}, {b.data.shape}")
    n_steps, d = rows.data.shape
    four_h, in_dim = w.data.shape
    if four_h % 4 != 0 or in_dim != d + four_h // 4 or b.data.shape[0] != four_h:
        raise ShapeError(f"lstm_direction: weight {w.data.shape} incompatible with input width {d}")
    h = four_h // 4
    xd = rows.data[::-1] if reverse else rows.data
    w_x = w.data[:, :d]
    w_h = w.data[:, d:]
    zx_all = xd @ w_x.T + b.data
    gates = np.empty((n_steps, 4 * h))   # sigmoided i, f, o then tanh candidate
    cells = np.empty((n_steps + 1, h))   # c_{t-1} entering each step
    tanh_c = np.empty((n_steps, h))
    hidden = np.empty((n_steps + 1, h))  # h_{t-1} entering each step
    cells[0] = 0.0
    hidden[0] = 0.0
    s3 = 3 * h
    for t in range(n_steps):
        z = zx_all[t] + w_h @ hidden[t]
        gt = gates[t]
        gt[:s3] = _sigmoid_arr(z[:s3])
        gt[s3:] = np.tanh(z[s3:])
        cells[t + 1] = gt[h:2 * h] * cells[t] + gt[:h] * gt[s3:]
        tanh_c[t] = np.tanh(cells[t + 1])
        hidden[t + 1] = gt[2 * h:s3] * tanh_c[t]

    def bw(g):
        dz_all = np.empty((n_steps, 4 * h))
        w_h_t = w_h.T
        dh = np.asarray(g)
        dc = np.zeros(h)
        for t in range(n_steps - 1, -1, -1):
            gt = gates[t]
            gi, gf, go, gg = gt[:h], gt[h:2 * h], gt[2 * h:s3], gt[s3:]
            tc = tanh_c[t]
            dc = dc + dh * go * (1.0 - tc * tc)
            dz = dz_all[t]
            dz[:h] = dc * gg * gi * (1.0 - gi)
            dz[h:2 * h] = dc * cells[t] * gf * (1.0 - gf)
            dz[2 * h:s3] = dh * tc * go * (1.0 - go)
            dz[s3:] = dc * gi * (1.0 - gg * gg)
            dh = w_h_t @ dz
            dc = dc * gf
        dx = dz_all @ w_x
        _acc(rows, dx[::-1] if reverse else dx)
        _acc(w, np.concatenate([dz_all.T @ xd, dz_all.T @ hidden[:-1]], axis=1))
        _acc(b, dz_all.sum(axis=0))

    return _node(hidden[n_steps].copy(), (rows, w, b), bw)


def add_n(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               entries_per_param: int | None = None, seed: int = 0) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    ``f`` must rebuild its graph on every call and be deterministic
    (dropout disabled). Returns the max over checked entries of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|). When
    ``entries_per_param`` is set, a deterministic random subset of each
    parameter's entries is checked instead of all of them.
    """
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        n = p.data.size
        if entries_per_param is None or entries_per_param >= n:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=entries_per_param, replace=False)
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in idxs:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = f().item()
                flat[i] = orig - eps
                f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(a_flat[i] - numeric) / max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DNETv1"


def save_checkpoint(path, tensors, header: str = "") -> None:
    """Write named tensors with a text header.

    Layout: magic, header length + UTF-8 header, tensor count, then per
    tensor: name length, name, rank, dims, little-endian float64 data.
    All integers are little-endian uint32.
    """
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        raw_header = header.encode("utf-8")
        fh.write(struct.pack("<I", len(raw_header)))
        fh.write(raw_header)
        fh.write(struct.pack("<I", len(items)))
        for name, t in items:
            data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    """Read a checkpoint written by ``save_checkpoint``."""
    def read_exact(fh, n):
        buf = fh.read(n)
        if len(buf) != n:
            raise CheckpointError(f"{path}: truncated checkpoint")
        return buf

    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (hlen,) = struct.unpack("<I", read_exact(fh, 4))
        header = read_exact(fh, hlen).decode("utf-8")
        (count,) = struct.unpack("<I", read_exact(fh, 4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", read_exact(fh, 4))
            name = read_exact(fh, nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}I", read_exact(fh, 4 * rank)) if rank else ()
            size = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(read_exact(fh, 8 * size), dtype="<f8").reshape(dims)
            out[name] = np.array(data, dtype=np.float64)
    return header, out
