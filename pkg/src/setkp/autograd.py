"""Dense float64 tensors with tape-based reverse-mode differentiation.

Small by design: a handful of primitives, each with a hand-derived backward
rule, recorded on an explicit Tape and replayed in reverse. No broadcasting
magic beyond what numpy gives us, no views into graph tensors, no GPU.
Gradients are exact up to float64 round-off; `grad_check` compares them
against central finite differences.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12  # probability floor inside log-loss primitives

_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """Immutable-by-convention value node.

    `data` is a float64 ndarray. Intermediate tensors must never be written
    to after creation; parameter leaves (requires_grad=True) are mutated only
    by optimizers and finite-difference probes, never mid-graph.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # operator sugar; all routing through the module-level primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed primitives.

    Each node is (output, parents, backward_fn). Backward replays the list
    in reverse exactly once, accumulating parent gradients by summation, so
    fan-out in the DAG sums naturally. Entering a tape makes it the active
    recorder for the current thread; tapes must not be nested.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("tapes do not nest")
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = None

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad for every tensor on the tape.

        loss must be a scalar recorded on this tape. Grads of all tensors
        touched by the tape are reset first, so repeated backward calls over
        one tape never mix.
        """
        if loss.data.shape != ():
            raise ValueError("backward expects a scalar loss")
        for out, parents, _ in self.nodes:
            out.grad = None
            for p in parents:
                p.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for out, parents, back in reversed(self.nodes):
            if out.grad is None:
                continue
            gs = back(out.grad)
            for p, g in zip(parents, gs):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += g


@contextlib.contextmanager
def no_grad():
    """Suspend recording on the current thread's active tape, if any."""
    prev = _active_tape()
    _tls.tape = None
    try:
        yield
    finally:
        _tls.tape = prev


def _record(out: Tensor, parents: tuple[Tensor, ...], back: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, parents, back))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- primitives


# Backward closures must bind operand arrays at op-construction time (the
# `ad`/`bd` locals below): optimizers rebind parameter .data between steps,
# and the staged schedule re-differentiates graphs built before a rebind.


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ash, bsh = a.data.shape, b.data.shape
    out = Tensor(a.data + b.data)
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh))
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (n,k) @ b (k,m) -> (n,m). 2-D only."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy())
    return _record(out, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    out = Tensor(a.data.reshape(shape).copy())
    return _record(out, (a,), lambda g: (g.reshape(old),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def gather(a: Tensor, idx) -> Tensor:
    """Rows of a indexed along axis 0 by an integer array of any shape.

    a (n, ...) with idx shape I -> out shape I + a.shape[1:]. Backward
    scatter-adds, so repeated indices accumulate.
    """
    idx = np.asarray(idx, dtype=np.intp)
    shape, dtype = a.data.shape, a.data.dtype
    out = Tensor(a.data[idx])

    def back(g):
        buf = np.zeros(shape, dtype=dtype)
        np.add.at(buf, idx, g)
        return (buf,)

    return _record(out, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


def sum_rows(a: Tensor) -> Tensor:
    """(n, d) -> (d,): sum over axis 0."""
    out = Tensor(a.data.sum(axis=0))
    n = a.data.shape[0]
    return _record(out, (a,), lambda g: (np.tile(g, (n, 1)),))


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """List of (d,) vectors -> (n, d). Row i depends only on parts[i]."""
    out = Tensor(np.stack([p.data for p in parts], axis=0))
    return _record(out, tuple(parts), lambda g: tuple(g[i] for i in range(len(parts))))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Shift-invariant softmax along `axis`."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), back)


def log(a: Tensor) -> Tensor:
    """Elementwise log with the probability floor; flat below the floor."""
    clipped = np.maximum(a.data, LOG_FLOOR)
    out = Tensor(np.log(clipped))
    live = a.data >= LOG_FLOOR
    return _record(out, (a,), lambda g: (g * live / clipped,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of x (…, d) to zero mean / unit variance, then affine."""
    gd = gain.data
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gd + bias.data)

    def back(g):
        gg = g * gd
        gx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return (gx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return _record(out, (x, gain, bias), back)


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    biases: Sequence[Tensor] | None,
    n_heads: int,
    inv_scale: float,
    mask: np.ndarray | None = None,
    weights_out: list | None = None,
) -> Tensor:
    """Fused multi-head attention.

    q (Tq,d), k/v (Tk,d); head h uses columns [h*dh:(h+1)*dh]. Per head:
    logits = (q_h k_h^T + bias_h) * inv_scale + mask, rows softmaxed, output
    rows concatenated back to (Tq,d). `biases` is one (Tq,Tk) tensor per head
    (learned relative-position term) or None. `mask` is an additive constant
    (0 / -inf). Fusing keeps the tape short; the backward below is the
    textbook attention gradient done per head.
    """
    qd, kd, vd = q.data, k.data, v.data
    Tq, d = qd.shape
    dh = d // n_heads
    if d % n_heads:
        raise ValueError("width not divisible by head count")

    As = []
    outd = np.empty((Tq, d))
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        logits = qd[:, sl] @ kd[:, sl].T
        if biases is not None:
            logits = logits + biases[h].data
        logits = logits * inv_scale
        if mask is not None:
            logits = logits + mask
        mx = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - mx)
        A = e / e.sum(axis=1, keepdims=True)
        As.append(A)
        outd[:, sl] = A @ vd[:, sl]
    if weights_out is not None:
        weights_out.extend(As)
    out = Tensor(outd)

    parents: tuple[Tensor, ...]
    if biases is not None:
        parents = (q, k, v, *biases)
    else:
        parents = (q, k, v)

    def back(g):
        gq = np.zeros_like(qd)
        gk = np.zeros_like(kd)
        gv = np.zeros_like(vd)
        gbs = []
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            A = As[h]
            gout = g[:, sl]
            gA = gout @ vd[:, sl].T
            gv[:, sl] = A.T @ gout
            glog = A * (gA - (gA * A).sum(axis=1, keepdims=True))
            gbs.append(glog * inv_scale)
            gs = glog * inv_scale
            gq[:, sl] = gs @ kd[:, sl]
            gk[:, sl] = gs.T @ qd[:, sl]
        if biases is not None:
            return (gq, gk, gv, *gbs)
        return (gq, gk, gv)

    return _record(out, parents, back)


def cross_entropy(p: Tensor, target_index: int, weight: float = 1.0) -> Tensor:
    """-weight * log p[target_index] for a probability vector p (floored)."""
    if p.data.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D probability vector")
    t = int(target_index)
    pv = max(float(p.data[t]), LOG_FLOOR)
    out = Tensor(-weight * np.log(pv))

    def back(g):
        gp = np.zeros_like(p.data)
        if p.data[t] >= LOG_FLOOR:
            gp[t] = -weight * float(g) / pv
        return (gp,)

    return _record(out, (p,), back)


def weighted_nll(probs: Tensor, targets, weights) -> Tensor:
    """sum_r -weights[r] * log probs[r, targets[r]], probabilities floored.

    probs (R, V); targets int (R,); weights float (R,). Rows with weight 0
    contribute nothing and receive no gradient.
    """
    targets = np.asarray(targets, dtype=np.intp)
    w = np.asarray(weights, dtype=np.float64)
    rows = np.arange(probs.data.shape[0])
    picked = probs.data[rows, targets]
    clipped = np.maximum(picked, LOG_FLOOR)
    out = Tensor(-(w * np.log(clipped)).sum())

    def back(g):
        gp = np.zeros_like(probs.data)
        live = picked >= LOG_FLOOR
        gp[rows, targets] = -float(g) * w * live / clipped
        return (gp,)

    return _record(out, (probs,), back)


# --------------------------------------------------------------- grad check


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    n_coords: int = 50,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    f() must rebuild its graph from scratch on every call and depend on the
    parameters only through their .data. Coordinates are sampled uniformly
    across all parameters.
    """
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    grads = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
             for name, p in params.items()}

    coords = []
    for name, p in params.items():
        for flat in range(p.data.size):
            coords.append((name, flat))
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in pick]

    worst = 0.0
    for name, flat in coords:
        p = params[name]
        base = p.data.flat[flat]
        p.data.flat[flat] = base + step
        hi = f().item()
        p.data.flat[flat] = base - step
        lo = f().item()
        p.data.flat[flat] = base
        numeric = (hi - lo) / (2.0 * step)
        analytic = grads[name].flat[flat]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
