"""Dense float64 kernels with hand-written backward passes.

Everything operates on plain numpy arrays (C-order, double precision).
Each forward op has a matching ``*_backward`` that maps the upstream
gradient to gradients of the op's inputs; models chain these by hand in
reverse order. There is no autodiff graph. All sampling goes through
:class:`Rng`, a counter-based generator whose streams are addressable by
(seed, tag, epoch), so any draw can be reproduced without replaying the
ones before it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray

MASK64 = (1 << 64) - 1


class NumericError(RuntimeError):
    """A tensor went non-finite or an update was fed a bad gradient."""


def _require_finite(name: str, x: Array) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {name}")


def as_f64(x) -> Array:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Deterministic random streams
# ---------------------------------------------------------------------------


def _tag64(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


class Rng:
    """Named, portable random streams backed by the Philox-4x64 generator.

    Stepping rule: a stream is addressed by ``(seed, tag, epoch)``. The
    128-bit Philox key is ``[seed, blake2b-64(tag)]`` and ``epoch`` is
    placed in the top word of the 256-bit counter, so consecutive epochs
    can never consume each other's blocks. Identical addresses reproduce
    identical values on every platform, independent of how many draws any
    other stream has made. This is what makes checkpoint resume and the
    single-task reduction exact: adding a consumer of a *new* tag never
    perturbs existing streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64

    def stream(self, tag: str, epoch: int = 0) -> np.random.Generator:
        """A fresh generator for (seed, tag, epoch)."""
        bitgen = np.random.Philox(key=[self.seed, _tag64(tag)], counter=[0, 0, 0, int(epoch) & MASK64])
        return np.random.Generator(bitgen)


# ---------------------------------------------------------------------------
# Parameters and the Adam optimizer
# ---------------------------------------------------------------------------


@dataclass
class Param:
    """One trainable tensor with its gradient and Adam moments."""

    value: Array
    grad: Array = field(init=False)
    m: Array = field(init=False)
    v: Array = field(init=False)

    def __post_init__(self):
        self.value = as_f64(self.value)
        _require_finite("parameter init", self.value)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParamStore:
    """All trainable tensors of one model, addressed by stable string ids.

    The Adam step counter is shared across every parameter in the store;
    an update call advances it once regardless of how many parameters
    participate.
    """

    def __init__(self):
        self._params: dict[str, Param] = {}
        self.step = 0

    def add(self, pid: str, value) -> Param:
        if pid in self._params:
            raise KeyError(f"parameter {pid!r} already registered")
        p = Param(value)
        self._params[pid] = p
        return p

    def __contains__(self, pid: str) -> bool:
        return pid in self._params

    def __getitem__(self, pid: str) -> Param:
        try:
            return self._params[pid]
        except KeyError:
            raise KeyError(f"unknown parameter {pid!r}") from None

    def ids(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def value(self, pid: str) -> Array:
        return self[pid].value

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def adam_step(self, pids=None, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Bias-corrected Adam update for the listed parameters.

        Gradients of the stepped parameters are zeroed afterwards. The
        shared step counter advances exactly once per call.
        """
        if pids is None:
            pids = self.ids()
        self.step += 1
        t = self.step
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for pid in pids:
            p = self[pid]
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {pid!r}")
            p.m[...] = beta1 * p.m + (1.0 - beta1) * p.grad
            p.v[...] = beta2 * p.v + (1.0 - beta2) * (p.grad * p.grad)
            p.value[...] -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
            p.grad[...] = 0.0


def project_norm(t: Array, max_norm: float) -> Array:
    """Scale rows of ``t`` in place so every row has L2 norm <= max_norm.

    Rows are slices along the first axis with the remaining axes
    flattened, so for a stack of matrices this bounds each matrix's
    Frobenius norm. A 1-D input is treated as a single row. Rows already
    inside the ball are left untouched, which makes the projection
    idempotent.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    rows = t.reshape(1, -1) if t.ndim == 1 else t.reshape(t.shape[0], -1)
    norms = np.sqrt(np.sum(rows * rows, axis=1))
    over = norms > max_norm
    if np.any(over):
        rows[over] *= (max_norm / norms[over])[:, None]
    return t


# ---------------------------------------------------------------------------
# Forward/backward primitives
# ---------------------------------------------------------------------------


def gather(table: Array, ids: Array) -> Array:
    """Row lookup ``table[ids]`` with bounds checking."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"gather id out of range [0, {table.shape[0]})")
    return table[ids]


def gather_backward(g: Array, table_shape: tuple, ids: Array) -> Array:
    """Scatter-add the row gradients; duplicate ids accumulate."""
    out = np.zeros(table_shape)
    np.add.at(out, np.asarray(ids), g)
    return out


def scatter_add(grad_table: Array, ids: Array, g: Array) -> None:
    """In-place variant of :func:`gather_backward` for accumulation."""
    np.add.at(grad_table, np.asarray(ids), g)


def affine(x: Array, W: Array, b: Array) -> Array:
    """``x @ W + b`` for x of shape [B, d], W [d, h], b [h]."""
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(f"affine shape mismatch: x{x.shape} W{W.shape} b{b.shape}")
    out = x @ W + b
    _require_finite("affine output", out)
    return out


def affine_backward(g: Array, x: Array, W: Array) -> tuple[Array, Array, Array]:
    """Returns (dx, dW, db)."""
    return g @ W.T, x.T @ g, g.sum(axis=0)


def tanh(x: Array) -> Array:
    return np.tanh(x)


def tanh_backward(g: Array, y: Array) -> Array:
    # y is the forward output tanh(x)
    return g * (1.0 - y * y)


def sigmoid(x: Array) -> Array:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(g: Array, y: Array) -> Array:
    return g * y * (1.0 - y)


def concat(xs: list[Array]) -> Array:
    """Concatenate along the last axis."""
    return np.concatenate(xs, axis=-1)


def concat_backward(g: Array, widths: list[int]) -> list[Array]:
    """Split the upstream gradient back into per-input pieces."""
    if sum(widths) != g.shape[-1]:
        raise ValueError("concat_backward widths do not sum to gradient width")
    out = []
    off = 0
    for w in widths:
        out.append(g[..., off:off + w])
        off += w
    return out


def hadamard(x: Array, y: Array) -> Array:
    if x.shape != y.shape:
        raise ValueError(f"hadamard shape mismatch: {x.shape} vs {y.shape}")
    return x * y


def hadamard_backward(g: Array, x: Array, y: Array) -> tuple[Array, Array]:
    return g * y, g * x


def bilinear_slices(e1: Array, T: Array, e2: Array) -> Array:
    """Per-slice bilinear forms: out[b, k] = e1[b] @ T[:, :, k] @ e2[b].

    e1, e2 have shape [B, n]; T has shape [n, n, s]; output is [B, s].
    """
    if T.ndim != 3 or e1.shape[1] != T.shape[0] or e2.shape[1] != T.shape[1]:
        raise ValueError(f"bilinear shape mismatch: e1{e1.shape} T{T.shape} e2{e2.shape}")
    return np.einsum("bi,ijk,bj->bk", e1, T, e2, optimize=True)


def bilinear_slices_backward(g: Array, e1: Array, T: Array, e2: Array) -> tuple[Array, Array, Array]:
    """Returns (de1, dT, de2) for upstream gradient g of shape [B, s]."""
    de1 = np.einsum("bk,ijk,bj->bi", g, T, e2, optimize=True)
    de2 = np.einsum("bk,ijk,bi->bj", g, T, e1, optimize=True)
    dT = np.einsum("bk,bi,bj->ijk", g, e1, e2, optimize=True)
    return de1, dT, de2


def dropout(x: Array, rate: float, gen: np.random.Generator | None,
            training: bool) -> tuple[Array, Array | None]:
    """Inverted dropout. Returns (output, mask); mask is None in eval mode.

    In training mode each unit is zeroed with probability ``rate`` and the
    survivors are scaled by 1/(1-rate), so the expected activation matches
    eval mode, where the op is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    keep = (gen.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(g: Array, mask: Array | None) -> Array:
    return g if mask is None else g * mask


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

# Above this many elements only a random sample of coordinates is probed.
_GRAD_CHECK_FULL_LIMIT = 10_000
_GRAD_CHECK_SAMPLE = 256


def grad_check(loss_fn, store: ParamStore, pids=None, h: float = 1e-5,
               seed: int = 0) -> float:
    """Compare backprop gradients against central differences.

    ``loss_fn()`` must return a scalar loss and accumulate gradients into
    ``store``; it is re-invoked with perturbed parameter values to form
    the numeric estimate (loss only, gradients discarded). Returns the
    worst relative error max(|a - n|) / max(1, |a|, |n|) over all probed
    coordinates. Tensors larger than 10^4 elements are subsampled at 256
    random coordinates.
    """
    if pids is None:
        pids = store.ids()
    if not pids:
        return 0.0
    store.zero_grads()
    loss_fn()
    analytic = {pid: store[pid].grad.copy() for pid in pids}
    gen = Rng(seed).stream("grad-check")
    worst = 0.0
    for pid in pids:
        val = store[pid].value
        n = val.size
        if n > _GRAD_CHECK_FULL_LIMIT:
            coords = gen.choice(n, size=_GRAD_CHECK_SAMPLE, replace=False)
        else:
            coords = range(n)
        flat = val.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            store.zero_grads()
            lp = loss_fn()
            flat[i] = orig - h
            store.zero_grads()
            lm = loss_fn()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            a = analytic[pid].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    store.zero_grads()
    return worst
