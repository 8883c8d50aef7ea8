"""Dense float64 tensors with reverse-mode gradient accumulation.

Every operation computes its result eagerly with numpy and, when a Tape is
active, records a backward closure. ``Tape.backward`` replays the closures in
exact reverse execution order, accumulating (never overwriting) gradients, so
parameters that appear several times in one forward pass receive summed
gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "add",
    "sub",
    "scale",
    "relu",
    "concat",
    "stack_rows",
    "unstack_rows",
    "gather_rows",
    "conv1d_same",
    "max_over_time",
    "lstm_cell",
    "softmax_cross_entropy",
    "index_sum",
    "grad_check",
    "glorot_uniform",
    "uniform_init",
]


class Tensor:
    """A dense float64 array plus an accumulated-gradient buffer of the same shape."""

    __slots__ = ("values", "grad")

    def __init__(self, values) -> None:
        v = np.asarray(values, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.values = v if v.flags["C_CONTIGUOUS"] else np.ascontiguousarray(v)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


# Stack of active tapes; ops record onto the innermost one. Single-threaded by
# design: a tape is built and replayed on one thread.
_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives for one backward pass."""

    def __init__(self) -> None:
        self._steps: list[Callable[[], None]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._steps)

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Seed the loss gradient and replay recorded steps in reverse order."""
        if loss.values.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        loss.grad += seed
        for step in reversed(self._steps):
            step()


def _record(step: Callable[[], None]) -> None:
    if _TAPES:
        _TAPES[-1]._steps.append(step)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Accepts (m,p)@(p,q), (p,)@(p,q) and (m,p)@(p,).

    Backward: dA = dC.B^T, dB = A^T.dC (with the obvious vector reshapes).
    """
    if a.values.ndim not in (1, 2) or b.values.ndim not in (1, 2):
        raise ValueError(f"matmul needs 1-D or 2-D operands, got {a.shape} and {b.shape}")
    if a.values.shape[-1] != b.values.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.values @ b.values)

    def backward() -> None:
        g = out.grad
        av = a.values if a.values.ndim == 2 else a.values[None, :]
        bv = b.values if b.values.ndim == 2 else b.values[:, None]
        gm = g.reshape(av.shape[0], bv.shape[1])
        a.grad += (gm @ bv.T).reshape(a.values.shape)
        b.grad += (av.T @ gm).reshape(b.values.shape)

    _record(backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also allows adding a 1-D bias to every row of a matrix."""
    if a.shape == b.shape:
        out = Tensor(a.values + b.values)

        def backward() -> None:
            a.grad += out.grad
            b.grad += out.grad

    elif a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
        out = Tensor(a.values + b.values[None, :])

        def backward() -> None:
            a.grad += out.grad
            b.grad += out.grad.sum(axis=0)

    else:
        raise ValueError(f"add shapes disagree: {a.shape} vs {b.shape}")
    _record(backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shapes disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.values - b.values)

    def backward() -> None:
        a.grad += out.grad
        b.grad -= out.grad

    _record(backward)
    return out


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.values * k)

    def backward() -> None:
        a.grad += out.grad * k

    _record(backward)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0
    out = Tensor(np.where(mask, x.values, 0.0))

    def backward() -> None:
        x.grad += out.grad * mask

    _record(backward)
    return out


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the feature (last) axis; leading dimensions must agree."""
    if not parts:
        raise ValueError("concat needs at least one input")
    ndim = parts[0].values.ndim
    for p in parts:
        if p.values.ndim != ndim:
            raise ValueError("concat inputs must share rank")
        if ndim == 2 and p.shape[0] != parts[0].shape[0]:
            raise ValueError(
                f"concat leading dimensions disagree: {p.shape} vs {parts[0].shape}"
            )
    axis = ndim - 1
    out = Tensor(np.concatenate([p.values for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]

    def backward() -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            if axis == 0:
                p.grad += out.grad[offset : offset + size]
            else:
                p.grad += out.grad[:, offset : offset + size]
            offset += size

    _record(backward)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack n vectors of equal length into an (n, d) matrix."""
    if not rows:
        raise ValueError("stack_rows needs at least one row")
    out = Tensor(np.stack([r.values for r in rows], axis=0))

    def backward() -> None:
        for i, r in enumerate(rows):
            r.grad += out.grad[i]

    _record(backward)
    return out


def unstack_rows(mat: Tensor) -> list[Tensor]:
    """Split an (n, d) matrix into n vectors; inverse of stack_rows."""
    if mat.values.ndim != 2:
        raise ValueError(f"unstack_rows needs a matrix, got {mat.shape}")
    rows = []
    for i in range(mat.shape[0]):
        row = Tensor(mat.values[i])

        def backward(i=i, row=row) -> None:
            mat.grad[i] += row.grad

        _record(backward)
        rows.append(row)
    return rows


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows table[indices]; backward scatter-adds (repeats accumulate)."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("gather_rows needs a flat index list")
    out = Tensor(table.values[idx])

    def backward() -> None:
        np.add.at(table.grad, idx, out.grad)

    _record(backward)
    return out


def conv1d_same(seq: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """1-D convolution over an (n, e) sequence with (w, e, f) filters.

    Zero padding keeps the output length at n; for even widths the extra pad
    column goes on the left. Returns the linear response (no activation).
    """
    n, e = seq.shape
    w, ef, f = filters.shape
    if ef != e:
        raise ValueError(f"conv1d_same channel mismatch: seq {seq.shape} vs filters {filters.shape}")
    if bias.shape != (f,):
        raise ValueError(f"conv1d_same bias shape {bias.shape} != ({f},)")
    left = w // 2
    padded = np.zeros((n + w - 1, e))
    padded[left : left + n] = seq.values
    out_values = np.tile(bias.values, (n, 1))
    for j in range(w):
        out_values += padded[j : j + n] @ filters.values[j]
    out = Tensor(out_values)

    def backward() -> None:
        g = out.grad
        bias.grad += g.sum(axis=0)
        dpad = np.zeros_like(padded)
        for j in range(w):
            dpad[j : j + n] += g @ filters.values[j].T
            filters.grad[j] += padded[j : j + n].T @ g
        seq.grad += dpad[left : left + n]

    _record(backward)
    return out


def max_over_time(seq: Tensor) -> Tensor:
    """Per-channel maximum over positions of an (n, f) sequence.

    Backward routes each channel's gradient to its argmax position only; ties
    go to the lowest position index.
    """
    if seq.values.ndim != 2 or seq.shape[0] < 1:
        raise ValueError(f"max_over_time needs a non-empty (n, f) input, got {seq.shape}")
    idx = seq.values.argmax(axis=0)
    out = Tensor(seq.values[idx, np.arange(seq.shape[1])])

    def backward() -> None:
        seq.grad[idx, np.arange(seq.shape[1])] += out.grad

    _record(backward)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def lstm_cell(
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> tuple[Tensor, Tensor]:
    """One LSTM step: sigmoid input/forget/output gates, tanh candidate, no peepholes.

    Gate blocks in ``wx``/``wh``/``b`` are ordered [input, forget, candidate,
    output]; the forget block of ``b`` is the one initialised to 1.
    """
    e = x.shape[0]
    hd = h_prev.shape[0]
    if wx.shape != (e, 4 * hd) or wh.shape != (hd, 4 * hd) or b.shape != (4 * hd,):
        raise ValueError(
            f"lstm_cell parameter shapes disagree with x {x.shape}, h {h_prev.shape}: "
            f"wx {wx.shape}, wh {wh.shape}, b {b.shape}"
        )
    z = x.values @ wx.values + h_prev.values @ wh.values + b.values
    i = _sigmoid(z[:hd])
    f = _sigmoid(z[hd : 2 * hd])
    g = np.tanh(z[2 * hd : 3 * hd])
    o = _sigmoid(z[3 * hd :])
    c_new = f * c_prev.values + i * g
    tc = np.tanh(c_new)
    h_out = Tensor(o * tc)
    c_out = Tensor(c_new)

    def backward() -> None:
        dh = h_out.grad
        dc = c_out.grad + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev.values * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ]
        )
        c_prev.grad += dc * f
        x.grad += wx.values @ dz
        h_prev.grad += wh.values @ dz
        wx.grad += np.outer(x.values, dz)
        wh.grad += np.outer(h_prev.values, dz)
        b.grad += dz

    _record(backward)
    return h_out, c_out


def softmax_cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """-log softmax(logits)[gold] via a shifted log-sum-exp; gradient softmax - onehot."""
    if logits.values.ndim != 1:
        raise ValueError(f"softmax_cross_entropy needs a 1-D logit vector, got {logits.shape}")
    c = logits.shape[0]
    if not 0 <= gold < c:
        raise ValueError(f"gold label {gold} out of range for {c} classes")
    m = logits.values.max()
    lse = m + np.log(np.exp(logits.values - m).sum())
    out = Tensor(lse - logits.values[gold])
    probs = np.exp(logits.values - lse)

    def backward() -> None:
        g = float(out.grad)
        logits.grad += g * probs
        logits.grad[gold] -= g

    _record(backward)
    return out


def index_sum(t: Tensor, rows, cols) -> Tensor:
    """Sum of t[rows[k], cols[k]] over k; backward scatter-adds into those cells."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if r.shape != c.shape or r.ndim != 1:
        raise ValueError("index_sum needs matching flat row/col index lists")
    out = Tensor(t.values[r, c].sum())

    def backward() -> None:
        np.add.at(t.grad, (r, c), float(out.grad))

    _record(backward)
    return out


# ---------------------------------------------------------------------------
# verification and initialisation helpers
# ---------------------------------------------------------------------------


def grad_check(
    function: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Compare tape gradients against central finite differences.

    ``function`` must be a deterministic scalar-valued closure over ``inputs``.
    Returns max over all input elements of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = function()
    if out.values.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    tape.backward(out)
    analytic = [t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.values.reshape(-1)
        ana_flat = ana.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = function().item()
            flat[k] = orig - epsilon
            down = function().item()
            flat[k] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(ana_flat[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(ana_flat[k] - numeric) / denom)
    return worst


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape))


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape))
