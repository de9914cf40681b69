"""Minimal deterministic reverse-mode differentiation on float64 arrays.

The graph is a tape of ``Tensor`` nodes; each operation records a closure
that routes the upstream gradient to its inputs with the exact analytic
rule.  Everything runs in 64-bit and single-threaded numpy, so identical
inputs give bitwise-identical outputs, which the training-equivalence and
determinism tests rely on.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

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
        return float(self.data)

    def detach(self) -> "Tensor":
        """Forward-identity node with no parents: a hard gradient barrier.

        The returned tensor shares the underlying buffer but carries no
        history, so no backward pass can reach anything upstream of it.
        """
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable node."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.data.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf: value plus gradient and Adam accumulators.

    ``grad`` is always an allocated array (zero after ``zero_grad``), so
    barrier tests can assert exact zeros rather than ``None``.
    """

    __slots__ = ("adam_m", "adam_v", "step_count", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.data.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; graphs are small but batch loops run many of them.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += grad


def _make_node(data: np.ndarray, parents: tuple[Tensor, ...],
               backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b`` for a batch of row vectors.

    ``x`` is [B, D_in], ``w`` is [D_in, D_out], ``b`` is [D_out] or None
    for a bias-free projection.  Backward accumulates the exact analytic
    gradients into ``w`` and ``b`` and propagates d/dx.
    """
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"linear expects 2-D input and weight, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"linear: input width {x.data.shape[1]} does not match weight rows {w.data.shape[0]}")
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: bias shape {b.data.shape} does not match output width {w.data.shape[1]}")

    y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g @ w.data.T)
        _accumulate(w, x.data.T @ g)
        if b is not None:
            _accumulate(b, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make_node(y, parents, backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is taken to be 0."""
    mask = x.data > 0.0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _make_node(np.maximum(x.data, 0.0), (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _make_node(a.data + b.data, (a, b), backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"multiply: shapes {a.data.shape} and {b.data.shape} differ")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make_node(a.data * b.data, (a, b), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """View with a new shape; gradient is reshaped back."""
    original = x.data.shape

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(original))

    return _make_node(x.data.reshape(shape), (x,), backward)


def embedding_mean(table: Tensor, token_ids: np.ndarray) -> Tensor:
    """Mean of embedding rows per sample: [B, T] ids over [V, E] -> [B, E].

    Backward scatters g / T into the looked-up rows (np.add.at, which is
    deterministic for repeated indices).
    """
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ShapeError(f"embedding_mean expects [B, T] token ids, got shape {ids.shape}")
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_mean expects a 2-D table, got {table.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding_mean: token id out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}")
    n_tokens = ids.shape[1]
    out = table.data[ids].mean(axis=1)

    def backward(g: np.ndarray) -> None:
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        per_token = np.repeat(g / n_tokens, n_tokens, axis=0)
        np.add.at(table.grad, ids.reshape(-1), per_token)

    return _make_node(out, (table,), backward)


def softmax(z) -> np.ndarray | Tensor:
    """Row-wise softmax with max-subtraction for overflow safety.

    Accepts a 1-D or 2-D array or Tensor and returns the same kind.  This
    is a forward-only transform: gradients of the classification loss go
    through :func:`weighted_cross_entropy`, and every other consumer of
    softmax output (bias factors, evaluation) treats it as a constant.
    """
    is_tensor = isinstance(z, Tensor)
    a = z.data if is_tensor else np.asarray(z, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    if squeeze:
        p = p[0]
    return Tensor(p) if is_tensor else p


def _check_targets(targets: np.ndarray, n_classes: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim != 1:
        raise ShapeError(f"targets must be 1-D, got shape {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        raise ShapeError(f"targets must be integers, got dtype {t.dtype}")
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise ShapeError(f"target out of range [0, {n_classes}): min={t.min()}, max={t.max()}")
    return t


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Numerically stable row-wise log-softmax on a plain array."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_per_sample(logits: np.ndarray, targets) -> np.ndarray:
    """Unweighted per-sample cross entropy, -log softmax(logits)[i, t_i]."""
    t = _check_targets(targets, logits.shape[1])
    logp = log_softmax_rows(np.asarray(logits, dtype=np.float64))
    return -logp[np.arange(len(t)), t]


def weighted_cross_entropy(logits: Tensor, targets, weights) -> Tensor:
    """Mean of per-sample cross entropy scaled by constant weights.

    Returns -(1/B) * sum_i weights[i] * log softmax(logits[i])[targets[i]].
    The weights carry no gradient; backward produces the analytic
    softmax-CE gradient scaled by weights[i] / B on each row.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"weighted_cross_entropy expects [B, C] logits, got {logits.data.shape}")
    batch, n_classes = logits.data.shape
    t = _check_targets(targets, n_classes)
    if t.shape[0] != batch:
        raise ShapeError(f"targets length {t.shape[0]} does not match batch {batch}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (batch,):
        raise ShapeError(f"weights shape {w.shape} does not match batch ({batch},)")
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError(f"weights must lie in [0, 1], got range [{w.min()}, {w.max()}]")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(e.sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    loss = -np.sum(w * logp[rows, t]) / batch

    def backward(g: np.ndarray) -> None:
        d = probs.copy()
        d[rows, t] -= 1.0
        d *= (w * (float(g) / batch))[:, None]
        _accumulate(logits, d)

    return _make_node(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# Optimizer and gradient verification
# ---------------------------------------------------------------------------

def zero_grad(params: Iterable[Parameter]) -> None:
    """Reset gradients to exact zeros in place."""
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad[...] = 0.0


def adam_step(params: Iterable[Parameter], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place.

    Gradients are left untouched; the caller zeroes them after the step.
    """
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        p.adam_m[...] = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v[...] = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its graph on every call from the live parameter
    values and must not itself depend on stored gradients.  The error for
    each entry is |analytic - fd| / max(1, |fd|); the max over all entries
    of all parameters is returned.
    """
    zero_grad(params)
    f().backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = float(f().data)
            flat[i] = saved - h
            f_minus = float(f().data)
            flat[i] = saved
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(gflat[i] - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    zero_grad(params)
    return worst
