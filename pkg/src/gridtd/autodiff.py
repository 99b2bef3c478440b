"""Reverse-mode gradients over a fixed operation set, plus Adam.

A :class:`Tape` records one closure per forward operation.  Each closure reads
the gradient already accumulated on the operation's output and pushes
vector-Jacobian products into its inputs.  Parameter blocks are wrapped as
:class:`Var` objects whose gradient buffer *is* the :class:`ParamStore`
buffer, so the reverse pass accumulates straight into the store.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import InvalidArgument, TapeStateError


class Var:
    __slots__ = ("data", "grad", "name")

    def __init__(self, data, grad: np.ndarray | None = None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g, owned: bool = False) -> None:
        """Add g into the gradient.

        ``owned=True`` promises g is a fresh array nobody else holds, so it can
        become the gradient buffer without a copy.
        """
        g = np.asarray(g, dtype=np.float64)
        if self.grad is None:
            if owned and g.shape == self.data.shape:
                self.grad = g
            else:
                self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=np.float64)
        else:
            self.grad += g

    def grad_buffer(self) -> np.ndarray:
        """Gradient array to accumulate into in place (allocated on first use)."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self):
        return f"Var({self.name or '?'}, shape={self.data.shape})"


def constant(x) -> Var:
    return Var(x)


class Tape:
    """Ordered record of VJP closures for one forward pass."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self.visited: list[str] = []

    def __len__(self):
        return len(self._ops)

    def record(self, backward: Callable[[], None]) -> None:
        self._ops.append(backward)

    def backward(self, out: Var, seed: float = 1.0) -> None:
        if not self._ops:
            raise TapeStateError("backward() called before any forward operation was recorded")
        out.accumulate(np.full(out.data.shape, seed))
        for fn in reversed(self._ops):
            self.visited.append(getattr(fn, "__qualname__", repr(fn)))
            fn()
        self._ops.clear()


# -- generic operations ---------------------------------------------------------

def linear(tape: Tape, x: Var, w: Var, b: Var | None = None) -> Var:
    """y = x @ w.T + b for x of shape (P, n_in), w of shape (n_out, n_in)."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise InvalidArgument(f"width mismatch: input {x.data.shape[-1]} vs weight {w.data.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y += b.data
    out = Var(y)

    def linear_backward():
        g = out.grad
        if g is None:
            return
        w.accumulate(g.T @ x.data)
        if b is not None:
            b.accumulate(g.sum(axis=0))
        x.accumulate(g @ w.data)

    tape.record(linear_backward)
    return out


def relu(tape: Tape, x: Var) -> Var:
    active = x.data > 0
    out = Var(np.where(active, x.data, 0.0))

    def relu_backward():
        if out.grad is not None:
            x.accumulate(out.grad * active)

    tape.record(relu_backward)
    return out


def scaled_tanh(tape: Tape, x: Var, scale: float) -> Var:
    t = np.tanh(x.data)
    out = Var(scale * t)

    def tanh_backward():
        if out.grad is not None:
            x.accumulate(out.grad * scale * (1.0 - t * t))

    tape.record(tanh_backward)
    return out


def exp(tape: Tape, x: Var) -> Var:
    e = np.exp(x.data)
    out = Var(e)

    def exp_backward():
        if out.grad is not None:
            x.accumulate(out.grad * e)

    tape.record(exp_backward)
    return out


def half_sq_dist(tape: Tape, x: Var, target, weight: float = 1.0) -> Var:
    """weight/2 * ||x - target||_F^2 as a scalar Var."""
    r = x.data - target
    out = Var(0.5 * weight * float(np.sum(r * r)))

    def sq_backward():
        if out.grad is not None:
            x.accumulate(out.grad * weight * r)

    tape.record(sq_backward)
    return out


def add_scalars(tape: Tape, *terms: Var) -> Var:
    out = Var(sum(float(t.data) for t in terms))

    def add_backward():
        if out.grad is not None:
            for t in terms:
                t.accumulate(out.grad)

    tape.record(add_backward)
    return out


def scale_scalar(tape: Tape, x: Var, c: float) -> Var:
    out = Var(c * float(x.data))

    def scale_backward():
        if out.grad is not None:
            x.accumulate(c * out.grad)

    tape.record(scale_backward)
    return out


# -- parameters -------------------------------------------------------------------

@dataclass
class ParamStore:
    """Named learnable blocks with same-shape gradient buffers.

    ``groups`` tags each block (``"grid"``, ``"mlp"``, ``"affine"``) so the
    optimiser can use per-group step sizes.
    """

    params: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    groups: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, value, group: str) -> None:
        if name in self.params:
            raise InvalidArgument(f"duplicate parameter block {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.groups[name] = group

    def names(self) -> list[str]:
        return sorted(self.params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def var(self, name: str) -> Var:
        return Var(self.params[name], grad=self.grads[name], name=name)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def size(self, group: str | None = None) -> int:
        return sum(p.size for n, p in self.params.items() if group is None or self.groups[n] == group)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n in self.names():
            out.add(n, self.params[n].copy(), self.groups[n])
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.names()])


DEFAULT_LR = {"grid": 1e-2, "mlp": 1e-3, "affine": 1e-3}


class Adam:
    """Bias-corrected Adam over a ParamStore, one learning rate per group."""

    def __init__(self, store: ParamStore, lr: dict[str, float] | float | None = None,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if lr is None:
            lr = dict(DEFAULT_LR)
        elif not isinstance(lr, dict):
            lr = {g: float(lr) for g in set(store.groups.values()) | set(DEFAULT_LR)}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p) for n, p in store.params.items()}
        self.v = {n: np.zeros_like(p) for n, p in store.params.items()}

    def step(self, store: ParamStore) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in store.names():
            g = store.grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            v *= b2
            if not g.any():
                # zero-gradient block: moments decay, parameters stay put
                continue
            m += (1.0 - b1) * g
            v += (1.0 - b2) * g * g
            lr = self.lr[store.groups[name]]
            store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        store.zero_grad()


def gradient_check(store: ParamStore, loss_fn: Callable[[Tape], Var], h: float = 1e-6) -> dict[str, float]:
    """Relative error between taped and central-difference gradients, per block.

    ``loss_fn`` records a scalar loss on the tape it is given.
    """
    store.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    errors = {}
    for name in store.names():
        p = store.params[name]
        analytic = store.grads[name].copy()
        numeric = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + h
            fp = float(loss_fn(Tape()).data)
            p[i] = orig - h
            fm = float(loss_fn(Tape()).data)
            p[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
        errors[name] = float(np.linalg.norm(analytic - numeric) / scale)
    store.zero_grad()
    return errors
