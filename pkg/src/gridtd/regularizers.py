"""Spatial TV and second-order spatial-temporal (spectral) TV penalties.

Absolute values are replaced by sqrt(x^2 + eps^2) - eps so the penalties can
be minimised by gradient descent; eps -> 0 recovers the exact l1 norms.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tape, Var
from .errors import InvalidArgument

EPS = 1e-8
LAMBDA_UNIT = 4e-6
DEFAULT_LAMBDA1 = 5.0 * LAMBDA_UNIT
DEFAULT_LAMBDA2 = 3.5 * LAMBDA_UNIT


def smooth_abs(x: np.ndarray, eps: float = EPS) -> np.ndarray:
    return np.sqrt(x * x + eps * eps) - eps


def _smooth_abs_grad(x: np.ndarray, eps: float) -> np.ndarray:
    return x / np.sqrt(x * x + eps * eps)


def _check(X: np.ndarray, need_frames: bool) -> None:
    if X.ndim != 3:
        raise InvalidArgument(f"expected a 3rd-order tensor, got order {X.ndim}")
    if X.shape[0] < 2 or X.shape[1] < 2:
        raise InvalidArgument("spatial sizes must be >= 2")
    if need_frames and X.shape[2] < 2:
        raise InvalidArgument("SSTV needs at least 2 frames/bands")


def _diffs_tv(X):
    return np.diff(X, axis=0), np.diff(X, axis=1)


def _diffs_sstv(X):
    Z = np.diff(X, axis=2)
    return np.diff(Z, axis=0), np.diff(Z, axis=1)


def tv(X, eps: float = EPS) -> float:
    X = np.asarray(X, dtype=np.float64)
    _check(X, False)
    dx, dy = _diffs_tv(X)
    return float(smooth_abs(dx, eps).sum() + smooth_abs(dy, eps).sum())


def sstv(X, eps: float = EPS) -> float:
    X = np.asarray(X, dtype=np.float64)
    _check(X, True)
    dx, dy = _diffs_sstv(X)
    return float(smooth_abs(dx, eps).sum() + smooth_abs(dy, eps).sum())


def _check_weights(lam1: float, lam2: float) -> None:
    if lam1 < 0 or lam2 < 0:
        raise InvalidArgument("regularisation weights must be nonnegative")


def reg_loss(X, lam1: float = DEFAULT_LAMBDA1, lam2: float = DEFAULT_LAMBDA2, eps: float = EPS) -> float:
    _check_weights(lam1, lam2)
    total = 0.0
    if lam1:
        total += lam1 * tv(X, eps)
    if lam2:
        total += lam2 * sstv(X, eps)
    return total


# gradients: adjoints of the forward differences

def _diff_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of np.diff along ``axis``."""
    pad = [(0, 0)] * g.ndim
    pad[axis] = (1, 1)
    gp = np.pad(g, pad)
    return -np.diff(gp, axis=axis)


def tv_grad(X: np.ndarray, eps: float = EPS) -> np.ndarray:
    dx, dy = _diffs_tv(X)
    return (_diff_adjoint(_smooth_abs_grad(dx, eps), 0)
            + _diff_adjoint(_smooth_abs_grad(dy, eps), 1))


def sstv_grad(X: np.ndarray, eps: float = EPS) -> np.ndarray:
    dx, dy = _diffs_sstv(X)
    gz = (_diff_adjoint(_smooth_abs_grad(dx, eps), 0)
          + _diff_adjoint(_smooth_abs_grad(dy, eps), 1))
    return _diff_adjoint(gz, 2)


def reg_apply(tape: Tape, X: Var, lam1: float, lam2: float, eps: float = EPS) -> Var:
    """Taped lam1*TV + lam2*SSTV."""
    _check_weights(lam1, lam2)
    x = X.data
    out = Var(reg_loss(x, lam1, lam2, eps))

    def reg_backward():
        if out.grad is None:
            return
        g = np.zeros_like(x)
        if lam1:
            g += lam1 * tv_grad(x, eps)
        if lam2:
            g += lam2 * sstv_grad(x, eps)
        X.accumulate(out.grad * g)

    tape.record(reg_backward)
    return out
