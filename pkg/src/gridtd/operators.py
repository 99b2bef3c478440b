"""Measurement operators: video SCI, spectral (CASSI-style) SCI and inpainting.

Every operator is linear with A A^T diagonal, which gives the X-subproblem

    argmin_X 1/2 ||Y - A X||^2 + rho/2 ||X - (V - U)||^2

the closed form  X = B/rho - A^T[(A B) / (rho (rho + diag(A A^T)))],
with B = A^T Y + rho (V - U).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Var
from .errors import InvalidArgument
from .seeding import substream
from .tensor import validate_shape


def make_bernoulli_masks(shape, p: float = 0.5, seed: int = 0) -> np.ndarray:
    if not 0.0 < p < 1.0:
        raise InvalidArgument(f"p must lie in (0, 1), got {p}")
    shape = validate_shape(shape)
    return (substream(seed, "masks/bernoulli").random(shape) < p).astype(np.float64)


def make_sampling_mask(shape, sr: float, seed: int = 0) -> np.ndarray:
    """Boolean mask with round(sr * size) observed entries, drawn without replacement."""
    if not 0.0 <= sr <= 1.0:
        raise InvalidArgument(f"sampling rate must lie in [0, 1], got {sr}")
    shape = validate_shape(shape)
    size = int(np.prod(shape))
    count = int(round(sr * size))
    mask = np.zeros(size, dtype=bool)
    mask[substream(seed, "masks/sampling").permutation(size)[:count]] = True
    return mask.reshape(shape)


def _check_rho(rho: float) -> None:
    if not rho > 0:
        raise InvalidArgument(f"rho must be positive, got {rho}")


class _DiagGramOperator:
    shape: tuple

    def forward(self, X):
        raise NotImplementedError

    def adjoint(self, Y):
        raise NotImplementedError

    def gram_diag(self) -> np.ndarray:
        raise NotImplementedError

    def measurement_shape(self) -> tuple:
        raise NotImplementedError

    def _check_x(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape != self.shape:
            raise InvalidArgument(f"tensor shape {X.shape} != operator shape {self.shape}")
        return X

    def _check_y(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape != self.measurement_shape():
            raise InvalidArgument(f"measurement shape {Y.shape} != {self.measurement_shape()}")
        return Y

    def x_update(self, V, U, Y, rho: float) -> np.ndarray:
        _check_rho(rho)
        V, U, Y = self._check_x(V), self._check_x(U), self._check_y(Y)
        B = self.adjoint(Y) + rho * (V - U)
        return B / rho - self.adjoint(self.forward(B) / (rho * (rho + self.gram_diag())))

    def fidelity(self, X, Y) -> float:
        r = self.forward(X) - Y
        return 0.5 * float(np.sum(r * r))

    def fidelity_grad(self, X, Y) -> np.ndarray:
        return self.adjoint(self.forward(X) - Y)

    def fidelity_apply(self, tape: Tape, X: Var, Y) -> Var:
        r = self.forward(X.data) - Y
        out = Var(0.5 * float(np.sum(r * r)))

        def fidelity_backward():
            if out.grad is not None:
                X.accumulate(out.grad * self.adjoint(r))

        tape.record(fidelity_backward)
        return out


@dataclass
class VideoSciOperator(_DiagGramOperator):
    masks: np.ndarray

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.masks.ndim != 3:
            raise InvalidArgument("video masks must be (n1, n2, n3)")
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise InvalidArgument("mask entries must be exactly 0 or 1")
        self.shape = self.masks.shape

    def measurement_shape(self):
        return self.shape[:2]

    def forward(self, X):
        return np.sum(self.masks * self._check_x(X), axis=2)

    def adjoint(self, Y):
        return self.masks * self._check_y(Y)[:, :, None]

    def gram_diag(self):
        return np.sum(self.masks * self.masks, axis=2)

    def x_update(self, V, U, Y, rho):
        return x_update_video_sci(self, self._check_x(V), self._check_x(U), self._check_y(Y), rho)


@dataclass
class SpectralSciOperator(_DiagGramOperator):
    """Band t is masked and placed at column offset step*t of a wider canvas."""

    masks: np.ndarray
    step: int = 2

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.masks.ndim != 3:
            raise InvalidArgument("spectral masks must be (n1, n2, n3)")
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise InvalidArgument("mask entries must be exactly 0 or 1")
        if self.step < 1:
            raise InvalidArgument("shift step must be a positive integer")
        self.shape = self.masks.shape

    @property
    def width(self) -> int:
        n2, n3 = self.shape[1], self.shape[2]
        return n2 + self.step * (n3 - 1)

    def measurement_shape(self):
        return (self.shape[0], self.width)

    def forward(self, X):
        X = self._check_x(X)
        n1, n2, n3 = self.shape
        Y = np.zeros((n1, self.width))
        for t in range(n3):
            Y[:, self.step * t:self.step * t + n2] += self.masks[:, :, t] * X[:, :, t]
        return Y

    def adjoint(self, Y):
        Y = self._check_y(Y)
        n1, n2, n3 = self.shape
        X = np.empty(self.shape)
        for t in range(n3):
            X[:, :, t] = self.masks[:, :, t] * Y[:, self.step * t:self.step * t + n2]
        return X

    def gram_diag(self):
        n1, n2, n3 = self.shape
        G = np.zeros((n1, self.width))
        for t in range(n3):
            G[:, self.step * t:self.step * t + n2] += self.masks[:, :, t] ** 2
        return G


@dataclass
class InpaintingOperator(_DiagGramOperator):
    """Keeps the entries where ``observed`` is True, in row-major order."""

    observed: np.ndarray
    shape: tuple = field(init=False)

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=bool)
        self.shape = self.observed.shape
        self._count = int(self.observed.sum())

    @property
    def sampling_rate(self) -> float:
        return self._count / self.observed.size

    def measurement_shape(self):
        return (self._count,)

    def forward(self, X):
        return self._check_x(X)[self.observed]

    def adjoint(self, Y):
        X = np.zeros(self.shape)
        X[self.observed] = self._check_y(Y)
        return X

    def gram_diag(self):
        return np.ones(self._count)

    def x_update(self, V, U, Y, rho):
        return x_update_inpaint(self, self._check_x(V), self._check_x(U), self._check_y(Y), rho)


def video_sci_forward(op: VideoSciOperator, X):
    return op.forward(X)


def video_sci_adjoint(op: VideoSciOperator, Y):
    return op.adjoint(Y)


def spectral_sci_forward(op: SpectralSciOperator, X):
    return op.forward(X)


def inpaint_forward(op: InpaintingOperator, X):
    return op.forward(X)


def x_update_video_sci(op: VideoSciOperator, V, U, Y, rho):
    """Per-frame closed form X_t = B_t/rho - M_t * sum_t(M_t B_t) / (rho^2 + rho sum_t M_t^2)."""
    _check_rho(rho)
    M = op.masks
    B = rho * (np.asarray(V) - np.asarray(U)) + M * np.asarray(Y)[:, :, None]
    num = np.sum(M * B, axis=2)
    den = rho * rho + rho * np.sum(M * M, axis=2)
    return B / rho - (num / den)[:, :, None] * M


def x_update_spectral_sci(op: SpectralSciOperator, V, U, Y, rho):
    return op.x_update(V, U, Y, rho)


def x_update_inpaint(op: InpaintingOperator, V, U, y, rho):
    _check_rho(rho)
    X = np.asarray(V, dtype=np.float64) - np.asarray(U, dtype=np.float64)
    X[op.observed] = (np.asarray(y) + rho * X[op.observed]) / (1.0 + rho)
    return X


def fidelity_lipschitz_bound(op: VideoSciOperator, X, Y) -> float:
    """(sqrt(n3)*||X||_F + ||Y||_F) * sqrt(sum_t ||M_t||_F^2)."""
    X = np.asarray(X, dtype=np.float64)
    n3 = X.shape[2]
    return float((np.sqrt(n3) * np.linalg.norm(X) + np.linalg.norm(Y)) * np.sqrt(np.sum(op.masks ** 2)))
