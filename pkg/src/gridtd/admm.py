"""Plug-and-play ADMM with a grid-encoded network as the prior.

Each outer iteration runs

    X <- closed-form data step          (operator specific)
    V <- a few Adam steps on  rho/2 ||V_theta - (X + U)||^2 + lam1 TV + lam2 SSTV
    U <- U + X - V,   rho <- kappa * rho

The network parameters are warm-started across outer iterations.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tape
from .errors import DivergenceError, InvalidArgument
from .metrics import psnr
from .model import GridTDModel
from .regularizers import DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, reg_apply, sstv, tv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    outer_iters: int = 100
    inner_steps: int = 50
    rho0: float = 1e-2
    kappa: float = 1.1
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2
    use_affine: bool = False
    seed: int = 0
    early_stop: float | None = None
    lr_grid: float = 1e-2
    lr_net: float = 1e-3

    def __post_init__(self):
        if self.outer_iters < 1:
            raise InvalidArgument("outer_iters must be >= 1")
        if self.inner_steps < 1:
            raise InvalidArgument("inner_steps must be >= 1")
        if not self.rho0 > 0:
            raise InvalidArgument("rho0 must be positive")
        if not self.kappa > 1:
            raise InvalidArgument("kappa must be > 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidArgument("lambda1 and lambda2 must be nonnegative")
        if self.lr_grid <= 0 or self.lr_net <= 0:
            raise InvalidArgument("learning rates must be positive")

    def learning_rates(self) -> dict[str, float]:
        return {"grid": self.lr_grid, "mlp": self.lr_net, "affine": self.lr_net}


@dataclass
class IterRecord:
    k: int
    rho: float
    fidelity: float
    tv: float
    sstv: float
    primal_residual: float
    dx: float
    dv: float
    du: float
    monitor: float
    inner_loss: float
    psnr: float = float("nan")
    psnr_v: float = float("nan")


@dataclass
class AdmmState:
    X: np.ndarray
    V: np.ndarray
    U: np.ndarray
    rho: float
    kappa: float
    k: int = 0
    history: list[IterRecord] = field(default_factory=list)

    @classmethod
    def zeros(cls, shape, rho0: float, kappa: float) -> "AdmmState":
        z = np.zeros(shape)
        return cls(z.copy(), z.copy(), z.copy(), float(rho0), float(kappa))


def v_objective(V: np.ndarray, target: np.ndarray, rho: float, lam1: float, lam2: float) -> float:
    from .regularizers import reg_loss
    r = V - target
    reg = reg_loss(V, lam1, lam2) if V.ndim == 3 and (lam1 or lam2) else 0.0
    return 0.5 * rho * float(np.sum(r * r)) + reg


def v_subproblem_step(model: GridTDModel, adam: Adam, target: np.ndarray, rho: float,
                      lam1: float, lam2: float, steps: int, use_affine: bool | None = None):
    """Run ``steps`` Adam updates on the V-objective; return (per-step losses, refreshed V)."""
    if steps < 1:
        raise InvalidArgument("steps must be >= 1")
    regularise = (lam1 or lam2) and len(model.shape) == 3
    if (lam1 or lam2) and not regularise:
        raise InvalidArgument("TV/SSTV need 3rd-order data")
    losses = []
    for _ in range(steps):
        tape = Tape()
        V = model.forward(tape, use_affine)
        loss = ad.half_sq_dist(tape, V, target, rho)
        if regularise:
            loss = ad.add_scalars(tape, loss, reg_apply(tape, V, lam1, lam2))
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(f"V-subproblem loss became non-finite ({value})")
        losses.append(value)
        tape.backward(loss)
        adam.step(model.params)
    return losses, model.render(use_affine)


def multiplier_update(state: AdmmState) -> AdmmState:
    state.U = state.U + (state.X - state.V)
    state.rho *= state.kappa
    return state


def boundedness_monitor(rho: float, V_new: np.ndarray, X_new: np.ndarray, U_old: np.ndarray) -> float:
    """rho^k * ||V^{k+1} - (X^{k+1} + U^k)||_F."""
    return float(rho * np.linalg.norm(V_new - (X_new + U_old)))


def admm_run(cfg: SolverConfig, op, Y, model: GridTDModel, reference: np.ndarray | None = None,
             peak: float = 1.0):
    """Run the solver; returns (X, history list of IterRecord)."""
    Y = np.asarray(Y, dtype=np.float64)
    if tuple(op.shape) != tuple(model.shape):
        raise InvalidArgument(f"operator shape {op.shape} != model shape {model.shape}")
    use_affine = cfg.use_affine
    if use_affine and not model.cfg.affine:
        raise InvalidArgument("use_affine requested but the model has no adapter")
    state = AdmmState.zeros(model.shape, cfg.rho0, cfg.kappa)
    adam = Adam(model.params, cfg.learning_rates())
    for k in range(1, cfg.outer_iters + 1):
        X_prev, V_prev, U_prev = state.X, state.V, state.U
        X = op.x_update(state.V, state.U, Y, state.rho)
        target = X + state.U
        losses, V = v_subproblem_step(model, adam, target, state.rho, cfg.lambda1, cfg.lambda2,
                                      cfg.inner_steps, use_affine)
        monitor = boundedness_monitor(state.rho, V, X, state.U)
        state.X, state.V = X, V
        rec_rho = state.rho
        multiplier_update(state)
        state.k = k
        regs = (tv(V), sstv(V)) if V.ndim == 3 and min(V.shape) >= 2 else (float("nan"),) * 2
        rec = IterRecord(
            k=k, rho=rec_rho, fidelity=op.fidelity(X, Y), tv=regs[0], sstv=regs[1],
            primal_residual=float(np.linalg.norm(X - V)),
            dx=float(np.linalg.norm(X - X_prev)), dv=float(np.linalg.norm(V - V_prev)),
            du=float(np.linalg.norm(state.U - U_prev)), monitor=monitor, inner_loss=losses[-1],
        )
        if reference is not None:
            rec.psnr = psnr(X, reference, peak)
            rec.psnr_v = psnr(V, reference, peak)
        state.history.append(rec)
        log.debug("admm k=%d rho=%.3g res=%.3g psnr=%.2f", k, rec_rho, rec.primal_residual, rec.psnr)
        if cfg.early_stop is not None and rec.primal_residual < cfg.early_stop * np.linalg.norm(X):
            break
    return state.X, state.history


def write_history_csv(history, path: str | Path) -> None:
    rows = [asdict(r) for r in history]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else list(IterRecord.__dataclass_fields__))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
