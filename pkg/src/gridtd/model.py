"""Reconstruction network: grid encoder, MLP decoder and temporal affine adapter."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ParamStore, Tape, Var
from .encoding import (AxisPlan, DensePlan, EncoderConfig, fuse_hadamard, init_tables,
                       lipschitz_level_sum, table_names)
from .errors import InvalidArgument
from .seeding import substream
from .tensor import CoordinateGrid, read_gtd1, uniform_coordinates, validate_shape, write_gtd1


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden: int = 64
    affine: bool = False
    inr_hidden: int = 32
    grid_init: float = 1e-4
    grid_init_dist: str = "uniform"

    def __post_init__(self):
        if self.hidden < 1 or self.inr_hidden < 1:
            raise InvalidArgument("hidden widths must be >= 1")
        if self.affine and self.encoder.D != 3:
            raise InvalidArgument("the affine adapter needs 3rd-order (n1, n2, frames) data")
        if self.grid_init <= 0:
            raise InvalidArgument("grid_init must be positive")
        if self.grid_init_dist not in ("uniform", "normal"):
            raise InvalidArgument("grid_init_dist must be 'uniform' or 'normal'")


@dataclass
class MlpDecoder:
    """Two-layer ramp MLP, R -> hidden -> 1."""

    W1: np.ndarray
    b: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.W2 = np.asarray(self.W2, dtype=np.float64).reshape(1, -1)
        if self.W1.shape[0] != self.b.size or self.W2.shape[1] != self.W1.shape[0]:
            raise InvalidArgument("inconsistent MLP layer shapes")

    @property
    def in_width(self) -> int:
        return self.W1.shape[1]

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return (np.maximum(h @ self.W1.T + self.b, 0.0) @ self.W2.T)[..., 0]


def decode(mlp: MlpDecoder, H: np.ndarray) -> np.ndarray:
    """Apply the MLP over the trailing rank axis of an encoding tensor."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[-1] != mlp.in_width:
        raise InvalidArgument(f"encoding width {H.shape[-1]} != MLP input width {mlp.in_width}")
    return mlp(H.reshape(-1, H.shape[-1])).reshape(H.shape[:-1])


def mlp_apply(tape: Tape, x: Var, W1: Var, b: Var, W2: Var, b2: Var | None = None) -> Var:
    hidden = ad.relu(tape, ad.linear(tape, x, W1, b))
    return ad.linear(tape, hidden, W2, b2)


def decode_apply(tape: Tape, x: Var, W1: Var, b1: Var, W2: Var) -> Var:
    """Decoder over rows of a (P, R) encoding; compiled when available."""
    if not kernels.enabled():
        return mlp_apply(tape, x, W1, b1, W2)
    xs = np.ascontiguousarray(x.data)
    out = Var(kernels.mlp_forward(xs, W1.data, b1.data, W2.data))

    def decode_backward():
        if out.grad is None:
            return
        gx = np.zeros_like(xs)
        kernels.mlp_backward(xs, W1.data, b1.data, W2.data, np.ascontiguousarray(out.grad),
                             gx, W1.grad_buffer(), b1.grad_buffer(), W2.grad_buffer())
        x.accumulate(gx, owned=True)

    tape.record(decode_backward)
    return out


def cp_decode_apply(tape: Tape, factors: Sequence[Var], W1: Var, b1: Var, W2: Var) -> Var:
    """Decoder at every multi-index of the Hadamard-fused factors, flattened C-order.

    The compiled path never forms the prod(n_d) x R encoding.
    """
    if not kernels.enabled():
        H = fuse_hadamard(tape, factors)
        flat = Var(H.data.reshape(-1, H.data.shape[-1]))
        _reshape_link(tape, H, flat)
        return mlp_apply(tape, flat, W1, b1, W2)
    dims = np.array([f.data.shape[0] for f in factors], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(dims)[:-1]]).astype(np.int64)
    mats = np.ascontiguousarray(np.concatenate([f.data for f in factors]))
    out = Var(kernels.cp_mlp_forward(mats, offsets, dims, W1.data, b1.data, W2.data))

    def cp_decode_backward():
        if out.grad is None:
            return
        gmats = np.zeros_like(mats)
        kernels.cp_mlp_backward(mats, offsets, dims, W1.data, b1.data, W2.data,
                                np.ascontiguousarray(out.grad.reshape(-1)), gmats,
                                W1.grad_buffer(), b1.grad_buffer(), W2.grad_buffer())
        for f, o, n in zip(factors, offsets, dims):
            f.accumulate(gmats[o:o + n])

    tape.record(cp_decode_backward)
    return out


def lipschitz_bound(mlp: MlpDecoder, cfg: EncoderConfig, mode: str | None = None,
                    gamma: float = 1.0) -> float:
    """Difference-quotient bound for ramp-MLP o grid-encoding (l1 grid rows <= 1).

    Matrix norms are entrywise l1.  Dense: 2^D*gamma*eta*D*N; decomposed: 2*gamma*eta*D*N.
    """
    mode = mode or cfg.mode
    eta = float(np.abs(mlp.W1).sum() * np.abs(mlp.W2).sum())
    base = gamma * eta * cfg.D * lipschitz_level_sum(cfg)
    if mode == "dense":
        return 2.0 ** cfg.D * base
    if mode == "decomposed":
        return 2.0 * base
    raise InvalidArgument(f"unknown mode {mode!r}")


# -- affine warping ---------------------------------------------------------------

def _sample_positions(shape, scale, theta, bx, by):
    n1, n2, _ = shape
    ci, cj = (n1 - 1) / 2.0, (n2 - 1) / 2.0
    di = (np.arange(n1, dtype=np.float64) - ci)[:, None, None]
    dj = (np.arange(n2, dtype=np.float64) - cj)[None, :, None]
    c, s = np.cos(theta), np.sin(theta)
    x = scale * (c * di - s * dj) + ci + bx
    y = scale * (s * di + c * dj) + cj + by
    return x, y


class _Bilinear:
    """Zero-padded bilinear sampling of every frame at (x, y), shapes (n1, n2, n3)."""

    def __init__(self, shape, x, y):
        n1, n2, n3 = shape
        x0 = np.floor(x)
        y0 = np.floor(y)
        # a sample exactly on the last row/column uses the cell on the interior
        # side, so the coordinate gradient comes from data rather than padding
        x0 = np.where((x0 == n1 - 1) & (x == x0) & (n1 > 1), x0 - 1, x0)
        y0 = np.where((y0 == n2 - 1) & (y == y0) & (n2 > 1), y0 - 1, y0)
        self.fx = x - x0
        self.fy = y - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        t = np.broadcast_to(np.arange(n3)[None, None, :], x.shape)
        self.corners = []
        for ox, oy in ((0, 0), (1, 0), (0, 1), (1, 1)):
            xi, yi = x0 + ox, y0 + oy
            valid = (xi >= 0) & (xi < n1) & (yi >= 0) & (yi < n2)
            flat = (np.clip(xi, 0, n1 - 1) * n2 + np.clip(yi, 0, n2 - 1)) * n3 + t
            self.corners.append((flat.ravel(), valid))
        self.size = n1 * n2 * n3

    def values(self, frames: np.ndarray):
        flat = frames.ravel()
        return [np.where(valid, flat[idx].reshape(valid.shape), 0.0) for idx, valid in self.corners]

    def weights(self):
        fx, fy = self.fx, self.fy
        return ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)

    def sample(self, frames: np.ndarray) -> np.ndarray:
        v00, v10, v01, v11 = self.values(frames)
        w = self.weights()
        return w[0] * v00 + w[1] * v10 + w[2] * v01 + w[3] * v11


def warp_frames(frames, scale, theta, bx, by) -> np.ndarray:
    """Per-frame rotation/scale about the frame centre plus translation, then bilinear sampling."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise InvalidArgument("warp_frames expects a (n1, n2, n3) tensor")
    x, y = _sample_positions(frames.shape, *(np.asarray(p, dtype=np.float64) for p in (scale, theta, bx, by)))
    return _Bilinear(frames.shape, x, y).sample(frames)


def warp_apply(tape: Tape, frames: Var, log_scale: Var, theta: Var, bx: Var, by: Var) -> Var:
    shape = frames.data.shape
    scale = np.exp(log_scale.data)
    x, y = _sample_positions(shape, scale, theta.data, bx.data, by.data)
    bil = _Bilinear(shape, x, y)
    v00, v10, v01, v11 = bil.values(frames.data)
    w = bil.weights()
    out = Var(w[0] * v00 + w[1] * v10 + w[2] * v01 + w[3] * v11)
    ci, cj = (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0

    def warp_backward():
        g = out.grad
        if g is None:
            return
        acc = np.zeros(bil.size)
        for (idx, valid), wk in zip(bil.corners, w):
            acc += np.bincount(idx, weights=(g * wk * valid).ravel(), minlength=bil.size)
        frames.accumulate(acc.reshape(shape))
        fx, fy = bil.fx, bil.fy
        gx = g * ((1 - fy) * (v10 - v00) + fy * (v11 - v01))
        gy = g * ((1 - fx) * (v01 - v00) + fx * (v11 - v10))
        rx = x - ci - bx.data  # scale * rotated offset, x part
        ry = y - cj - by.data
        log_scale.accumulate((gx * rx + gy * ry).sum(axis=(0, 1)))
        theta.accumulate((-gx * ry + gy * rx).sum(axis=(0, 1)))
        bx.accumulate(gx.sum(axis=(0, 1)))
        by.accumulate(gy.sum(axis=(0, 1)))

    tape.record(warp_backward)
    return out


@dataclass
class AffineAdapter:
    """Frame-wise scale/rotation plus INR-driven translations (pointwise view)."""

    log_scale: np.ndarray
    theta: np.ndarray
    fx: MlpDecoder
    fy: MlpDecoder
    fx_bias: float = 0.0
    fy_bias: float = 0.0

    def translations(self, temporal_encoding: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
        bx = shape[0] / 4.0 * np.tanh(self.fx(temporal_encoding) + self.fx_bias)
        by = shape[1] / 4.0 * np.tanh(self.fy(temporal_encoding) + self.fy_bias)
        return bx, by


def affine_apply(adapter: AffineAdapter, frames: np.ndarray, temporal_encoding: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise InvalidArgument("affine_apply expects a (n1, n2, n3) tensor")
    if adapter.theta.size != frames.shape[2]:
        raise InvalidArgument("adapter frame count does not match the tensor")
    bx, by = adapter.translations(temporal_encoding, frames.shape)
    return warp_frames(frames, np.exp(adapter.log_scale), adapter.theta, bx, by)


# -- the full model -------------------------------------------------------------------

def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GridTDModel:
    """Grid encoder + MLP (+ affine adapter) over a fixed tensor shape.

    Parameters live in ``self.params``; the coordinate plans are built once
    since the sample positions never change during optimisation.
    """

    def __init__(self, cfg: ModelConfig, shape: Sequence[int], seed: int = 0,
                 params: ParamStore | None = None):
        shape = validate_shape(shape)
        enc = cfg.encoder
        if len(shape) != enc.D:
            raise InvalidArgument(f"data is {len(shape)}-D but the encoder expects D={enc.D}")
        self.cfg = cfg
        self.shape = shape
        self.seed = seed
        self.coords: CoordinateGrid = uniform_coordinates(shape)
        if enc.mode == "decomposed":
            self._axis_plans = [AxisPlan(enc, self.coords.axes[d]) for d in range(enc.D)]
            self._dense_plan = None
        else:
            self._axis_plans = None
            self._dense_plan = DensePlan(enc, self.coords.points())
        self._time_plan = None
        if cfg.affine and enc.mode == "dense":
            self._time_plan = AxisPlan(enc.replace(mode="decomposed", D=1), self.coords.axes[2])
        self.params = params if params is not None else self._init_params(seed)

    @property
    def encoder(self) -> EncoderConfig:
        return self.cfg.encoder

    def _init_params(self, seed: int) -> ParamStore:
        cfg, enc = self.cfg, self.cfg.encoder
        store = ParamStore()
        tables = init_tables(enc, substream(seed, "init/grid"), cfg.grid_init, cfg.grid_init_dist)
        names = table_names(enc)
        if enc.mode == "dense":
            for n, t in zip(names, tables):
                store.add(n, t, "grid")
        else:
            for axis_names, axis_tables in zip(names, tables):
                for n, t in zip(axis_names, axis_tables):
                    store.add(n, t, "grid")
        rng = substream(seed, "init/mlp")
        R, h = enc.R, cfg.hidden
        store.add("mlp/W1", _uniform(rng, R, (h, R)), "mlp")
        store.add("mlp/b1", _uniform(rng, R, (h,)), "mlp")
        store.add("mlp/W2", _uniform(rng, h, (1, h)), "mlp")
        if cfg.affine:
            n3 = self.shape[2]
            store.add("affine/log_scale", np.zeros(n3), "affine")
            store.add("affine/theta", np.zeros(n3), "affine")
            rng = substream(seed, "init/affine")
            for axis in ("x", "y"):
                store.add(f"affine/f{axis}/W1", _uniform(rng, R, (cfg.inr_hidden, R)), "affine")
                store.add(f"affine/f{axis}/b1", _uniform(rng, R, (cfg.inr_hidden,)), "affine")
                # zero output layer: translations start at exactly 0
                store.add(f"affine/f{axis}/W2", np.zeros((1, cfg.inr_hidden)), "affine")
                store.add(f"affine/f{axis}/b2", np.zeros(1), "affine")
            if enc.mode == "dense":
                tenc = enc.replace(mode="decomposed", D=1)
                ttables = init_tables(tenc, substream(seed, "init/time-grid"), cfg.grid_init, cfg.grid_init_dist)[0]
                for l, t in enumerate(ttables):
                    store.add(f"affine/tgrid/l{l:02d}", t, "grid")
        return store

    # -- views onto the parameter store --------------------------------------------

    def tables(self):
        names = table_names(self.encoder)
        if self.encoder.mode == "dense":
            return [self.params[n] for n in names]
        return [[self.params[n] for n in axis] for axis in names]

    def mlp(self) -> MlpDecoder:
        p = self.params
        return MlpDecoder(p["mlp/W1"], p["mlp/b1"], p["mlp/W2"])

    def adapter(self) -> AffineAdapter | None:
        if not self.cfg.affine:
            return None
        p = self.params
        return AffineAdapter(
            p["affine/log_scale"], p["affine/theta"],
            MlpDecoder(p["affine/fx/W1"], p["affine/fx/b1"], p["affine/fx/W2"]),
            MlpDecoder(p["affine/fy/W1"], p["affine/fy/b1"], p["affine/fy/W2"]),
            float(p["affine/fx/b2"][0]), float(p["affine/fy/b2"][0]),
        )

    # -- forward ------------------------------------------------------------------

    def forward(self, tape: Tape | None = None, use_affine: bool | None = None) -> Var:
        """Taped forward pass; returns V (the warped tensor when the adapter is on)."""
        tape = tape if tape is not None else Tape()
        use_affine = self.cfg.affine if use_affine is None else use_affine
        if use_affine and not self.cfg.affine:
            raise InvalidArgument("model was built without an affine adapter")
        enc, p = self.encoder, self.params
        names = table_names(enc)
        temporal = None
        if enc.mode == "decomposed":
            factors = [plan.apply(tape, [p.var(n) for n in axis_names])
                       for plan, axis_names in zip(self._axis_plans, names)]
            out = cp_decode_apply(tape, factors, p.var("mlp/W1"), p.var("mlp/b1"), p.var("mlp/W2"))
            if use_affine:
                temporal = factors[2]
        else:
            flat = self._dense_plan.apply(tape, [p.var(n) for n in names])
            out = decode_apply(tape, flat, p.var("mlp/W1"), p.var("mlp/b1"), p.var("mlp/W2"))
            if use_affine:
                temporal = self._time_plan.apply(
                    tape, [p.var(f"affine/tgrid/l{l:02d}") for l in range(enc.L)])
        latent = Var(out.data.reshape(self.shape))
        _reshape_link(tape, out, latent)
        if not use_affine:
            return latent
        n1, n2, _ = self.shape
        raw_x = mlp_apply(tape, temporal, p.var("affine/fx/W1"), p.var("affine/fx/b1"),
                          p.var("affine/fx/W2"), p.var("affine/fx/b2"))
        raw_y = mlp_apply(tape, temporal, p.var("affine/fy/W1"), p.var("affine/fy/b1"),
                          p.var("affine/fy/W2"), p.var("affine/fy/b2"))
        bx = _flatten_col(tape, ad.scaled_tanh(tape, raw_x, n1 / 4.0))
        by = _flatten_col(tape, ad.scaled_tanh(tape, raw_y, n2 / 4.0))
        return warp_apply(tape, latent, p.var("affine/log_scale"), p.var("affine/theta"), bx, by)

    def render(self, use_affine: bool | None = None) -> np.ndarray:
        return self.forward(Tape(), use_affine).data

    def latent(self) -> np.ndarray:
        return self.render(use_affine=False)

    def evaluate_points(self, points) -> np.ndarray:
        """Decoder output g(H(v)) at arbitrary points (P, D); no adapter."""
        enc = self.encoder
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if enc.mode == "dense":
            H = DensePlan(enc, points).evaluate(self.tables())
        else:
            tables = self.tables()
            H = np.ones((points.shape[0], enc.R))
            for d in range(enc.D):
                H *= AxisPlan(enc, points[:, d]).evaluate(tables[d])
        return self.mlp()(H)


def _reshape_link(tape: Tape, src: Var, dst: Var) -> None:
    def reshape_backward():
        if dst.grad is not None:
            src.accumulate(dst.grad.reshape(src.data.shape))

    tape.record(reshape_backward)


def _flatten_col(tape: Tape, x: Var) -> Var:
    out = Var(x.data.reshape(-1))
    _reshape_link(tape, x, out)
    return out


def forward_full(model: GridTDModel, use_affine: bool | None = None) -> np.ndarray:
    return model.render(use_affine)


# -- checkpoints ------------------------------------------------------------------------

def save_params(store: ParamStore, path: str | Path) -> None:
    """Blob of GTD1 records in name order plus a ``.manifest`` text file."""
    path = Path(path)
    lines = []
    with open(path, "wb") as fh:
        for name in store.names():
            arr = store[name]
            start = fh.tell()
            write_gtd1(fh, arr)
            lines.append(f"{name}\t{store.groups[name]}\t{'x'.join(map(str, arr.shape))}\t{start}")
    Path(str(path) + ".manifest").write_text("\n".join(lines) + "\n")


def load_params(path: str | Path) -> ParamStore:
    path = Path(path)
    store = ParamStore()
    with open(path, "rb") as fh:
        for line in Path(str(path) + ".manifest").read_text().splitlines():
            if not line.strip():
                continue
            name, group, _shape, start = line.split("\t")
            fh.seek(int(start))
            store.add(name, read_gtd1(fh), group)
    return store


_ENC_HEADER = "<B5IQ"


def save_encoder(cfg: EncoderConfig, tables, path: str | Path) -> None:
    mode = 0 if cfg.mode == "dense" else 1
    flat = tables if cfg.mode == "dense" else [t for axis in tables for t in axis]
    with open(path, "wb") as fh:
        fh.write(struct.pack(_ENC_HEADER, mode, cfg.D, cfg.L, cfg.F, cfg.N_min, cfg.N_max, cfg.T))
        for t in flat:
            write_gtd1(fh, t)


def load_encoder(path: str | Path):
    with open(path, "rb") as fh:
        mode, D, L, F, n_min, n_max, T = struct.unpack(_ENC_HEADER, fh.read(struct.calcsize(_ENC_HEADER)))
        cfg = EncoderConfig("dense" if mode == 0 else "decomposed", D, L, F, n_min, n_max, T)
        if cfg.mode == "dense":
            return cfg, [read_gtd1(fh) for _ in range(L)]
        return cfg, [[read_gtd1(fh) for _ in range(L)] for _ in range(D)]
