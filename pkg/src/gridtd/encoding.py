"""Multi-resolution grid encodings.

Two flavours share one set of conventions:

* ``dense`` -- a D-dimensional grid per level (the InstantNGP baseline).  Each
  query blends the 2^D surrounding vertices.
* ``decomposed`` -- one 1-D multi-resolution grid per axis; the per-axis
  encodings are fused by an elementwise product, so a batch over a Cartesian
  coordinate grid is a CP-structured tensor of rank R = L*F.

A level of resolution N stores vertices 0..N along each axis.  A coordinate
t in [0, 1) sits at position (N-1)*t, its base vertex is the floor of that and
the interpolation fraction is the remainder.  Vertex rows live in a table of
at most T rows; when the level has more vertices than T they are hashed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .autodiff import Tape, Var
from .errors import InvalidArgument, OutOfDomain
from .tensor import CoordinateGrid

HASH_PRIMES = (1, 2654435761, 805459861, 3674653429, 2097192037, 1434869437, 2165219737)

MODES = ("dense", "decomposed")


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "decomposed"
    D: int = 3
    L: int = 8
    F: int = 2
    N_min: int = 4
    N_max: int = 32
    T: int = 2 ** 19

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.D < 1:
            raise InvalidArgument("D must be >= 1")
        if self.mode == "dense" and self.D > len(HASH_PRIMES):
            raise InvalidArgument(f"dense mode supports D <= {len(HASH_PRIMES)}")
        if self.L < 1 or self.F < 1:
            raise InvalidArgument("L and F must be >= 1")
        if not 2 <= self.N_min <= self.N_max:
            raise InvalidArgument(f"need 2 <= N_min <= N_max, got {self.N_min}, {self.N_max}")
        if self.T < 1:
            raise InvalidArgument("T must be >= 1")

    @property
    def R(self) -> int:
        return self.L * self.F

    @property
    def resolutions(self) -> tuple[int, ...]:
        if self.L == 1:
            return (self.N_min,)
        growth = (self.N_max / self.N_min) ** (1.0 / (self.L - 1))
        return tuple(int(round(self.N_min * growth ** l)) for l in range(self.L))

    def level(self, l: int) -> "GridLevel":
        ndim = self.D if self.mode == "dense" else 1
        return GridLevel(self.resolutions[l], ndim, self.F, self.T)

    def levels(self) -> list["GridLevel"]:
        return [self.level(l) for l in range(self.L)]

    def replace(self, **kw) -> "EncoderConfig":
        fields = dict(mode=self.mode, D=self.D, L=self.L, F=self.F,
                      N_min=self.N_min, N_max=self.N_max, T=self.T)
        fields.update(kw)
        return EncoderConfig(**fields)


@dataclass(frozen=True)
class GridLevel:
    """Shape and addressing of one resolution level's feature table."""

    resolution: int
    ndim: int
    features: int
    table_len: int

    @property
    def side(self) -> int:
        return self.resolution + 1

    @property
    def n_vertices(self) -> int:
        return self.side ** self.ndim

    @property
    def hashed(self) -> bool:
        return self.n_vertices > self.table_len

    @property
    def addressing(self) -> str:
        return "hashed" if self.hashed else "direct"

    @property
    def rows(self) -> int:
        return min(self.n_vertices, self.table_len)


def vertex_to_table_index(level: GridLevel, vertex) -> np.ndarray:
    """Table row for an integer vertex (tuple of ints or of equal-shape int arrays)."""
    comps = [np.asarray(c, dtype=np.int64) for c in vertex]
    if len(comps) != level.ndim:
        raise InvalidArgument(f"vertex has {len(comps)} coordinates, level is {level.ndim}-D")
    for c in comps:
        if c.size and (c.min() < 0 or c.max() > level.resolution):
            raise IndexError(f"vertex outside [0, {level.resolution}] on some axis")
    if not level.hashed:
        row = np.zeros(np.broadcast(*comps).shape, dtype=np.int64)
        for c in comps:
            row = row * level.side + c
        return row
    h = np.zeros(np.broadcast(*comps).shape, dtype=np.uint64)
    for c, p in zip(comps, HASH_PRIMES):
        h ^= c.astype(np.uint64) * np.uint64(p)
    return (h % np.uint64(level.table_len)).astype(np.int64)


def param_count(cfg: EncoderConfig) -> int:
    """Number of learnable grid entries (MLP excluded)."""
    per_axis = sum(cfg.F * lv.rows for lv in cfg.levels())
    return per_axis if cfg.mode == "dense" else cfg.D * per_axis


def init_tables(cfg: EncoderConfig, rng: np.random.Generator, scale: float = 1e-4,
                dist: str = "uniform"):
    """Uniform(-scale, scale) or Normal(0, scale^2) tables.

    Dense: list over levels.  Decomposed: list over axes of lists over levels.
    Draw order is axis-major then level, so a 1-D decomposed encoder draws the
    same numbers as a 1-D dense one.
    """
    if dist not in ("uniform", "normal"):
        raise InvalidArgument(f"init distribution must be 'uniform' or 'normal', got {dist!r}")
    levels = cfg.levels()

    def draw(lv):
        size = (lv.rows, lv.features)
        return rng.uniform(-scale, scale, size) if dist == "uniform" else rng.normal(0.0, scale, size)

    if cfg.mode == "dense":
        return [draw(lv) for lv in levels]
    return [[draw(lv) for lv in levels] for _ in range(cfg.D)]


def table_names(cfg: EncoderConfig) -> list:
    if cfg.mode == "dense":
        return [f"grid/l{l:02d}" for l in range(cfg.L)]
    return [[f"grid/a{d}/l{l:02d}" for l in range(cfg.L)] for d in range(cfg.D)]


# -- instrumentation --------------------------------------------------------------

@dataclass
class InterpCounter:
    """Counts grid queries (one per point per level) and corner reads."""

    queries: int = 0
    interpolations: int = 0

    def reset(self) -> None:
        self.queries = 0
        self.interpolations = 0


COUNTER = InterpCounter()


# -- interpolation plans ----------------------------------------------------------

def _check_domain(x: np.ndarray) -> None:
    if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() >= 1.0):
        raise OutOfDomain("coordinates must lie in [0, 1)")


def _base_and_frac(level: GridLevel, x: np.ndarray):
    pos = (level.resolution - 1) * x
    base = np.floor(pos)
    return base.astype(np.int64), pos - base


class AxisPlan:
    """Rows and weights for 1-D queries at fixed positions, all levels."""

    def __init__(self, cfg: EncoderConfig, ts):
        ts = np.asarray(ts, dtype=np.float64).ravel()
        _check_domain(ts)
        self.cfg = cfg
        self.n = ts.size
        self.levels = []
        for l in range(cfg.L):
            lv = cfg.level(l) if cfg.mode == "decomposed" else GridLevel(cfg.resolutions[l], 1, cfg.F, cfg.T)
            base, u = _base_and_frac(lv, ts)
            self.levels.append((vertex_to_table_index(lv, (base,)),
                                vertex_to_table_index(lv, (base + 1,)), u))

    def evaluate(self, tables: Sequence[np.ndarray]) -> np.ndarray:
        F = self.cfg.F
        out = np.empty((self.n, self.cfg.R))
        for l, (r0, r1, u) in enumerate(self.levels):
            t = tables[l]
            out[:, l * F:(l + 1) * F] = (1.0 - u)[:, None] * t[r0] + u[:, None] * t[r1]
        COUNTER.queries += self.n * self.cfg.L
        COUNTER.interpolations += 2 * self.n * self.cfg.L
        return out

    def apply(self, tape: Tape, tables: Sequence[Var]) -> Var:
        out = Var(self.evaluate([t.data for t in tables]))
        F = self.cfg.F

        def axis_encoding_backward():
            g = out.grad
            if g is None:
                return
            for l, (r0, r1, u) in enumerate(self.levels):
                gl = g[:, l * F:(l + 1) * F]
                acc = np.zeros_like(tables[l].data)
                np.add.at(acc, r0, (1.0 - u)[:, None] * gl)
                np.add.at(acc, r1, u[:, None] * gl)
                tables[l].accumulate(acc)

        tape.record(axis_encoding_backward)
        return out


class DensePlan:
    """Rows and corner weights for D-dimensional queries at fixed points."""

    def __init__(self, cfg: EncoderConfig, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != cfg.D:
            raise InvalidArgument(f"points must have shape (P, {cfg.D})")
        _check_domain(points)
        self.cfg = cfg
        self.n = points.shape[0]
        self.grid_levels = [GridLevel(cfg.resolutions[l], cfg.D, cfg.F, cfg.T) for l in range(cfg.L)]
        self.levels = []
        if kernels.enabled():
            # the compiled path recomputes rows and weights on the fly
            self.points = np.ascontiguousarray(points)
            return
        for lv in self.grid_levels:
            base, u = _base_and_frac(lv, points)
            rows, weights = [], []
            for corner in itertools.product((0, 1), repeat=cfg.D):
                w = np.ones(self.n)
                for d, b in enumerate(corner):
                    w *= u[:, d] if b else 1.0 - u[:, d]
                rows.append(vertex_to_table_index(lv, tuple(base[:, d] + b for d, b in enumerate(corner))))
                weights.append(w)
            self.levels.append((np.stack(rows), np.stack(weights)))

    def evaluate(self, tables: Sequence[np.ndarray]) -> np.ndarray:
        F = self.cfg.F
        out = np.zeros((self.n, self.cfg.R))
        if kernels.enabled():
            for l, lv in enumerate(self.grid_levels):
                kernels.dense_level_forward(self.points, lv.resolution, lv.hashed, lv.table_len,
                                            np.ascontiguousarray(tables[l]), out, l * F)
        for l, (rows, weights) in enumerate(self.levels):
            t = tables[l]
            block = out[:, l * F:(l + 1) * F]
            for r, w in zip(rows, weights):
                block += w[:, None] * t[r]
        COUNTER.queries += self.n * self.cfg.L
        COUNTER.interpolations += self.n * self.cfg.L * 2 ** self.cfg.D
        return out

    def apply(self, tape: Tape, tables: Sequence[Var]) -> Var:
        out = Var(self.evaluate([t.data for t in tables]))
        F = self.cfg.F

        def dense_encoding_backward():
            g = out.grad
            if g is None:
                return
            if kernels.enabled():
                g = np.ascontiguousarray(g)
                for l, lv in enumerate(self.grid_levels):
                    kernels.dense_level_backward(self.points, lv.resolution, lv.hashed,
                                                 lv.table_len, g, l * F, tables[l].grad_buffer())
            for l, (rows, weights) in enumerate(self.levels):
                nrows = tables[l].data.shape[0]
                acc = np.zeros_like(tables[l].data)
                for r, w in zip(rows, weights):
                    for f in range(F):
                        acc[:, f] += np.bincount(r, weights=w * g[:, l * F + f], minlength=nrows)
                tables[l].accumulate(acc)

        tape.record(dense_encoding_backward)
        return out


def fuse_hadamard(tape: Tape, factors: Sequence[Var]) -> Var:
    """H[i1,...,iD,:] = prod_d factors[d][i_d,:] as a (n1,...,nD,R) Var."""
    D = len(factors)
    mats = [f.data for f in factors]
    out = Var(hadamard_outer(mats))

    def hadamard_backward():
        g = out.grad
        if g is None:
            return
        for d in range(D):
            factors[d].accumulate(_contract_except(g, mats, d))

    tape.record(hadamard_backward)
    return out


def hadamard_outer(mats: Sequence[np.ndarray]) -> np.ndarray:
    D = len(mats)
    H = mats[0].reshape(mats[0].shape[:1] + (1,) * (D - 1) + mats[0].shape[1:])
    for d in range(1, D):
        shape = (1,) * d + mats[d].shape[:1] + (1,) * (D - 1 - d) + mats[d].shape[1:]
        H = H * mats[d].reshape(shape)
    return np.ascontiguousarray(H)


def _contract_except(g: np.ndarray, mats: Sequence[np.ndarray], skip: int) -> np.ndarray:
    D = len(mats)
    letters = "abcdefghijklmn"
    if D == 1:
        return g.copy()
    operands = [g] + [mats[d] for d in range(D) if d != skip]
    spec = letters[:D] + "z," + ",".join(letters[d] + "z" for d in range(D) if d != skip)
    spec += "->" + letters[skip] + "z"
    return np.einsum(spec, *operands, optimize="greedy")


# -- pointwise API ----------------------------------------------------------------

def encode_axis(cfg: EncoderConfig, tables_d: Sequence[np.ndarray], t: float) -> np.ndarray:
    """1-D multi-resolution encoding of a scalar, length R."""
    return AxisPlan(cfg, [t]).evaluate(tables_d)[0]


def encode_gridtd(cfg: EncoderConfig, per_axis_tables, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != cfg.D:
        raise InvalidArgument(f"point has {v.size} coordinates, config expects {cfg.D}")
    _check_domain(v)
    out = np.ones(cfg.R)
    for d in range(cfg.D):
        out = out * encode_axis(cfg, per_axis_tables[d], v[d])
    return out


def encode_dense(cfg: EncoderConfig, tables: Sequence[np.ndarray], v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != cfg.D:
        raise InvalidArgument(f"point has {v.size} coordinates, config expects {cfg.D}")
    return DensePlan(cfg, v[None, :]).evaluate(tables)[0]


def encode_batch_parallel(cfg: EncoderConfig, per_axis_tables, coords: CoordinateGrid) -> np.ndarray:
    """Encoding tensor of shape (n1,...,nD,R) from sum(n_d) 1-D queries."""
    if coords.ndim != cfg.D:
        raise InvalidArgument(f"coordinate grid is {coords.ndim}-D, config expects {cfg.D}")
    mats = [AxisPlan(cfg, coords.axes[d]).evaluate(per_axis_tables[d]) for d in range(cfg.D)]
    return hadamard_outer(mats)


def encode_dense_grid(cfg: EncoderConfig, tables, coords: CoordinateGrid) -> np.ndarray:
    out = DensePlan(cfg, coords.points()).evaluate(tables)
    return out.reshape(coords.shape + (cfg.R,))


def interpolation_weights(cfg: EncoderConfig, v, level: int) -> np.ndarray:
    """Corner weight tensor (2,...,2) for one level at point v."""
    v = np.asarray(v, dtype=np.float64).ravel()
    _check_domain(v)
    lv = GridLevel(cfg.resolutions[level], v.size, cfg.F, cfg.T)
    _, u = _base_and_frac(lv, v)
    w = np.ones(())
    for ud in u:
        w = np.multiply.outer(w, np.array([1.0 - ud, ud]))
    return w


def lipschitz_level_sum(cfg: EncoderConfig) -> int:
    """N = sum over levels of (N_l - 1)."""
    return sum(n - 1 for n in cfg.resolutions)


def default_n_max(shape: Sequence[int]) -> int:
    return max(2, max(int(n) for n in shape))

