"""Synthetic scenes standing in for real video / hyperspectral data."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument
from .seeding import substream
from .tensor import validate_shape


def moving_square(shape=(32, 32, 8), size: int = 8, velocity=(1, 1), start=None,
                  background: float = 0.1, level: float = 0.9) -> np.ndarray:
    """Square whose top-left corner sits at start + t*velocity in frame t."""
    n1, n2, n3 = validate_shape(shape)
    if start is None:
        start = ((n1 - size) // 2 - (n3 // 2) * velocity[0], (n2 - size) // 2 - (n3 // 2) * velocity[1])
    out = np.full((n1, n2, n3), background)
    for t in range(n3):
        i0 = start[0] + t * velocity[0]
        j0 = start[1] + t * velocity[1]
        out[max(i0, 0):max(i0 + size, 0), max(j0, 0):max(j0 + size, 0), t] = level
    return out


def moving_scene(shape=(32, 32, 8), seed: int = 0) -> np.ndarray:
    """Smooth background with a bright square and a disc drifting across frames."""
    n1, n2, n3 = validate_shape(shape)
    i = np.arange(n1)[:, None, None] / n1
    j = np.arange(n2)[None, :, None] / n2
    t = np.arange(n3)[None, None, :]
    rng = substream(seed, "phantom/moving-scene")
    phase = rng.uniform(0, 2 * np.pi, size=2)
    bg = 0.25 + 0.1 * np.sin(2 * np.pi * i + phase[0]) * np.cos(2 * np.pi * j + phase[1])
    out = np.broadcast_to(bg, (n1, n2, n3)).copy()
    side = max(2, n1 // 4)
    out = np.maximum(out, moving_square((n1, n2, n3), side, (1, 1), start=(n1 // 8, n2 // 8),
                                        background=0.0, level=0.85))
    ci = 0.7 * n1 - 0.5 * t
    cj = 0.3 * n2 + 0.75 * t
    rad = max(1.5, n1 / 8)
    ii = np.arange(n1)[:, None, None]
    jj = np.arange(n2)[None, :, None]
    disc = ((ii - ci) ** 2 + (jj - cj) ** 2) <= rad ** 2
    out[disc] = 0.65
    return out


def smooth_separable(shape, rank: int = 2, seed: int = 0) -> np.ndarray:
    """Sum of `rank` products of smooth 1-D profiles, rescaled to [0.1, 0.9]."""
    shape = validate_shape(shape)
    rng = substream(seed, "phantom/separable")
    out = np.zeros(shape)
    for _ in range(rank):
        term = np.ones(())
        for n in shape:
            x = np.arange(n) / n
            f1, f2 = rng.uniform(0.5, 2.0, size=2)
            p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
            prof = 1.0 + 0.6 * np.sin(2 * np.pi * f1 * x + p1) + 0.3 * np.cos(2 * np.pi * f2 * x + p2)
            term = np.multiply.outer(term, prof)
        out += term
    lo, hi = out.min(), out.max()
    return 0.1 + 0.8 * (out - lo) / (hi - lo if hi > lo else 1.0)


def sinusoid_signal(n: int, terms: int = 4, seed: int = 0) -> np.ndarray:
    """Sum of a few low-frequency sinusoids, rescaled to [0.1, 0.9]."""
    (n,) = validate_shape((n,))
    rng = substream(seed, "phantom/sinusoid")
    x = np.arange(n) / n
    out = np.zeros(n)
    for k in range(terms):
        freq = rng.uniform(0.5, 3.0 + k)
        out += rng.uniform(0.3, 1.0) / (k + 1) * np.sin(2 * np.pi * freq * x + rng.uniform(0, 2 * np.pi))
    return 0.1 + 0.8 * (out - out.min()) / (np.ptp(out) or 1.0)


def bump_field(shape, bumps: int = 6, seed: int = 0) -> np.ndarray:
    """Sum of isotropic Gaussian bumps on a 2-D grid, rescaled to [0.1, 0.9]."""
    n1, n2 = validate_shape(shape)
    rng = substream(seed, "phantom/bumps")
    i = np.arange(n1)[:, None] / n1
    j = np.arange(n2)[None, :] / n2
    out = np.zeros((n1, n2))
    for _ in range(bumps):
        ci, cj = rng.uniform(0.1, 0.9, size=2)
        w = rng.uniform(0.08, 0.25)
        out += rng.uniform(0.4, 1.0) * np.exp(-((i - ci) ** 2 + (j - cj) ** 2) / (2 * w * w))
    return 0.1 + 0.8 * (out - out.min()) / (np.ptp(out) or 1.0)


def smooth_signal(shape, seed: int = 0) -> np.ndarray:
    """Dimension-appropriate smooth test signal: sinusoids, bumps or a separable tensor."""
    shape = validate_shape(shape)
    if len(shape) == 1:
        return sinusoid_signal(shape[0], seed=seed)
    if len(shape) == 2:
        return bump_field(shape, seed=seed)
    return smooth_separable(shape, rank=2, seed=seed)


def spectral_cube(shape=(32, 32, 16), rank: int = 3, seed: int = 0) -> np.ndarray:
    """Low-rank spatial abundances times smooth spectra plus a smooth offset."""
    n1, n2, n3 = validate_shape(shape)
    rng = substream(seed, "phantom/spectral")
    i = np.arange(n1)[:, None] / n1
    j = np.arange(n2)[None, :] / n2
    lam = np.arange(n3) / max(n3 - 1, 1)
    out = np.zeros((n1, n2, n3))
    for _ in range(rank):
        ci, cj = rng.uniform(0.2, 0.8, size=2)
        w = rng.uniform(0.1, 0.3)
        abundance = np.exp(-((i - ci) ** 2 + (j - cj) ** 2) / (2 * w * w))
        mu, sig = rng.uniform(0.1, 0.9), rng.uniform(0.15, 0.4)
        spectrum = np.exp(-((lam - mu) ** 2) / (2 * sig * sig))
        out += abundance[:, :, None] * spectrum[None, None, :]
    out += 0.1 * (1 + np.sin(2 * np.pi * i))[:, :, None] * (0.5 + 0.5 * lam)[None, None, :]
    return 0.05 + 0.9 * (out - out.min()) / (out.max() - out.min())


SCENES = {
    "moving-square": moving_square,
    "moving-scene": moving_scene,
    "smooth": smooth_signal,
    "separable": smooth_separable,
    "bumps": bump_field,
    "spectral": spectral_cube,
}


def make_scene(kind: str, shape, seed: int = 0, **kw) -> np.ndarray:
    try:
        fn = SCENES[kind]
    except KeyError:
        raise InvalidArgument(f"unknown scene {kind!r}; choose from {sorted(SCENES)}") from None
    if kind == "moving-square":
        return fn(shape, **kw)
    return fn(shape, seed=seed, **kw)
