import csv

import numpy as np
import pytest

from gridtd.bench import (DimensionSettings, dimension_robustness_experiment, efficiency_benchmark,
                          lipschitz_empirical_test, lipschitz_model, project_rows_l1, tensor_digest)
from gridtd.errors import InvalidArgument
from gridtd.phantoms import make_scene, moving_square, smooth_signal, spectral_cube


def test_project_rows_l1(rng):
    t = rng.normal(scale=3, size=(50, 4))
    t[:5] *= 1e-3
    p = project_rows_l1(t)
    assert np.all(np.abs(p).sum(axis=1) <= 1 + 1e-15)
    np.testing.assert_array_equal(p[:5], t[:5])


@pytest.mark.parametrize("mode", ["dense", "decomposed"])
@pytest.mark.parametrize("D", [1, 2, 3])
def test_lipschitz_holds(mode, D):
    res = lipschitz_empirical_test(lipschitz_model(mode, D, seed=0), trials=300, seed=0)
    assert res.passed and res.max_ratio > 0


def test_lipschitz_d1_modes_identical():
    a = lipschitz_empirical_test(lipschitz_model("dense", 1, seed=2), trials=200, seed=1)
    b = lipschitz_empirical_test(lipschitz_model("decomposed", 1, seed=2), trials=200, seed=1)
    assert a.bound == b.bound
    assert a.max_ratio == pytest.approx(b.max_ratio, rel=1e-12)


def test_lipschitz_bound_ratio_d3():
    a = lipschitz_model("dense", 3, seed=0)
    b = lipschitz_model("decomposed", 3, seed=0)
    ra = lipschitz_empirical_test(a, trials=10)
    rb = lipschitz_empirical_test(b, trials=10)
    # same seed -> same MLP, so the bound ratio is the 2^(D-1) factor
    assert ra.bound / rb.bound == 4.0


def test_dimension_experiment_small(tmp_path):
    settings = DimensionSettings(iters=20, n_seeds=2, shapes={1: (256,), 2: (16, 16), 3: (8, 8, 4)})
    rep = dimension_robustness_experiment(0, settings, srs=(0.2,), dims=(1, 3))
    assert len(rep.rows) == 2 and len(rep.runs) == 8
    d1 = rep.lookup(D=1, sr=0.2)
    assert abs(d1["psnr_dense"] - d1["psnr_decomposed"]) < 0.01
    rep.write_csv(tmp_path / "dim.csv")
    rows = list(csv.DictReader(open(tmp_path / "dim.csv")))
    assert rows[0]["D"] == "1" and "psnr_dense" in rows[0]
    again = dimension_robustness_experiment(0, settings, srs=(0.2,), dims=(1, 3))
    assert [r["digest"] for r in rep.runs] == [r["digest"] for r in again.runs]


def test_efficiency_counts_small():
    rep = efficiency_benchmark(n=12, D=3, iters=2)
    dense, dec = rep.lookup(mode="dense"), rep.lookup(mode="decomposed")
    L = rep.config["L"]
    assert dense["queries"] == 12 ** 3 * L
    assert dense["interpolations"] == 12 ** 3 * L * 8
    assert dec["queries"] == 3 * 12 * L
    assert dec["interpolations"] == 3 * 12 * L * 2
    assert dense["params"] > dec["params"]


def test_digest_distinguishes():
    a = np.zeros(3)
    assert tensor_digest(a) == tensor_digest(a.copy())
    assert tensor_digest(a) != tensor_digest(a + 1e-300)


# -- phantoms -----------------------------------------------------------------------

def test_moving_square_offsets():
    X = moving_square((32, 32, 8), size=8, velocity=(1, 1), start=(2, 3))
    for t in range(8):
        ii, jj = np.nonzero(X[:, :, t] > 0.5)
        assert (ii.min(), jj.min()) == (2 + t, 3 + t)
        assert ii.size == 64


@pytest.mark.parametrize("shape", [(64,), (12, 10), (6, 5, 4)])
def test_smooth_signal_range_and_determinism(shape):
    a = smooth_signal(shape, seed=5)
    assert a.shape == shape and np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, smooth_signal(shape, seed=5))


def test_spectral_cube_range():
    c = spectral_cube((8, 8, 6), seed=1)
    assert c.min() >= 0.05 - 1e-12 and c.max() <= 0.95 + 1e-12


def test_unknown_scene():
    with pytest.raises(InvalidArgument):
        make_scene("nebula", (4, 4, 4))
