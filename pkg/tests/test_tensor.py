import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridtd.errors import InvalidArgument
from gridtd.tensor import (CoordinateGrid, as_tensor, concat, cp_assemble, cp_from_matrices, hadamard,
                           outer_product, read_gtd1, uniform_coordinates, validate_shape, write_gtd1)


def test_outer_product_2x2():
    x1, x2, y1, y2 = 2.0, 3.0, 5.0, 7.0
    np.testing.assert_array_equal(outer_product([(x1, x2), (y1, y2)]),
                                  [[x1 * y1, x1 * y2], [x2 * y1, x2 * y2]])


def test_outer_product_ones():
    np.testing.assert_array_equal(outer_product([(1, 1), (1, 1)]), np.ones((2, 2)))


def test_outer_product_three_way_matches_loops():
    vs = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0])]
    out = outer_product(vs)
    assert out.shape == (2, 2, 1)
    for i, j, k in itertools.product(range(2), range(2), range(1)):
        assert out[i, j, k] == vs[0][i] * vs[1][j] * vs[2][k]
    np.testing.assert_array_equal(out[:, :, 0], [[15, 20], [30, 40]])


def test_outer_product_rejects_empty():
    with pytest.raises(InvalidArgument):
        outer_product([])
    with pytest.raises(InvalidArgument):
        outer_product([[1.0], []])


def test_cp_assemble_rank_one():
    np.testing.assert_array_equal(cp_assemble([[(1, 0), (1, 0)]]), [[1, 0], [0, 0]])


def test_cp_assemble_rank_two_is_sum_of_outer_products(rng):
    f = [[rng.normal(size=3), rng.normal(size=3)] for _ in range(2)]
    np.testing.assert_allclose(cp_assemble(f), outer_product(f[0]) + outer_product(f[1]), atol=1e-15)


def test_cp_assemble_zero_factor_in_every_term(rng):
    f = [[rng.normal(size=3), np.zeros(4)], [np.zeros(3), rng.normal(size=4)]]
    np.testing.assert_array_equal(cp_assemble(f), np.zeros((3, 4)))


def test_cp_assemble_mismatched_lengths():
    with pytest.raises(InvalidArgument):
        cp_assemble([[(1, 2), (3, 4)], [(1, 2, 3), (3, 4)]])


def test_cp_from_matrices_matches_cp_assemble(rng):
    mats = [rng.normal(size=(n, 3)) for n in (2, 3, 4)]
    factors = [[m[:, r] for m in mats] for r in range(3)]
    np.testing.assert_allclose(cp_from_matrices(mats), cp_assemble(factors), atol=1e-14)


def test_uniform_coordinates_examples():
    assert uniform_coordinates((1,)).axes[0].tolist() == [0.0]
    assert uniform_coordinates((4,)).axes[0].tolist() == [0.0, 0.25, 0.5, 0.75]
    ax = uniform_coordinates((3,)).axes[0]
    np.testing.assert_allclose(ax, [0, 1 / 3, 2 / 3])
    assert ax.max() < 1


def test_coordinate_grid_points_row_major():
    g = uniform_coordinates((2, 3))
    pts = g.points()
    assert pts.shape == (6, 2)
    np.testing.assert_array_equal(pts[1], [0.0, 1 / 3])
    assert g.shape == (2, 3) and g.ndim == 2


def test_coordinate_grid_rejects_unsorted():
    with pytest.raises(InvalidArgument):
        CoordinateGrid((np.array([0.5, 0.1]),))
    with pytest.raises(InvalidArgument):
        CoordinateGrid((np.array([0.0, 1.0]),))


def test_hadamard_and_concat():
    np.testing.assert_array_equal(hadamard((1, 1), (2.5, -3)), (2.5, -3))
    np.testing.assert_array_equal(hadamard((2, 3), (4, 5)), (8, 15))
    np.testing.assert_array_equal(concat((1, 2), (3, 4)), (1, 2, 3, 4))
    with pytest.raises(InvalidArgument):
        hadamard((1, 2), (1, 2, 3))


def test_shape_validation():
    assert validate_shape([2, 3]) == (2, 3)
    for bad in ([], [0], [2, -1]):
        with pytest.raises(InvalidArgument):
            validate_shape(bad)
    with pytest.raises(InvalidArgument):
        as_tensor(np.zeros(6), (4, 2))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.floats(-3, 3))
def test_outer_product_multilinear(dims, alpha):
    rng = np.random.default_rng(sum(dims))
    vs = [rng.normal(size=n) for n in dims]
    scaled = [alpha * vs[0]] + vs[1:]
    np.testing.assert_allclose(outer_product(scaled), alpha * outer_product(vs), atol=1e-12)
    np.testing.assert_array_equal(cp_assemble([vs]), outer_product(vs))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4))
def test_gtd1_round_trip(dims):
    arr = np.random.default_rng(len(dims)).normal(size=dims)
    buf = io.BytesIO()
    write_gtd1(buf, arr)
    raw = buf.getvalue()
    assert raw[:4] == b"GTD1"
    assert int.from_bytes(raw[4:8], "little") == len(dims)
    assert len(raw) == 8 + 8 * len(dims) + 8 * arr.size
    buf.seek(0)
    back = read_gtd1(buf)
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_gtd1_file_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    write_gtd1(tmp_path / "a.gtd", arr)
    np.testing.assert_array_equal(read_gtd1(tmp_path / "a.gtd"), arr)


def test_gtd1_bad_magic():
    with pytest.raises(ValueError):
        read_gtd1(io.BytesIO(b"NOPE" + bytes(12)))
