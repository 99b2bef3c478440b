import numpy as np
import pytest

from gridtd.errors import InvalidArgument
from gridtd.operators import (InpaintingOperator, SpectralSciOperator, VideoSciOperator,
                              fidelity_lipschitz_bound, make_bernoulli_masks, make_sampling_mask,
                              spectral_sci_forward, video_sci_adjoint, video_sci_forward,
                              x_update_inpaint, x_update_spectral_sci, x_update_video_sci)


def stationarity(op, X, V, U, Y, rho):
    grad = op.fidelity_grad(X, Y) + rho * (X - V + U)
    return np.linalg.norm(grad)


def random_ops(rng, shape=(6, 6, 3)):
    masks = make_bernoulli_masks(shape, 0.5, seed=int(rng.integers(1000)))
    return [VideoSciOperator(masks), SpectralSciOperator(masks, step=2),
            InpaintingOperator(make_sampling_mask(shape, 0.4, seed=int(rng.integers(1000))))]


# -- masks -----------------------------------------------------------------------------

def test_bernoulli_mean_and_determinism():
    m = make_bernoulli_masks((256, 256, 8), 0.5, seed=3)
    assert abs(m.mean() - 0.5) < 0.01
    np.testing.assert_array_equal(m, make_bernoulli_masks((256, 256, 8), 0.5, seed=3))
    assert set(np.unique(m)) == {0.0, 1.0}


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2])
def test_bernoulli_rejects_p(p):
    with pytest.raises(InvalidArgument):
        make_bernoulli_masks((2, 2, 2), p)


def test_sampling_mask_exact_count():
    m = make_sampling_mask((10, 10), 0.25, seed=1)
    assert m.sum() == 25
    assert InpaintingOperator(m).sampling_rate == 0.25


# -- forward / adjoint -----------------------------------------------------------------

def test_video_single_frame_ones(rng):
    X = rng.normal(size=(4, 5, 1))
    np.testing.assert_array_equal(video_sci_forward(VideoSciOperator(np.ones((4, 5, 1))), X), X[:, :, 0])


def test_video_disjoint_masks_roundtrip(rng):
    owner = rng.integers(0, 3, size=(5, 5))
    masks = np.stack([(owner == t).astype(float) for t in range(3)], axis=2)
    op = VideoSciOperator(masks)
    Y = rng.normal(size=(5, 5))
    np.testing.assert_allclose(op.forward(video_sci_adjoint(op, Y)), Y, atol=1e-15)


def test_spectral_placement_oracle():
    op = SpectralSciOperator(np.ones((1, 2, 2)), step=1)
    X = np.zeros((1, 2, 2))
    X[0, :, 0] = [1, 2]
    X[0, :, 1] = [3, 4]
    np.testing.assert_array_equal(spectral_sci_forward(op, X), [[1, 5, 4]])
    assert op.measurement_shape() == (1, 3)


def test_spectral_single_band_no_shift(rng):
    masks = make_bernoulli_masks((4, 5, 1), 0.5, 0)
    X = rng.normal(size=(4, 5, 1))
    np.testing.assert_array_equal(SpectralSciOperator(masks).forward(X), masks[:, :, 0] * X[:, :, 0])


def test_spectral_mass_conserved(rng):
    masks = make_bernoulli_masks((5, 6, 4), 0.5, 1)
    X = rng.normal(size=(5, 6, 4))
    op = SpectralSciOperator(masks, step=2)
    assert op.forward(X).shape == (5, 6 + 2 * 3)
    assert abs(op.forward(X).sum() - (masks * X).sum()) < 1e-12


def test_adjoint_identity_all_operators(rng):
    for op in random_ops(rng):
        X = rng.normal(size=op.shape)
        Y = rng.normal(size=op.measurement_shape())
        assert abs(np.sum(op.forward(X) * Y) - np.sum(X * op.adjoint(Y))) < 1e-10


def test_shape_mismatch(rng):
    op = VideoSciOperator(np.ones((4, 4, 2)))
    with pytest.raises(InvalidArgument):
        op.forward(np.zeros((4, 4, 3)))
    with pytest.raises(InvalidArgument):
        op.adjoint(np.zeros((3, 4)))
    with pytest.raises(InvalidArgument):
        VideoSciOperator(np.full((2, 2, 2), 0.5))


# -- closed-form X updates --------------------------------------------------------------

@pytest.mark.parametrize("trial", range(5))
def test_stationarity_all_operators(rng, trial):
    for op in random_ops(rng):
        V, U = rng.normal(size=op.shape), rng.normal(size=op.shape)
        Y = rng.normal(size=op.measurement_shape())
        rho = float(rng.uniform(1e-3, 10))
        X = op.x_update(V, U, Y, rho)
        tol = 1e-10 if isinstance(op, InpaintingOperator) else 1e-8
        assert stationarity(op, X, V, U, Y, rho) < tol


def test_module_level_updates_agree(rng):
    video, spectral, inpaint = random_ops(rng)
    V, U = rng.normal(size=(6, 6, 3)), rng.normal(size=(6, 6, 3))
    Yv = rng.normal(size=video.measurement_shape())
    generic = super(VideoSciOperator, video).x_update(V, U, Yv, 0.3)
    np.testing.assert_allclose(x_update_video_sci(video, V, U, Yv, 0.3), generic, atol=1e-12)
    Ys = rng.normal(size=spectral.measurement_shape())
    np.testing.assert_array_equal(x_update_spectral_sci(spectral, V, U, Ys, 0.3), spectral.x_update(V, U, Ys, 0.3))
    y = rng.normal(size=inpaint.measurement_shape())
    expect = V - U
    expect[inpaint.observed] = (y + 0.3 * expect[inpaint.observed]) / 1.3
    np.testing.assert_allclose(x_update_inpaint(inpaint, V, U, y, 0.3), expect, atol=1e-15)


def test_zero_masks_give_v_minus_u(rng):
    V, U = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
    zeros = np.zeros((4, 4, 3))
    for op in (VideoSciOperator(zeros), SpectralSciOperator(zeros)):
        Y = rng.normal(size=op.measurement_shape())
        np.testing.assert_allclose(op.x_update(V, U, Y, 0.7), V - U, atol=1e-15)
    op = InpaintingOperator(np.zeros((4, 4, 3), dtype=bool))
    np.testing.assert_array_equal(op.x_update(V, U, np.zeros(0), 0.7), V - U)


def test_spectral_single_band_matches_video(rng):
    masks = make_bernoulli_masks((5, 5, 1), 0.5, 4)
    V, U, Y = rng.normal(size=(5, 5, 1)), rng.normal(size=(5, 5, 1)), rng.normal(size=(5, 5))
    np.testing.assert_allclose(SpectralSciOperator(masks).x_update(V, U, Y, 0.2),
                               VideoSciOperator(masks).x_update(V, U, Y, 0.2), atol=1e-14)


def test_penalty_dominance_limit(rng):
    op = VideoSciOperator(make_bernoulli_masks((4, 4, 3), 0.5, 0))
    V, U, Y = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4))
    X = op.x_update(V, U, Y, 1e8)
    assert np.linalg.norm(X - (V - U)) <= 1e-6 * np.linalg.norm(V - U)


def test_inpaint_data_wins_small_rho(rng):
    op = InpaintingOperator(np.ones((3, 3, 2), dtype=bool))
    y = rng.normal(size=18)
    X = op.x_update(rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3, 2)), y, 1e-12)
    np.testing.assert_allclose(X.ravel(), y, atol=1e-10)


@pytest.mark.parametrize("rho", [0.0, -1.0])
def test_rho_must_be_positive(rng, rho):
    for op in random_ops(rng):
        z = np.zeros(op.shape)
        with pytest.raises(InvalidArgument):
            op.x_update(z, z, np.zeros(op.measurement_shape()), rho)


# -- fidelity Lipschitz bound -------------------------------------------------------------

def test_fidelity_bound_examples(rng):
    X, Y = rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3))
    assert fidelity_lipschitz_bound(VideoSciOperator(np.zeros((3, 3, 2))), X, Y) == 0.0
    masks = np.zeros((3, 3, 2))
    masks[1, 1, 0] = 1.0
    op = VideoSciOperator(masks)
    expect = (np.sqrt(2) * np.linalg.norm(X) + np.linalg.norm(Y)) * 1.0
    assert fidelity_lipschitz_bound(op, X, Y) == pytest.approx(expect, rel=1e-15)
    assert fidelity_lipschitz_bound(op, 2 * X, Y) > fidelity_lipschitz_bound(op, X, Y)


def test_fidelity_gradient_within_bound(rng):
    op = VideoSciOperator(make_bernoulli_masks((5, 5, 4), 0.5, 2))
    Y = rng.normal(size=(5, 5))
    X1, X2 = rng.normal(size=(5, 5, 4)), rng.normal(size=(5, 5, 4))
    diff = np.linalg.norm(op.fidelity_grad(X1, Y) - op.fidelity_grad(X2, Y))
    R = max(np.linalg.norm(X1), np.linalg.norm(X2))
    assert diff <= fidelity_lipschitz_bound(op, np.full(X1.shape, R / np.sqrt(X1.size)), Y) * np.linalg.norm(X1 - X2)
