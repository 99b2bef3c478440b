import numpy as np
import pytest

from gridtd.encoding import EncoderConfig, encode_batch_parallel, init_tables
from gridtd.errors import InvalidArgument
from gridtd.model import (AffineAdapter, GridTDModel, MlpDecoder, ModelConfig, affine_apply, decode,
                          forward_full, lipschitz_bound, load_params, save_params, warp_frames)
from gridtd.tensor import CoordinateGrid, cp_assemble, uniform_coordinates


def small_model(mode="decomposed", affine=False, shape=(4, 4, 2), seed=0, **kw):
    enc = EncoderConfig(mode=mode, D=len(shape), L=2, F=2, N_min=2, N_max=4, T=2 ** 10)
    return GridTDModel(ModelConfig(enc, hidden=8, affine=affine, inr_hidden=4, **kw), shape, seed=seed)


# -- decode ------------------------------------------------------------------------

def test_decode_recovers_cp(rng):
    R, shape = 4, (3, 4, 2)
    factors = [[rng.uniform(0.1, 1.0, n) for n in shape] for _ in range(R)]
    H = np.stack([np.multiply.outer(np.multiply.outer(f[0], f[1]), f[2]) for f in factors], axis=-1)
    mlp = MlpDecoder(np.eye(R), np.zeros(R), np.ones((1, R)))
    np.testing.assert_allclose(decode(mlp, H), cp_assemble(factors), atol=1e-15)


def test_decode_zero_weights(rng):
    mlp = MlpDecoder(np.zeros((5, 3)), np.zeros(5), np.zeros((1, 5)))
    assert np.all(decode(mlp, rng.normal(size=(2, 3, 4, 3))) == 0)


def test_decode_single_point_oracle(rng):
    W1, b, W2 = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=(1, 5))
    h = rng.normal(size=3)
    expect = sum(W2[0, i] * max(0.0, W1[i] @ h + b[i]) for i in range(5))
    out = decode(MlpDecoder(W1, b, W2), h.reshape(1, 1, 1, 3))
    assert out.shape == (1, 1, 1)
    assert abs(out[0, 0, 0] - expect) < 1e-14


def test_decode_linear_in_w2(rng):
    W1, b, W2 = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=(1, 5))
    H = rng.normal(size=(4, 3, 3))
    np.testing.assert_array_equal(decode(MlpDecoder(W1, b, 2 * W2), H), 2 * decode(MlpDecoder(W1, b, W2), H))


def test_decode_width_mismatch(rng):
    with pytest.raises(InvalidArgument):
        decode(MlpDecoder(np.ones((2, 3)), np.zeros(2), np.ones((1, 2))), np.ones((2, 2, 4)))


# -- affine adapter ----------------------------------------------------------------

def identity_adapter(n3, R=4, hidden=3):
    zero = MlpDecoder(np.zeros((hidden, R)), np.zeros(hidden), np.zeros((1, hidden)))
    return AffineAdapter(np.zeros(n3), np.zeros(n3), zero, zero)


def test_affine_identity_exact(rng):
    L = rng.normal(size=(6, 5, 3))
    out = affine_apply(identity_adapter(3), L, rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(out, L)


def test_translation_by_one_pixel(rng):
    frames = rng.normal(size=(6, 7, 1))
    out = warp_frames(frames, [1.0], [0.0], [1.0], [0.0])
    # output(i, j) samples input at (i + 1, j)
    np.testing.assert_array_equal(out[:-1, :, 0], frames[1:, :, 0])
    np.testing.assert_array_equal(out[-1, :, 0], 0.0)


def test_rotation_quarter_turn(rng):
    n = 7
    frame = np.zeros((n, n, 1))
    frame[2:5, 1:6, 0] = rng.uniform(0.5, 1.0, size=(3, 5))
    out = warp_frames(frame, [1.0], [np.pi / 2], [0.0], [0.0])
    # remap oracle: output(i, j) = input(c - (j - c), c + (i - c)) with c the centre
    c = (n - 1) / 2
    oracle = np.zeros_like(frame)
    for i in range(n):
        for j in range(n):
            si, sj = int(round(c - (j - c))), int(round(c + (i - c)))
            oracle[i, j, 0] = frame[si, sj, 0]
    np.testing.assert_allclose(out, oracle, atol=1e-12)


def test_forward_affine_off_is_latent():
    m = small_model(affine=True)
    np.testing.assert_array_equal(m.render(use_affine=False), m.latent())


def test_forward_identity_adapter_equals_plain():
    m = small_model(affine=True)
    # fresh adapters are the identity: zero INR output layers, s=1, theta=0
    np.testing.assert_array_equal(m.render(use_affine=True), m.render(use_affine=False))


def test_forward_matches_component_oracles():
    m = small_model(grid_init=0.5)
    enc = m.encoder
    H = encode_batch_parallel(enc, m.tables(), uniform_coordinates((4, 4, 2)))
    np.testing.assert_allclose(forward_full(m), decode(m.mlp(), H), atol=1e-14)


def test_forward_dense_matches_evaluate_points():
    m = small_model(mode="dense", grid_init=0.5)
    pts = m.coords.points()
    np.testing.assert_allclose(m.render().ravel(), m.evaluate_points(pts), atol=1e-14)


@pytest.mark.parametrize("mode", ["dense", "decomposed"])
def test_forward_deterministic(mode):
    a = small_model(mode=mode, affine=True, seed=3).render()
    b = small_model(mode=mode, affine=True, seed=3).render()
    assert a.tobytes() == b.tobytes()


def test_affine_requires_3d():
    enc = EncoderConfig(D=2)
    with pytest.raises(InvalidArgument):
        ModelConfig(enc, affine=True)


# -- Lipschitz bound -----------------------------------------------------------------

def test_lipschitz_bound_hand_example():
    cfg = EncoderConfig(mode="decomposed", D=2, L=1, F=1, N_min=2, N_max=2)
    mlp = MlpDecoder(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)))
    # 2 * gamma * eta * D * N = 2 * 1 * 1 * 2 * (2 - 1)
    assert lipschitz_bound(mlp, cfg) == 4.0


def test_lipschitz_bound_modes(rng):
    mlp = MlpDecoder(rng.normal(size=(6, 4)), rng.normal(size=6), rng.normal(size=(1, 6)))
    cfg1 = EncoderConfig(mode="dense", D=1, L=2, F=2, N_min=4, N_max=16)
    assert lipschitz_bound(mlp, cfg1, "dense") == lipschitz_bound(mlp, cfg1, "decomposed")
    cfg3 = cfg1.replace(D=3)
    assert lipschitz_bound(mlp, cfg3, "dense") / lipschitz_bound(mlp, cfg3, "decomposed") == 4.0


# -- checkpoints -----------------------------------------------------------------------

def test_param_checkpoint_roundtrip(tmp_path):
    m = small_model(affine=True, grid_init=0.5)
    save_params(m.params, tmp_path / "p.gtd")
    store = load_params(tmp_path / "p.gtd")
    assert store.names() == m.params.names()
    for n in store.names():
        assert store[n].tobytes() == m.params[n].tobytes()
        assert store.groups[n] == m.params.groups[n]
    manifest = (tmp_path / "p.gtd.manifest").read_text().splitlines()
    assert [line.split("\t")[0] for line in manifest] == sorted(store.names())
    m2 = GridTDModel(m.cfg, m.shape, params=store)
    assert m2.render().tobytes() == m.render().tobytes()


def test_model_shape_mismatch():
    with pytest.raises(InvalidArgument):
        GridTDModel(ModelConfig(EncoderConfig(D=3)), (4, 4))
