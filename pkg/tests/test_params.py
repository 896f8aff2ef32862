import numpy as np
import pytest

from adaparam.params import (
    CheckpointError,
    Parameter,
    bias,
    load_checkpoint,
    load_into,
    projection,
    rng_stream,
    save_checkpoint,
    semi_orthogonal,
    uniform_fanin,
    weight,
)

# shapes actually used by the models: square, tall, wide, gate blocks
MODEL_SHAPES = [(4, 4), (10, 2), (2, 10), (784, 9), (9, 10), (128, 512), (96, 384), (3, 12)]


@pytest.mark.parametrize("rows,cols", MODEL_SHAPES)
def test_semi_orthogonal_gram_identity(rows, cols):
    m = semi_orthogonal(rng_stream(0, f"so-{rows}x{cols}"), rows, cols)
    assert m.shape == (rows, cols)
    gram = m.T @ m if rows >= cols else m @ m.T
    assert np.max(np.abs(gram - np.eye(min(rows, cols)))) < 1e-10


def test_semi_orthogonal_is_seed_deterministic():
    a = semi_orthogonal(rng_stream(7, "x"), 5, 3)
    b = semi_orthogonal(rng_stream(7, "x"), 5, 3)
    assert np.array_equal(a, b)
    c = semi_orthogonal(rng_stream(8, "x"), 5, 3)
    assert not np.array_equal(a, c)


def test_uniform_fanin_bounds():
    m = uniform_fanin(rng_stream(1, "uf"), 16, (16, 40))
    assert np.max(np.abs(m)) <= 0.25


def test_rng_streams_are_independent_and_stable():
    a = rng_stream(3, "alpha").standard_normal(4)
    b = rng_stream(3, "beta").standard_normal(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, rng_stream(3, "alpha").standard_normal(4))


def test_parameter_factories():
    rng = rng_stream(0, "factories")
    w = weight(rng, 6, 3, "w")
    assert w.init_scheme == "semi-orthogonal" and w.shape == (6, 3)
    u = projection(rng, 6, 3, "u")
    assert u.init_scheme == "uniform-fanin" and u.shape == (6, 3)
    z = bias(4, "b")
    assert np.array_equal(z.data, np.zeros(4)) and z.requires_grad


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = rng_stream(9, "ckpt")
    params = [
        Parameter(rng.standard_normal((3, 5)), "layer0.W"),
        Parameter(rng.standard_normal(7) * 1e-300, "tiny"),
        Parameter(np.array([-0.0, 0.0, np.pi]), "signs"),
        Parameter(np.float64(2.5), "scalar"),
    ]
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    saved = load_checkpoint(path)
    assert set(saved) == {p.name for p in params}
    for p in params:
        assert saved[p.name].shape == p.data.shape
        assert saved[p.name].tobytes() == p.data.tobytes()

    fresh = [Parameter(np.zeros_like(p.data), p.name) for p in params]
    load_into(path, fresh)
    for p, q in zip(params, fresh):
        assert q.data.tobytes() == p.data.tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    rng = rng_stream(10, "trunc")
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, [Parameter(rng.standard_normal((4, 4)), "W")])
    blob = path.read_bytes()
    path.write_bytes(blob[:-9])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_rejects_duplicate_names(tmp_path):
    p = Parameter(np.zeros(2), "same")
    with pytest.raises(CheckpointError, match="duplicate"):
        save_checkpoint(tmp_path / "x.ckpt", [p, p])


def test_checkpoint_shape_mismatch_on_load(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, [Parameter(np.zeros((2, 2)), "W")])
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_into(path, [Parameter(np.zeros((2, 3)), "W")])
