import numpy as np
import pytest

from adaparam import tensor as tt
from adaparam.adaptive import (
    AdaptationPolicy,
    AdaptiveLinear,
    DegenerateWeightsError,
    NoFactorizationError,
    PolicyNet,
    StaticLinear,
    activation_effect,
    adaptive_forward,
    emit_adaptation_heatmap,
    io_forward,
    solve_io_factorization,
    sva_forward,
)
from adaparam.gradcheck import grad_check
from adaparam.params import rng_stream
from adaparam.tensor import Tape, Tensor, backward, tsum


class FixedDiagonals:
    """Test stub: policy returning preset diagonal vectors."""

    def __init__(self, sizes, values):
        self.sizes = list(sizes)
        self.values = values

    def diagonals(self, pol_in):
        return [None if v is None else Tensor(np.asarray(v, dtype=float)) for v in self.values]

    def params(self):
        return []


def _math_matrix(store):
    # layers store (fan_in, fan_out); the equations use (out, in)
    return store.data.T


# ---------------------------------------------------------------------------
# forward specializations


def test_io_forward_hand_example():
    # math view: W = [[1,2],[3,4]], x = [1,1], d1 = [1,0], d2 = [1,1], d0 = 0
    rng = rng_stream(0, "io-hand")
    layer = AdaptiveLinear.io(2, 2, rng, "l")
    layer.weights[0].data = np.array([[1.0, 2.0], [3.0, 4.0]]).T.copy()
    layer.policy = FixedDiagonals([2, 2, 2], [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    y = io_forward(layer, Tensor([1.0, 1.0]))
    assert np.allclose(y.data, [1.0, 3.0], atol=1e-15)


def test_sva_forward_hand_example():
    rng = rng_stream(0, "sva-hand")
    layer = AdaptiveLinear.sva(2, 2, 2, rng, "l")
    layer.weights[0].data = np.eye(2)
    layer.weights[1].data = np.eye(2)
    layer.policy = FixedDiagonals([2, 2, 2, 2], [[0.0, 0.0], None, [2.0, 3.0], None])
    y = sva_forward(layer, Tensor([1.0, 1.0]))
    assert np.allclose(y.data, [2.0, 3.0], atol=1e-15)


def test_forward_kind_guards():
    rng = rng_stream(1, "guards")
    io = AdaptiveLinear.io(3, 2, rng, "io")
    sva = AdaptiveLinear.sva(3, 2, 2, rng, "sva")
    with pytest.raises(ValueError):
        sva_forward(io, Tensor(np.ones(3)))
    with pytest.raises(ValueError):
        io_forward(sva, Tensor(np.ones(3)))
    with pytest.raises(tt.ShapeError):
        io_forward(io, Tensor(np.ones(4)))


# ---------------------------------------------------------------------------
# identity-policy reductions


@pytest.mark.parametrize("kind", ["input", "output", "io"])
def test_identity_policy_reduces_to_static_layer(kind, batch=4):
    rng = rng_stream(2, f"reduce-{kind}")
    layer = AdaptiveLinear.io(5, 3, rng, "l", kind=kind, activation="tanh")
    layer.b.data = rng.standard_normal(3)
    frozen = layer.force_constant_policy()
    static = StaticLinear(5, 3, rng_stream(2, "static"), "s", activation="tanh")
    static.W = layer.weights[0]
    static.b = layer.b
    x = Tensor(rng.standard_normal((batch, 5)))

    with Tape() as t1:
        y1 = tsum(adaptive_forward(frozen, x))
    with Tape() as t2:
        y2 = tsum(static(x))
    assert np.max(np.abs(y1.data - y2.data)) < 1e-12
    g1 = backward(t1, y1)
    g2 = backward(t2, y2)
    for p in (layer.weights[0], layer.b):
        assert np.max(np.abs(g1[p] - g2[p])) < 1e-10


def test_identity_policy_sva_reduces_to_composed_linear():
    rng = rng_stream(3, "reduce-sva")
    layer = AdaptiveLinear.sva(4, 3, 2, rng, "l")
    layer.b.data = rng.standard_normal(3)
    frozen = layer.force_constant_policy()
    x = Tensor(rng.standard_normal((5, 4)))
    y = adaptive_forward(frozen, x)
    want = x.data @ layer.weights[0].data @ layer.weights[1].data + layer.b.data
    assert np.max(np.abs(y.data - want)) < 1e-12


def test_identity_policy_general_order_reduces_to_matrix_chain():
    rng = rng_stream(4, "reduce-general")
    layer = AdaptiveLinear.general([4, 3, 5, 2], rng, "l")
    frozen = layer.force_constant_policy()
    x = Tensor(rng.standard_normal((3, 4)))
    y = adaptive_forward(frozen, x)
    want = x.data
    for w in layer.weights:
        want = want @ w.data
    assert np.max(np.abs(y.data - want)) < 1e-12


def test_input_adaptation_equals_io_with_identity_output_diag():
    rng = rng_stream(5, "input-vs-io")
    io = AdaptiveLinear.io(4, 3, rng, "l", kind="io")
    io.policy.projections[2] = None  # force D2 = I
    inp = AdaptiveLinear.io(4, 3, rng_stream(99, "unused"), "m", kind="input")
    inp.weights = io.weights
    inp.b = io.b
    inp.policy = AdaptationPolicy("input", io.policy.net,
                                  [io.policy.projections[0], io.policy.projections[1], None],
                                  io.policy.sizes)
    x = Tensor(rng.standard_normal((6, 4)))
    assert np.max(np.abs(io_forward(io, x).data - io_forward(inp, x).data)) < 1e-15


# ---------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("policy_net", ["linear", "glu", "relu-mlp"])
def test_io_layer_gradient_check(policy_net):
    rng = rng_stream(6, f"grad-io-{policy_net}")
    layer = AdaptiveLinear.io(4, 3, rng, "l", latent=5, policy_net=policy_net)
    x = Tensor(rng.standard_normal((2, 4)) + 0.1)
    t = Tensor(rng.standard_normal((2, 3)))
    err = grad_check(lambda: tt.mse(io_forward(layer, x), t), layer.params())
    assert err < 1e-5


def test_sva_layer_gradient_check_both_policy_inputs():
    rng = rng_stream(7, "grad-sva")
    for mode in ("input", "projected"):
        layer = AdaptiveLinear.sva(4, 2, 3, rng, f"l-{mode}", latent=5, policy_input=mode)
        x = Tensor(rng.standard_normal((3, 4)))
        err = grad_check(lambda: tsum(tt.tanh(sva_forward(layer, x))), layer.params())
        assert err < 1e-5, mode


def test_general_order_three_gradient_check():
    rng = rng_stream(8, "grad-q3")
    layer = AdaptiveLinear.general([3, 4, 2], rng, "l", latent=4, activation="tanh")
    x = Tensor(rng.standard_normal((2, 3)))
    assert grad_check(lambda: tsum(adaptive_forward(layer, x)), layer.params()) < 1e-5


def test_quadratic_homogeneity_of_biasfree_input_adaptation():
    # with a linear bias-free policy and zero bias, f(a x) = a^2 f(x)
    rng = rng_stream(9, "homogeneity")
    layer = AdaptiveLinear.io(4, 3, rng, "l", kind="input",
                              policy_net="linear", policy_bias=False, latent=5)
    x = rng.standard_normal((6, 4))
    alpha = 2.0
    f1 = adaptive_forward(layer, Tensor(alpha * x)).data
    f2 = alpha**2 * adaptive_forward(layer, Tensor(x)).data
    rel = np.max(np.abs(f1 - f2) / np.maximum(1e-12, np.abs(f2)))
    assert rel < 1e-10


# ---------------------------------------------------------------------------
# activation effect


def test_activation_effect_relu_signs():
    a = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    assert np.array_equal(activation_effect("relu", a), [0.0, 0.0, 0.0, 1.0, 1.0])


def test_activation_effect_tanh_near_linear_at_zero():
    g = activation_effect("tanh", np.array([0.01]))[0]
    assert abs(g - np.tanh(0.01) / 0.01) < 1e-15
    assert abs(g - 0.99997) < 1e-4
    assert activation_effect("tanh", np.array([0.0]))[0] == 1.0
    assert activation_effect("sigmoid", np.array([0.0]))[0] == 0.25


def test_activation_effect_reconstructs_scaled_activation():
    rng = rng_stream(10, "geffect")
    a = rng.standard_normal(50)
    for kind, fn in [("relu", lambda v: np.maximum(v, 0)), ("tanh", np.tanh)]:
        g = activation_effect(kind, a)
        assert np.max(np.abs(g * a - fn(a))) < 1e-15


def test_relu_network_reconstruction_from_activation_effects():
    rng = rng_stream(11, "recon")
    layers = [StaticLinear(d_in, d_out, rng, f"l{i}", activation="relu")
              for i, (d_in, d_out) in enumerate([(4, 6), (6, 5), (5, 3)])]
    x = rng.standard_normal(4)

    h = Tensor(x)
    for layer in layers:
        h = layer(h)
    direct = h.data

    v = x
    for layer in layers:
        a = _math_matrix(layer.W) @ v + layer.b.data
        G = np.diag(activation_effect("relu", a))
        v = G @ a
    assert np.max(np.abs(v - direct)) < 1e-12


# ---------------------------------------------------------------------------
# constructive io factorization


def _residual(W, x, G, d1, d2):
    return np.max(np.abs(G @ x - np.diag(d2) @ W @ np.diag(d1) @ x))


def test_factorization_spec_example():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    x = np.array([1.0, 0.0])
    G = np.array([[5.0, 6.0], [7.0, 8.0]])
    d1, d2 = solve_io_factorization(W, x, G)
    assert np.array_equal(d1, [1.0, 0.0])
    assert np.allclose(d2, [5.0, 7.0 / 3.0], atol=1e-15)
    assert _residual(W, x, G, d1, d2) == 0.0


def test_factorization_self_consistency_g_equals_w():
    rng = rng_stream(12, "self")
    for _ in range(50):
        W = rng.standard_normal((5, 4))
        x = rng.standard_normal(4)
        d1, d2 = solve_io_factorization(W, x, W)
        assert _residual(W, x, W, d1, d2) < 1e-12


def test_factorization_thousand_random_instances():
    rng = rng_stream(13, "prop")
    worst = 0.0
    for _ in range(1000):
        W = rng.standard_normal((8, 8))
        x = rng.standard_normal(8)
        G = rng.standard_normal((8, 8))
        d1, d2 = solve_io_factorization(W, x, G)
        worst = max(worst, _residual(W, x, G, d1, d2))
    assert worst < 1e-9


def test_factorization_solutions_rescale_freely():
    rng = rng_stream(14, "rescale")
    W = rng.standard_normal((6, 6))
    x = rng.standard_normal(6)
    G = rng.standard_normal((6, 6))
    d1, d2 = solve_io_factorization(W, x, G)
    for c in (2.5, -3.0, 1e3, 1e-3):
        assert _residual(W, x, G, c * d1, d2 / c) < 1e-9


def test_factorization_zero_input_error():
    with pytest.raises(NoFactorizationError):
        solve_io_factorization(np.eye(2), np.zeros(2), np.eye(2))


def test_factorization_degenerate_weights_error():
    W = np.array([[0.0, 5.0], [1.0, 2.0]])
    x = np.array([1.0, 0.0])  # only column 0 is a candidate
    G = np.array([[1.0, 1.0], [1.0, 1.0]])  # (Gx)_0 = 1 != 0 but W[0,0] = 0
    with pytest.raises(DegenerateWeightsError):
        solve_io_factorization(W, x, G)


def test_factorization_tolerates_zero_weight_on_zero_target_row():
    W = np.array([[0.0, 5.0], [1.0, 2.0]])
    x = np.array([1.0, 0.0])
    G = np.array([[0.0, 9.0], [4.0, 1.0]])  # (Gx)_0 = 0, so W[0,0] = 0 is fine
    d1, d2 = solve_io_factorization(W, x, G)
    assert _residual(W, x, G, d1, d2) < 1e-12


def test_factorization_picks_largest_admissible_pivot():
    W = np.ones((3, 3))
    x = np.array([0.1, -5.0, 2.0])
    G = np.arange(9.0).reshape(3, 3)
    d1, _ = solve_io_factorization(W, x, G)
    assert d1[1] == 1.0 / x[1] and d1[0] == 0.0 and d1[2] == 0.0


# ---------------------------------------------------------------------------
# heatmap emission


def test_heatmap_identity_policy_effective_matrix_is_w():
    rng = rng_stream(15, "heat-id")
    layer = AdaptiveLinear.io(3, 2, rng, "l")
    frozen = layer.force_constant_policy()
    X = rng.standard_normal((4, 3))
    table = emit_adaptation_heatmap(frozen, X)
    assert table.rows.shape[0] == 4
    Wm = _math_matrix(layer.weights[0])
    eff_cols = [i for i, h in enumerate(table.header) if h.startswith("eff_")]
    for row in table.rows:
        assert np.max(np.abs(row[eff_cols].reshape(2, 3) - Wm)) < 1e-15


def test_heatmap_sva_emits_singular_values_per_input():
    rng = rng_stream(16, "heat-sva")
    layer = AdaptiveLinear.sva(4, 3, 2, rng, "l")
    X = rng.standard_normal((7, 4))
    table = emit_adaptation_heatmap(layer, X)
    sv_cols = [h for h in table.header if h.startswith("sv_")]
    assert len(sv_cols) == 2
    assert table.rows.shape[0] == 7


def test_heatmap_rejects_general_layers_and_writes_csv(tmp_path):
    rng = rng_stream(17, "heat-csv")
    with pytest.raises(ValueError):
        emit_adaptation_heatmap(AdaptiveLinear.general([3, 3, 3], rng, "g"), np.ones((1, 3)))
    layer = AdaptiveLinear.io(2, 2, rng, "l")
    table = emit_adaptation_heatmap(layer, np.ones((3, 2)))
    path = tmp_path / "heat.csv"
    table.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0].split(",") == table.header
    assert len(lines) == 4
    v = float(lines[1].split(",")[0])
    assert f"{v:.17g}" == lines[1].split(",")[0]


def test_sva_singular_value_oracle():
    # semi-orthogonal factors make the composed map's singular values |d|
    rng = rng_stream(18, "sva-svd")
    for n, r, m in [(2, 2, 2), (4, 3, 5), (6, 2, 3)]:
        layer = AdaptiveLinear.sva(n, m, r, rng, "l", latent=4)
        x = rng.standard_normal(n)
        ds = layer.policy.diagonals(Tensor(x))
        d = ds[2].data
        M = _math_matrix(layer.weights[1]) @ np.diag(d) @ _math_matrix(layer.weights[0])
        sv = np.linalg.svd(M, compute_uv=False)
        want = np.sort(np.concatenate([np.abs(d), np.zeros(min(m, n) - r)]))
        assert np.allclose(np.sort(sv), want, atol=1e-10)


def test_policy_projection_extent_validation():
    rng = rng_stream(19, "policy-val")
    net = PolicyNet("linear", 3, 4, rng, "p")
    with pytest.raises(tt.ShapeError):
        AdaptationPolicy("io", net, [None, None], [2, 3, 2])
    from adaparam.params import projection

    bad = projection(rng, 4, 5, "u")
    with pytest.raises(tt.ShapeError):
        AdaptationPolicy("io", net, [bad, None, None], [2, 3, 2])
