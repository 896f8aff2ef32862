"""Adaptive feed-forward layers.

A layer of order q interleaves q input-dependent diagonal scalings with
q-1 fixed weight matrices,

    y = phi( D_q . W_{q-1} . ... . W_1 . D_1 . x  +  D_0 . b ),

where each D_j = diag(pi_j(x)) comes from a shared policy network evaluated
once per input. Named special cases:

    input   D_2 = I            scales columns of W (rescales the input)
    output  D_1 = I            scales rows of W
    io      both active        jointly rescales sub-matrices of W
    sva     W_2 . D . W_1      D acts as input-adapted singular values

Weights are stored (fan_in, fan_out); batched inputs are row vectors, so
the forward pass is x @ W and the equations above describe the transposed
view of the same map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .params import Parameter, bias, projection, weight
from .tensor import ShapeError, Tensor, as_tensor


class NoFactorizationError(ValueError):
    """The input vector is zero, so no diagonal pair can reproduce G x."""


class DegenerateWeightsError(ValueError):
    """Every admissible pivot column of W has a zero where (G x) is nonzero."""


# ---------------------------------------------------------------------------
# policy networks


class PolicyNet:
    """Maps the policy input to the latent the diagonals are projected from."""

    KINDS = ("linear", "glu", "relu-mlp")

    def __init__(self, kind, in_dim, latent, rng, name, use_bias=True):
        if kind not in self.KINDS:
            raise ValueError(f"unknown policy net kind {kind!r}")
        self.kind = kind
        self.in_dim = in_dim
        self.latent = latent
        self.use_bias = use_bias
        if kind == "linear":
            self.W = weight(rng, in_dim, latent, f"{name}.W")
            self.b = bias(latent, f"{name}.b") if use_bias else None
        elif kind == "glu":
            self.A = weight(rng, in_dim, latent, f"{name}.A")
            self.a = bias(latent, f"{name}.a") if use_bias else None
            self.B = weight(rng, in_dim, latent, f"{name}.B")
            self.c = bias(latent, f"{name}.c") if use_bias else None
        else:  # relu-mlp
            self.W1 = weight(rng, in_dim, latent, f"{name}.W1")
            self.b1 = bias(latent, f"{name}.b1") if use_bias else None
            self.W2 = weight(rng, latent, latent, f"{name}.W2")
            self.b2 = bias(latent, f"{name}.b2") if use_bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if self.kind == "linear":
            z = tt.matmul(x, self.W)
            return z + self.b if self.b is not None else z
        if self.kind == "glu":
            lin = tt.matmul(x, self.A)
            if self.a is not None:
                lin = lin + self.a
            gate = tt.matmul(x, self.B)
            if self.c is not None:
                gate = gate + self.c
            return tt.mul(lin, tt.sigmoid(gate))
        h = tt.matmul(x, self.W1)
        if self.b1 is not None:
            h = h + self.b1
        h = tt.relu(h)
        h = tt.matmul(h, self.W2)
        return h + self.b2 if self.b2 is not None else h

    def params(self) -> list[Parameter]:
        if self.kind == "linear":
            ps = [self.W, self.b]
        elif self.kind == "glu":
            ps = [self.A, self.a, self.B, self.c]
        else:
            ps = [self.W1, self.b1, self.W2, self.b2]
        return [p for p in ps if p is not None]


class AdaptationPolicy:
    """Produces the diagonal vectors [d_0, d_1, ..., d_q] for one layer.

    Slot j maps the shared latent through its own projection; a ``None``
    projection means that block is absent (identity scaling, no parameters).
    A policy with ``net is None`` is the constant-one policy: every present
    slot yields ones, reducing the layer to its static counterpart.
    """

    def __init__(self, kind, net, projections, sizes):
        self.kind = kind
        self.net = net
        self.projections = list(projections)
        self.sizes = list(sizes)
        if len(self.projections) != len(self.sizes):
            raise ShapeError("one projection slot per diagonal block is required")
        for u, n in zip(self.projections, self.sizes):
            if u is not None and u.shape[1] != n:
                raise ShapeError(
                    f"projection output {u.shape[1]} does not match scaled extent {n}"
                )

    @classmethod
    def constant_ones(cls, kind, sizes):
        return cls(kind, None, [None] * len(sizes), sizes)

    @property
    def order(self) -> int:
        return len(self.sizes) - 1

    def diagonals(self, pol_in: Tensor) -> list[Tensor | None]:
        if self.net is None:
            lead = () if pol_in.ndim == 1 else (pol_in.shape[0],)
            return [Tensor(np.ones(lead + (n,))) for n in self.sizes]
        z = self.net(pol_in)
        return [None if u is None else tt.matmul(z, u) for u in self.projections]

    def params(self) -> list[Parameter]:
        ps = [] if self.net is None else self.net.params()
        return ps + [u for u in self.projections if u is not None]


# ---------------------------------------------------------------------------
# layers


class StaticLinear:
    """Plain y = phi(x @ W + b); the q = 1, constant-policy degenerate case."""

    def __init__(self, in_dim, out_dim, rng, name, activation=None):
        self.W = weight(rng, in_dim, out_dim, f"{name}.W")
        self.b = bias(out_dim, f"{name}.b")
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = tt.matmul(as_tensor(x), self.W) + self.b
        return tt.elementwise(self.activation, y) if self.activation else y

    def params(self) -> list[Parameter]:
        return [self.W, self.b]


class AdaptiveLinear:
    """Adaptive layer of any order; see the module docstring for the map."""

    KINDS = ("input", "output", "io", "sva", "general")

    def __init__(self, kind, weights, bias_param, policy, activation=None,
                 policy_input="input"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown adaptation kind {kind!r}")
        self.kind = kind
        self.weights = list(weights)
        self.b = bias_param
        self.policy = policy
        self.activation = activation
        self.policy_input = policy_input
        dims = [w.shape[0] for w in self.weights] + [self.weights[-1].shape[1]]
        # slot 0 scales the bias (output extent); slots 1..q follow the chain
        if policy.sizes != [dims[-1]] + dims:
            raise ShapeError(
                f"diagonal extents {policy.sizes} do not conform with weight chain {dims}"
            )

    # -- constructors -------------------------------------------------------

    @classmethod
    def io(cls, in_dim, out_dim, rng, name, latent=16, policy_net="glu",
           activation=None, policy_bias=True, kind="io"):
        """io / input / output layer over a single weight matrix."""
        if kind not in ("io", "input", "output"):
            raise ValueError(f"kind {kind!r} is not a single-matrix adaptation")
        W = weight(rng, in_dim, out_dim, f"{name}.W")
        net = PolicyNet(policy_net, in_dim, latent, rng, f"{name}.policy", use_bias=policy_bias)
        u0 = projection(rng, latent, out_dim, f"{name}.U0")
        u1 = projection(rng, latent, in_dim, f"{name}.U1") if kind != "output" else None
        u2 = projection(rng, latent, out_dim, f"{name}.U2") if kind != "input" else None
        policy = AdaptationPolicy(kind, net, [u0, u1, u2], [out_dim, in_dim, out_dim])
        return cls(kind, [W], bias(out_dim, f"{name}.b"), policy, activation)

    @classmethod
    def sva(cls, in_dim, out_dim, rank, rng, name, latent=16, policy_net="glu",
            activation=None, policy_bias=True, policy_input="input"):
        W1 = weight(rng, in_dim, rank, f"{name}.W1")
        W2 = weight(rng, rank, out_dim, f"{name}.W2")
        pol_dim = in_dim if policy_input == "input" else rank
        net = PolicyNet(policy_net, pol_dim, latent, rng, f"{name}.policy", use_bias=policy_bias)
        u0 = projection(rng, latent, out_dim, f"{name}.U0")
        ud = projection(rng, latent, rank, f"{name}.Ud")
        policy = AdaptationPolicy("sva", net, [u0, None, ud, None],
                                  [out_dim, in_dim, rank, out_dim])
        return cls("sva", [W1, W2], bias(out_dim, f"{name}.b"), policy, activation,
                   policy_input=policy_input)

    @classmethod
    def general(cls, dims, rng, name, latent=16, policy_net="glu", activation=None,
                policy_bias=True):
        """Order-q layer over the extent chain ``dims = [in, n1, ..., out]``."""
        q = len(dims)
        if q < 2:
            raise ValueError("need at least [in, out] extents")
        ws = [weight(rng, dims[i], dims[i + 1], f"{name}.W{i + 1}") for i in range(q - 1)]
        net = PolicyNet(policy_net, dims[0], latent, rng, f"{name}.policy", use_bias=policy_bias)
        us = [projection(rng, latent, dims[-1], f"{name}.U0")]
        us += [projection(rng, latent, dims[j], f"{name}.U{j + 1}") for j in range(q)]
        policy = AdaptationPolicy("general", net, us, [dims[-1]] + list(dims))
        return cls("general", ws, bias(dims[-1], f"{name}.b"), policy, activation)

    # -- forward ------------------------------------------------------------

    def __call__(self, x: Tensor) -> Tensor:
        return adaptive_forward(self, x)

    def params(self) -> list[Parameter]:
        return list(self.weights) + [self.b] + self.policy.params()

    def force_constant_policy(self) -> "AdaptiveLinear":
        """Copy of this layer with every diagonal frozen at one (shared weights)."""
        frozen = AdaptationPolicy.constant_ones(self.kind, self.policy.sizes)
        return AdaptiveLinear(self.kind, self.weights, self.b, frozen,
                              self.activation, self.policy_input)


def adaptive_forward(layer: AdaptiveLinear, x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != layer.weights[0].shape[0]:
        raise ShapeError(
            f"input extent {x.shape[-1]} does not match layer fan-in {layer.weights[0].shape[0]}"
        )
    projected = None
    if layer.policy_input == "projected":
        projected = tt.matmul(x, layer.weights[0])
    ds = layer.policy.diagonals(projected if projected is not None else x)
    h = x if ds[1] is None else tt.mul(x, ds[1])
    for j, W in enumerate(layer.weights):
        if j == 0 and projected is not None and ds[1] is None:
            h = projected  # first matmul already done for the policy trunk
        else:
            h = tt.matmul(h, W)
        d = ds[j + 2]
        if d is not None:
            h = tt.mul(h, d)
    bterm = layer.b if ds[0] is None else tt.mul(ds[0], layer.b)
    y = h + bterm
    return tt.elementwise(layer.activation, y) if layer.activation else y


def io_forward(layer: AdaptiveLinear, x: Tensor) -> Tensor:
    """y = D2 W D1 x + D0 b; requires a single-matrix adaptation layer."""
    if layer.kind not in ("io", "input", "output"):
        raise ValueError(f"io_forward needs an io/input/output layer, got {layer.kind!r}")
    return adaptive_forward(layer, x)


def sva_forward(layer: AdaptiveLinear, x: Tensor) -> Tensor:
    """y = W2 D W1 x + D0 b with the inner diagonal as adapted singular values."""
    if layer.kind != "sva":
        raise ValueError(f"sva_forward needs an sva layer, got {layer.kind!r}")
    return adaptive_forward(layer, x)


# ---------------------------------------------------------------------------
# diagnostics


def activation_effect(kind: str, a) -> np.ndarray:
    """Componentwise phi(a) / a, taking the derivative value at a = 0.

    Turns an activation into the data-dependent diagonal scaling g with
    g(a) * a == phi(a) wherever a != 0.
    """
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=float)
    if kind == "relu":
        return (a > 0).astype(float)
    if kind == "tanh":
        out = np.ones_like(a)
        nz = a != 0
        out[nz] = np.tanh(a[nz]) / a[nz]
        return out
    if kind == "sigmoid":
        out = np.full_like(a, 0.25)
        nz = a != 0
        sig = 1.0 / (1.0 + np.exp(-np.abs(a[nz])))
        sig = np.where(a[nz] >= 0, sig, 1.0 - sig)
        out[nz] = sig / a[nz]
        return out
    raise ValueError(f"unknown activation {kind!r}")


def solve_io_factorization(W, x, G):
    """Diagonals (d1, d2) with diag(d2) . W . diag(d1) . x == G . x.

    Constructive: pick the admissible pivot k with the largest |x_k|, put
    1/x_k there in d1 (zeros elsewhere) and divide (G x) by W's pivot
    column for d2. A column is admissible when x_k != 0 and W[j, k] != 0
    wherever (G x)_j != 0. Solutions are not unique: (c * d1, d2 / c) works
    for any c != 0.
    """
    W = np.asarray(W.data if isinstance(W, Tensor) else W, dtype=float)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    G = np.asarray(G.data if isinstance(G, Tensor) else G, dtype=float)
    if W.ndim != 2 or G.shape != W.shape or x.shape != (W.shape[1],):
        raise ShapeError(f"conforming W {W.shape}, G {G.shape}, x {x.shape} required")
    y = G @ x
    nonzero = np.flatnonzero(x != 0)
    if nonzero.size == 0:
        raise NoFactorizationError("x is the zero vector; G x cannot be factored through it")
    need = y != 0
    admissible = [k for k in nonzero if np.all(W[need, k] != 0)]
    if not admissible:
        raise DegenerateWeightsError(
            "every candidate column of W has a zero in a row where (G x) is nonzero"
        )
    k = max(admissible, key=lambda j: abs(x[j]))
    d1 = np.zeros_like(x)
    d1[k] = 1.0 / x[k]
    col = W[:, k]
    d2 = np.divide(y, col, out=np.zeros_like(y), where=col != 0)
    return d1, d2


# ---------------------------------------------------------------------------
# adaptation heatmaps


@dataclass
class HeatmapTable:
    header: list[str]
    rows: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.header) + "\n")
            for row in self.rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def emit_adaptation_heatmap(layer: AdaptiveLinear, inputs) -> HeatmapTable:
    """Per-input diagonal vectors, plus the effective matrix for io layers
    and the adapted singular values for sva layers."""
    if layer.kind not in ("input", "output", "io", "sva"):
        raise ValueError(f"heatmap unsupported for layer kind {layer.kind!r}")
    X = np.atleast_2d(np.asarray(inputs.data if isinstance(inputs, Tensor) else inputs, dtype=float))
    pol_in = Tensor(X if layer.policy_input == "input" else X @ layer.weights[0].data)
    ds = layer.policy.diagonals(pol_in)
    present = [(j, d) for j, d in enumerate(ds) if d is not None]
    names = {0: "d0", 1: "d1", 2: "d" if layer.kind == "sva" else "d2"}
    header: list[str] = []
    cols: list[np.ndarray] = []
    for j, d in present:
        label = names.get(j, f"d{j}")
        if layer.kind == "sva" and j == 2:
            label = "sv"
        dv = np.atleast_2d(d.data)
        header += [f"{label}_{i}" for i in range(dv.shape[1])]
        cols.append(dv)
    if layer.kind == "io":
        Wm = layer.weights[0].data.T  # math orientation (out, in)
        d1 = np.atleast_2d(ds[1].data)
        d2 = np.atleast_2d(ds[2].data)
        eff = d2[:, :, None] * Wm[None, :, :] * d1[:, None, :]
        m, n = Wm.shape
        header += [f"eff_{i}_{j}" for i in range(m) for j in range(n)]
        cols.append(eff.reshape(X.shape[0], m * n))
    return HeatmapTable(header, np.concatenate(cols, axis=1))
