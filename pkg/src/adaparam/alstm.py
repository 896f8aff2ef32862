"""LSTM and adaptive LSTM cells, policy latent models, stacking, unrolling.

The adaptive cell rescales each gate's linear transformations with
input-conditioned diagonals from a shared latent z,

    u_s = D_s4 . W_s . D_s3 . x  +  D_s2 . V_s . D_s1 . h  +  D_s0 . b_s,

with every diagonal tanh(U_sj z), so all entries lie in (-1, 1). Tying the
input-side scalings D_s3 and D_s1 across the four gates (the default) lets
the gate matmuls run as one fused (4h)-column multiply.

Gate blocks are concatenated in the order i, f, o, z (input, forget,
output, candidate). Weights are stored (fan_in, fan_out) and rows are
batch samples, so code reads x @ W where the equations say W x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .params import Parameter, bias, projection, rng_stream, semi_orthogonal
from .tensor import ShapeError, Tensor

GATES = ("i", "f", "o", "z")


def _gate_weight(rng, fan_in, h, name) -> Parameter:
    blocks = [semi_orthogonal(rng, fan_in, h) for _ in GATES]
    return Parameter(np.concatenate(blocks, axis=1), name, "semi-orthogonal")


class LSTMCell:
    def __init__(self, input_size, hidden_size, rng, name):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.W = _gate_weight(rng, input_size, hidden_size, f"{name}.W")
        self.V = _gate_weight(rng, hidden_size, hidden_size, f"{name}.V")
        self.b = bias(4 * hidden_size, f"{name}.b")

    def params(self) -> list[Parameter]:
        return [self.W, self.V, self.b]


def _state_update(u: Tensor, c: Tensor, hidden: int):
    ui, uf, uo, uz = tt.split(u, [hidden] * 4, axis=-1)
    c2 = tt.sigmoid(uf) * c + tt.sigmoid(ui) * tt.tanh(uz)
    h2 = tt.sigmoid(uo) * tt.tanh(c2)
    return h2, c2


def lstm_step(cell: LSTMCell, x: Tensor, h: Tensor, c: Tensor):
    """One plain LSTM transition; returns (h', c')."""
    if x.shape[-1] != cell.input_size:
        raise ShapeError(f"lstm_step: input extent {x.shape[-1]} != {cell.input_size}")
    u = tt.matmul(x, cell.W) + tt.matmul(h, cell.V) + cell.b
    return _state_update(u, c, cell.hidden_size)


# ---------------------------------------------------------------------------
# latent models for the adaptation policy


@dataclass
class PolicyState:
    """Latent carried across time; (h, c) only for the recurrent model."""

    z: Tensor
    h: Tensor | None = None
    c: Tensor | None = None

    def detach(self) -> "PolicyState":
        return PolicyState(self.z.detach(),
                           None if self.h is None else self.h.detach(),
                           None if self.c is None else self.c.detach())


class StaticLatent:
    """z = relu(W v + b); no memory of its own."""

    kind = "static"

    def __init__(self, v_dim, latent, rng, name):
        self.latent = latent
        blocks = semi_orthogonal(rng, v_dim, latent)
        self.W = Parameter(blocks, f"{name}.W", "semi-orthogonal")
        self.b = bias(latent, f"{name}.b")

    def initial_state(self, lead) -> PolicyState:
        return PolicyState(Tensor(np.zeros(lead + (self.latent,))))

    def step(self, v, state):
        z = tt.relu(tt.matmul(v, self.W) + self.b)
        return z, PolicyState(z)

    def params(self):
        return [self.W, self.b]


class RecurrentLatent:
    """z is the hidden state of a small standard LSTM over the summary input."""

    kind = "recurrent"

    def __init__(self, v_dim, latent, rng, name):
        self.latent = latent
        self.cell = LSTMCell(v_dim, latent, rng, f"{name}.m")

    def initial_state(self, lead) -> PolicyState:
        zero = np.zeros(lead + (self.latent,))
        return PolicyState(Tensor(zero), Tensor(zero.copy()), Tensor(zero.copy()))

    def step(self, v, state):
        h2, c2 = lstm_step(self.cell, v, state.h, state.c)
        return h2, PolicyState(h2, h2, c2)

    def params(self):
        return self.cell.params()


def policy_latent(model, v: Tensor, state: PolicyState):
    """Advance the adaptation policy's latent; returns (z, new state)."""
    return model.step(v, state)


# ---------------------------------------------------------------------------
# adaptive cell


class ALSTMCell:
    """LSTM cell with io-adapted gate transformations.

    ``adaptation`` selects which diagonal blocks exist: ``io`` (all five),
    ``output`` (post-matmul and bias only) or ``input`` (pre-matmul and bias
    only). ``override`` freezes every present diagonal at a constant, which
    at 1.0 reduces the cell to the plain LSTM over the same weights.
    """

    def __init__(self, input_size, hidden_size, v_dim, rng, name, latent=100,
                 adaptation="io", policy="recurrent", tie_inputs=True):
        if adaptation not in ("io", "output", "input"):
            raise ValueError(f"unknown adaptation {adaptation!r}")
        self.lstm = LSTMCell(input_size, hidden_size, rng, name)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.v_dim = v_dim
        self.latent = latent
        self.adaptation = adaptation
        self.tie_inputs = tie_inputs
        self.override: float | None = None
        maker = RecurrentLatent if policy == "recurrent" else StaticLatent
        if policy not in ("recurrent", "static"):
            raise ValueError(f"unknown policy model {policy!r}")
        self.policy = maker(v_dim, latent, rng, f"{name}.policy")

        h4 = 4 * hidden_size
        self.Ub = projection(rng, latent, h4, f"{name}.Ub")  # bias scaling, j = 0
        self.Uo = self.Ur = None
        self.Ux = self.Uh = None
        self.Ux_gates = self.Uh_gates = None
        if adaptation in ("io", "output"):
            self.Uo = projection(rng, latent, h4, f"{name}.Uo")  # j = 4
            self.Ur = projection(rng, latent, h4, f"{name}.Ur")  # j = 2
        if adaptation in ("io", "input"):
            if tie_inputs:
                self.Ux = projection(rng, latent, input_size, f"{name}.Ux")  # j = 3
                self.Uh = projection(rng, latent, hidden_size, f"{name}.Uh")  # j = 1
            else:
                self.Ux_gates = [projection(rng, latent, input_size, f"{name}.Ux.{g}")
                                 for g in GATES]
                self.Uh_gates = [projection(rng, latent, hidden_size, f"{name}.Uh.{g}")
                                 for g in GATES]

    def params(self) -> list[Parameter]:
        ps = self.lstm.params() + self.policy.params() + [self.Ub]
        for u in (self.Uo, self.Ur, self.Ux, self.Uh):
            if u is not None:
                ps.append(u)
        for us in (self.Ux_gates, self.Uh_gates):
            if us is not None:
                ps.extend(us)
        return ps

    def _diag(self, z: Tensor, U: Parameter) -> Tensor:
        if self.override is not None:
            lead = () if z.ndim == 1 else (z.shape[0],)
            return Tensor(np.full(lead + (U.shape[1],), float(self.override)))
        return tt.tanh(tt.matmul(z, U))

    def diagonals(self, z: Tensor) -> dict[str, Tensor | list[Tensor]]:
        """All present adaptation diagonals for a given latent."""
        out: dict[str, Tensor | list[Tensor]] = {"d0": self._diag(z, self.Ub)}
        if self.Uo is not None:
            out["d4"] = self._diag(z, self.Uo)
            out["d2"] = self._diag(z, self.Ur)
        if self.adaptation in ("io", "input"):
            if self.tie_inputs:
                out["d3"] = self._diag(z, self.Ux)
                out["d1"] = self._diag(z, self.Uh)
            else:
                out["d3"] = [self._diag(z, u) for u in self.Ux_gates]
                out["d1"] = [self._diag(z, u) for u in self.Uh_gates]
        return out


def alstm_step(cell: ALSTMCell, x: Tensor, h: Tensor, c: Tensor,
               p_state: PolicyState, v: Tensor | None = None,
               z_mask: Tensor | None = None):
    """One adaptive LSTM transition; returns (h', c', new policy state).

    ``v`` is the policy's summary input, [x; h] for a standalone cell; a
    stack passes its own wiring. ``z_mask`` is the variational dropout mask
    for the latent.
    """
    if v is None:
        v = tt.concat([x, h], axis=-1)
    if v.shape[-1] != cell.v_dim:
        raise ShapeError(f"alstm_step: summary extent {v.shape[-1]} != {cell.v_dim}")
    z, p_next = policy_latent(cell.policy, v, p_state)
    zu = tt.mul(z, z_mask) if z_mask is not None else z
    d = cell.diagonals(zu)
    W, V, b = cell.lstm.W, cell.lstm.V, cell.lstm.b
    nh = cell.hidden_size

    if cell.adaptation in ("io", "input") and not cell.tie_inputs:
        # per-gate input scalings force four separate matmuls
        Wg = tt.split(W, [nh] * 4, axis=1)
        Vg = tt.split(V, [nh] * 4, axis=1)
        ux = tt.concat([tt.matmul(x * d3, w) for d3, w in zip(d["d3"], Wg)], axis=-1)
        uh = tt.concat([tt.matmul(h * d1, v_) for d1, v_ in zip(d["d1"], Vg)], axis=-1)
    else:
        xs = x * d["d3"] if "d3" in d else x
        hs = h * d["d1"] if "d1" in d else h
        ux = tt.matmul(xs, W)
        uh = tt.matmul(hs, V)
    if "d4" in d:
        ux = ux * d["d4"]
        uh = uh * d["d2"]
    u = ux + uh + b * d["d0"]
    h2, c2 = _state_update(u, c, nh)
    return h2, c2, p_next


# ---------------------------------------------------------------------------
# stacks


@dataclass
class LayerState:
    h: Tensor
    c: Tensor
    p: PolicyState | None = None

    def detach(self) -> "LayerState":
        return LayerState(self.h.detach(), self.c.detach(),
                          None if self.p is None else self.p.detach())


def detach_state(states: list[LayerState]) -> list[LayerState]:
    return [s.detach() for s in states]


class LSTMStack:
    """Plain stacked LSTM baseline."""

    def __init__(self, input_size, hidden_size, layers, rng, name="lstm"):
        self.hidden_size = hidden_size
        self.cells = [LSTMCell(input_size if l == 0 else hidden_size, hidden_size,
                               rng, f"{name}.{l}") for l in range(layers)]

    def initial_state(self, lead) -> list[LayerState]:
        zero = np.zeros(lead + (self.hidden_size,))
        return [LayerState(Tensor(zero.copy()), Tensor(zero.copy())) for _ in self.cells]

    def step(self, x, states, masks=None):
        new_states = []
        h_below = x
        for l, cell in enumerate(self.cells):
            h2, c2 = lstm_step(cell, h_below, states[l].h, states[l].c)
            new_states.append(LayerState(h2, c2))
            h_below = h2
            if masks is not None and masks.hiddens is not None and l < len(self.cells) - 1:
                h_below = h_below * masks.hiddens[l]
        return h_below, new_states

    def params(self):
        return [p for cell in self.cells for p in cell.params()]


class ALSTMStack:
    """Stacked adaptive LSTM.

    With ``chained`` wiring each layer's summary input is
    [h_below_t ; h_own_{t-1} ; z_below_t], where layer 1 receives the top
    layer's previous latent, so the policy's credit path covers the whole
    unrolled graph. ``plain`` wiring drops the latent component.
    """

    def __init__(self, input_size, hidden_size, layers, rng, name="alstm",
                 latent=100, adaptation="io", policy="recurrent",
                 tie_inputs=True, wiring="chained"):
        if wiring not in ("chained", "plain"):
            raise ValueError(f"unknown wiring {wiring!r}")
        self.hidden_size = hidden_size
        self.latent = latent
        self.chained = wiring == "chained"
        self.cells = []
        for l in range(layers):
            in_l = input_size if l == 0 else hidden_size
            v_dim = in_l + hidden_size + (latent if self.chained else 0)
            self.cells.append(ALSTMCell(in_l, hidden_size, v_dim, rng, f"{name}.{l}",
                                        latent=latent, adaptation=adaptation,
                                        policy=policy, tie_inputs=tie_inputs))

    def initial_state(self, lead) -> list[LayerState]:
        zero = np.zeros(lead + (self.hidden_size,))
        return [LayerState(Tensor(zero.copy()), Tensor(zero.copy()),
                           cell.policy.initial_state(lead)) for cell in self.cells]

    def step(self, x, states, masks=None):
        new_states = []
        h_below = x
        z_below = states[-1].p.z if self.chained else None
        for l, cell in enumerate(self.cells):
            st = states[l]
            parts = [h_below, st.h] + ([z_below] if self.chained else [])
            v = tt.concat(parts, axis=-1)
            z_mask = None
            if masks is not None and masks.latents is not None:
                z_mask = masks.latents[l]
            h2, c2, p2 = alstm_step(cell, h_below, st.h, st.c, st.p, v=v, z_mask=z_mask)
            new_states.append(LayerState(h2, c2, p2))
            h_below = h2
            if masks is not None and masks.hiddens is not None and l < len(self.cells) - 1:
                h_below = h_below * masks.hiddens[l]
            if self.chained:
                z_below = p2.z
        return h_below, new_states

    def params(self):
        return [p for cell in self.cells for p in cell.params()]

    def set_override(self, value: float | None):
        for cell in self.cells:
            cell.override = value


def stack_step(stack, x: Tensor, states: list[LayerState], masks=None):
    """Advance a stack one step; returns (top hidden, new states)."""
    return stack.step(x, states, masks)


def unroll(core, steps, targets, states, masks=None, loss_kind="xent", readout=None):
    """Drive ``core`` over one truncation window and sum per-step losses.

    ``steps`` is the per-step input sequence (each (batch, in)); ``targets``
    is (batch, T) with integer classes for ``xent`` or real values for
    ``mse``. Incoming ``states`` are detached, so gradients stop at the
    window boundary. Returns (summed loss, token count, final states).
    """
    if len(steps) == 0:
        raise ValueError("unroll: empty sequence")
    if steps[0].ndim != 2:
        raise ShapeError("unroll: step inputs must be (batch, features)")
    states = detach_state(states)
    tgt = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    outs = []
    for x_t in steps:
        h_top, states = core.step(x_t, states, masks)
        if masks is not None and masks.output is not None:
            h_top = h_top * masks.output
        outs.append(h_top)
    H = tt.concat(outs, axis=0)  # time-major: row t*B + b
    if readout is not None:
        H = readout(H)
    batch = steps[0].shape[0]
    ntok = batch * len(steps)
    flat = tgt.T.reshape(-1) if tgt.ndim == 2 else tgt.reshape(-1)
    if loss_kind == "xent":
        loss = tt.softmax_xent(H, flat.astype(np.int64), reduction="sum")
    elif loss_kind == "mse":
        if H.shape[-1] != 1:
            raise ShapeError("mse unroll expects a single readout column")
        err = H - Tensor(flat[:, None])
        loss = tt.tsum(tt.mul(err, err)) * (1.0 / batch)  # sum over steps of batch-mean
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    return loss, ntok, states
