"""Model assemblies for the experiments, plus parameter-count matching."""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .adaptive import AdaptiveLinear, StaticLinear
from .alstm import ALSTMStack, LSTMStack, unroll
from .params import Parameter, bias, rng_stream, uniform_fanin, weight
from .tensor import Tensor, matmul, transpose


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


def count_params(model) -> int:
    return sum(p.size for p in model.params())


# ---------------------------------------------------------------------------
# feed-forward experiment models


def _mirror_column(n: int) -> np.ndarray:
    # unit-norm readout with alternating signs: a difference-of-units head
    # cannot start with every path pushing the same way, which is what
    # locks small relu layers into dead or constant solutions
    v = np.ones((n, 1)) / np.sqrt(n)
    v[1::2] *= -1.0
    return v


def build_tail_model(variant: str, seed: int, latent: int = 16, target_mean: float = 0.0):
    """Models for the extreme-tail regression comparison.

    ``sva-adaptive``: two hidden units, adaptive first layer (sva of rank 8
    with a glu policy, relu), static readout. ``static-baseline``: three
    relu layers of ten units. Both readouts start as mirror columns with
    the bias at the training-target mean.
    """
    rng = rng_stream(seed, f"tail.{variant}")
    if variant == "sva-adaptive":
        layer = AdaptiveLinear.sva(2, 2, 8, rng, "adapt", latent=latent,
                                   policy_net="glu", activation="relu")
        head = StaticLinear(2, 1, rng, "head")
        head.W.data = _mirror_column(2)
        head.b.data[:] = target_mean
        return Sequential([layer, head])
    if variant == "static-baseline":
        l0 = StaticLinear(2, 10, rng, "l0", activation="relu")
        l1 = StaticLinear(10, 10, rng, "l1", activation="relu")
        head = StaticLinear(10, 1, rng, "l2")
        head.W.data = _mirror_column(10)
        head.b.data[:] = target_mean
        return Sequential([l0, l1, head])
    raise ValueError(f"unknown tail variant {variant!r}")


def build_mnist_model(variant: str, seed: int, in_dim: int = 784, classes: int = 10):
    """The ~8K-parameter pair (adaptive vs logistic) and larger references."""
    rng = rng_stream(seed, f"mnist.{variant}")
    if variant == "logistic":
        return Sequential([StaticLinear(in_dim, classes, rng, "logit")])
    if variant == "sva-8k":
        rank = max(2, round(in_dim * classes / (in_dim + classes + 74)))
        return Sequential([
            AdaptiveLinear.sva(in_dim, classes, rank, rng, "sva", latent=16,
                               policy_net="glu", policy_input="projected"),
        ])
    if variant == "ff-100k":
        h = 110
        return Sequential([
            StaticLinear(in_dim, h, rng, "l0", activation="relu"),
            StaticLinear(h, h, rng, "l1", activation="relu"),
            StaticLinear(h, classes, rng, "l2"),
        ])
    if variant == "sva-100k":
        return Sequential([
            AdaptiveLinear.sva(in_dim, classes, 100, rng, "sva", latent=64,
                               policy_net="glu", policy_input="projected"),
        ])
    raise ValueError(f"unknown mnist variant {variant!r}")


# ---------------------------------------------------------------------------
# language models


class LanguageModel:
    """Embedding, recurrent core, and softmax decoder over one vocabulary."""

    def __init__(self, vocab_size, embed, core, seed, name="lm", tie_embedding=False):
        rng = rng_stream(seed, f"{name}.emb")
        self.vocab_size = vocab_size
        self.embed = embed
        self.core = core
        self.tie_embedding = tie_embedding
        self.emb = Parameter(uniform_fanin(rng, embed, (vocab_size, embed)),
                             f"{name}.emb", "uniform-fanin")
        if tie_embedding:
            if embed != core.hidden_size:
                raise ValueError("tied embeddings need embed == hidden size")
            self.dec_W = None
        else:
            self.dec_W = weight(rng_stream(seed, f"{name}.dec"), core.hidden_size,
                                vocab_size, f"{name}.dec.W")
        self.dec_b = bias(vocab_size, f"{name}.dec.b")

    def initial_state(self, batch: int):
        return self.core.initial_state((batch,))

    def _readout(self):
        W = transpose(self.emb) if self.tie_embedding else self.dec_W
        return lambda H: matmul(H, W) + self.dec_b

    def window_loss(self, inputs: np.ndarray, targets: np.ndarray, states, masks=None):
        """Summed cross entropy over one window; returns (loss, tokens, states)."""
        table = self.emb if masks is None or masks.word is None else self.emb * masks.word
        steps = []
        for t in range(inputs.shape[1]):
            x = tt.embedding(table, inputs[:, t])
            if masks is not None and masks.embedding is not None:
                x = x * masks.embedding
            steps.append(x)
        return unroll(self.core, steps, targets, states, masks=masks,
                      readout=self._readout())

    def params(self):
        ps = [self.emb] + self.core.params() + [self.dec_b]
        if self.dec_W is not None:
            ps.append(self.dec_W)
        return ps


def parse_lm_variant(variant: str) -> dict:
    """Map a variant name to core settings.

    ``lstm`` is the baseline; adaptive names are ``alstm-<adaptation>``
    or ``alstm-<adaptation>-<model>`` with adaptation in {io, output,
    input} and adaptation model in {ff, lstm, rhn} (static policy, plain
    recurrent policy, chained recurrent policy). The default model is rhn.
    """
    if variant == "lstm":
        return {"arch": "lstm"}
    parts = variant.split("-")
    if parts[0] != "alstm" or len(parts) not in (2, 3):
        raise ValueError(f"unknown model variant {variant!r}")
    adaptation = parts[1]
    if adaptation not in ("io", "output", "input"):
        raise ValueError(f"unknown adaptation {adaptation!r} in {variant!r}")
    model = parts[2] if len(parts) == 3 else "rhn"
    table = {"ff": ("static", "plain"), "lstm": ("recurrent", "plain"),
             "rhn": ("recurrent", "chained")}
    if model not in table:
        raise ValueError(f"unknown adaptation model {model!r} in {variant!r}")
    policy, wiring = table[model]
    return {"arch": "alstm", "adaptation": adaptation, "policy": policy,
            "wiring": wiring}


def build_lm_model(variant: str, vocab_size: int, seed: int, *, embed, hidden,
                   latent=100, layers=2, tie_inputs=True, tie_embedding=False):
    spec = parse_lm_variant(variant)
    rng = rng_stream(seed, f"lm.{variant}")
    if spec["arch"] == "lstm":
        core = LSTMStack(embed, hidden, layers, rng, "lstm")
    else:
        core = ALSTMStack(embed, hidden, layers, rng, "alstm", latent=latent,
                          adaptation=spec["adaptation"], policy=spec["policy"],
                          tie_inputs=tie_inputs, wiring=spec["wiring"])
    return LanguageModel(vocab_size, embed, core, seed, name=f"lm.{variant}",
                         tie_embedding=tie_embedding)


class MatchError(ValueError):
    def __init__(self, target, closest, count):
        super().__init__(
            f"cannot match {target} parameters within 2%; closest hidden size "
            f"{closest} gives {count}")
        self.closest = closest
        self.count = count


def match_hidden_size(build, target: int, tol: float = 0.02, lo: int = 2, hi: int = 4096):
    """Find the hidden size whose parameter count is nearest ``target``.

    ``build`` maps a hidden size to a model; the count must be
    non-decreasing in the hidden size. Returns (model, hidden, count) or
    raises :class:`MatchError` reporting the closest achievable count.
    """
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count_params(build(mid)) <= target:
            lo = mid
        else:
            hi = mid
    candidates = []
    for h in (lo, hi):
        m = build(h)
        candidates.append((abs(count_params(m) - target), h, m))
    gap, h, model = min(candidates, key=lambda c: (c[0], c[1]))
    count = count_params(model)
    if gap > tol * target:
        raise MatchError(target, h, count)
    return model, h, count
