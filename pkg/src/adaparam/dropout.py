"""Variational dropout: masks sampled once per truncation window.

Five sites, matching the training recipe: whole-word rows of the embedding
table, embedded input features, the policy latent, hidden states between
stacked layers, and the final recurrent output. A mask is 0 or 1/(1-p)
per element (inverted dropout) and is reused at every time step of its
window; evaluation applies no masks at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class DropoutPlan:
    word: float = 0.16
    embedding: float = 0.6
    latent: float = 0.1
    hidden: float = 0.25
    output: float = 0.6

    def __post_init__(self):
        for site, rate in self.rates().items():
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate for {site} must be in [0, 1), got {rate}")

    def rates(self) -> dict[str, float]:
        return {"word": self.word, "embedding": self.embedding, "latent": self.latent,
                "hidden": self.hidden, "output": self.output}

    def replace(self, **kw) -> "DropoutPlan":
        d = self.rates()
        d.update(kw)
        return DropoutPlan(**d)


def mask_array(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


@dataclass
class WindowMasks:
    """Constant mask tensors for one window; ``None`` means identity."""

    word: Tensor | None = None        # (vocab, 1), drops whole embedding rows
    embedding: Tensor | None = None   # (batch, embed)
    latents: list[Tensor] | None = None   # per layer, (batch, latent)
    hiddens: list[Tensor] | None = None   # per layer boundary, (batch, hidden)
    output: Tensor | None = None      # (batch, hidden)


def sample_masks(plan: DropoutPlan, rng: np.random.Generator, batch: int,
                 vocab: int | None = None, embed: int | None = None,
                 latent: int | None = None, hidden: int | None = None,
                 layers: int = 1) -> WindowMasks:
    """Draw one window's masks. Sites with rate 0 or without a extent stay
    identity (``None``); draw order is fixed so seeds reproduce exactly."""

    def draw(shape, p):
        if p == 0.0 or shape is None:
            return None
        return Tensor(mask_array(rng, shape, p))

    word = draw((vocab, 1) if vocab else None, plan.word)
    emb = draw((batch, embed) if embed else None, plan.embedding)
    lat = None
    if latent and plan.latent > 0:
        lat = [Tensor(mask_array(rng, (batch, latent), plan.latent)) for _ in range(layers)]
    hid = None
    if hidden and plan.hidden > 0 and layers > 1:
        hid = [Tensor(mask_array(rng, (batch, hidden), plan.hidden))
               for _ in range(layers - 1)]
    out = draw((batch, hidden) if hidden else None, plan.output)
    return WindowMasks(word, emb, lat, hid, out)
