"""Training loops, evaluation, metrics recording, divergence detection."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import batch_bptt
from .dropout import sample_masks
from .optim import clip_global_norm
from .params import rng_stream
from .tensor import Tape, Tensor, backward, mse, softmax_xent

METRICS_HEADER = "epoch,step,split,loss,ppl,lr,seconds"


class DivergenceError(RuntimeError):
    pass


@dataclass
class MetricRow:
    epoch: int
    step: int
    split: str
    loss: float
    ppl: float | None
    lr: float
    seconds: float

    def to_csv(self) -> str:
        ppl = "" if self.ppl is None else f"{self.ppl:.17g}"
        return (f"{self.epoch},{self.step},{self.split},{self.loss:.17g},"
                f"{ppl},{self.lr:.17g},{self.seconds:.3f}")


class MetricsHistory:
    def __init__(self):
        self.rows: list[MetricRow] = []

    def add(self, **kw) -> None:
        self.rows.append(MetricRow(**kw))

    def extend_prefixed(self, other: "MetricsHistory", prefix: str) -> None:
        for row in other.rows:
            self.rows.append(replace(row, split=f"{prefix}/{row.split}"))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(METRICS_HEADER + "\n")
            for row in self.rows:
                fh.write(row.to_csv() + "\n")

    def last(self, split: str) -> MetricRow:
        for row in reversed(self.rows):
            if row.split == split:
                return row
        raise KeyError(split)

    def to_dict(self) -> list[dict]:
        return [vars(r).copy() for r in self.rows]


class _Clock:
    """Elapsed seconds, or a constant 0.0 when outputs must be reproducible."""

    def __init__(self, deterministic: bool):
        self.deterministic = deterministic
        self.start = time.monotonic()

    def read(self) -> float:
        return 0.0 if self.deterministic else time.monotonic() - self.start


# ---------------------------------------------------------------------------
# language modeling


def evaluate_lm(model, ids: np.ndarray, batch: int, bptt: int):
    """Mean per-token cross entropy and perplexity, dropout disabled."""
    windows = batch_bptt(ids, batch, bptt, seed=0, p_full=1.0, sigma=0.0)
    states = model.initial_state(batch)
    total, count = 0.0, 0
    for w in windows:
        loss, ntok, states = model.window_loss(w.inputs, w.targets, states, masks=None)
        total += float(loss.data)
        count += ntok
    mean = total / count
    return mean, math.exp(min(mean, 700.0))


def train_lm(model, train_ids, valid_ids, *, epochs, batch, bptt, optimizer,
             schedule=None, plan=None, seed=0, clip=0.0,
             deterministic_timing=True, divergence_after=10):
    """Epoch loop with truncated BPTT, variational dropout, and divergence
    detection (non-finite loss, or validation perplexity worse than twice
    its starting value once ``divergence_after`` epochs have passed).

    Returns (history, final validation perplexity).
    """
    params = model.params()
    core = model.core
    latent = getattr(core, "latent", None)
    layers = len(core.cells)
    clock = _Clock(deterministic_timing)
    history = MetricsHistory()
    step = 0

    _, ppl0 = evaluate_lm(model, valid_ids, batch, bptt)
    history.add(epoch=0, step=0, split="valid", loss=math.log(ppl0), ppl=ppl0,
                lr=0.0, seconds=clock.read())

    val_ppl = ppl0
    for epoch in range(1, epochs + 1):
        lr = schedule.rate(epoch - 1) if schedule is not None else optimizer.lr
        windows = batch_bptt(train_ids, batch, bptt, seed=seed * 100003 + epoch)
        mask_rng = rng_stream(seed * 100003 + epoch, "masks")
        states = model.initial_state(batch)
        total, count = 0.0, 0
        for w in windows:
            masks = None
            if plan is not None and any(r > 0 for r in plan.rates().values()):
                masks = sample_masks(plan, mask_rng, batch, vocab=model.vocab_size,
                                     embed=model.embed, latent=latent,
                                     hidden=core.hidden_size, layers=layers)
            with Tape() as tape:
                loss, ntok, states = model.window_loss(w.inputs, w.targets, states, masks)
                mean_loss = loss * (1.0 / ntok)
            if not np.isfinite(mean_loss.data):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, step {step}")
            grads = backward(tape, mean_loss, params=params)
            if clip:
                grads, _ = clip_global_norm(grads, clip)
            optimizer.step(grads, lr=lr)
            total += float(loss.data)
            count += ntok
            step += 1
        train_mean = total / count
        history.add(epoch=epoch, step=step, split="train", loss=train_mean,
                    ppl=math.exp(min(train_mean, 700.0)), lr=lr, seconds=clock.read())
        val_mean, val_ppl = evaluate_lm(model, valid_ids, batch, bptt)
        history.add(epoch=epoch, step=step, split="valid", loss=val_mean,
                    ppl=val_ppl, lr=lr, seconds=clock.read())
        if epoch >= divergence_after and val_ppl > 2.0 * ppl0:
            raise DivergenceError(
                f"validation perplexity {val_ppl:.2f} exceeds twice its initial "
                f"value {ppl0:.2f} after {epoch} epochs")
    return history, val_ppl


# ---------------------------------------------------------------------------
# supervised (regression / classification)


def evaluate_supervised(model, X, y, loss_kind: str, batch: int = 2048):
    """Mean loss (and accuracy for classification) without building graphs."""
    total, correct = 0.0, 0
    n = X.shape[0]
    for lo in range(0, n, batch):
        xb = Tensor(X[lo:lo + batch])
        out = model(xb)
        if loss_kind == "xent":
            yb = y[lo:lo + batch]
            total += float(softmax_xent(out, yb, reduction="sum").data)
            correct += int((out.data.argmax(axis=1) == yb).sum())
        else:
            yb = y[lo:lo + batch]
            total += float(((out.data[:, 0] - yb) ** 2).sum())
    scores = {"loss": total / n}
    if loss_kind == "xent":
        scores["accuracy"] = correct / n
    return scores


def train_supervised(model, X, y, *, loss_kind, optimizer, steps, batch, seed=0,
                     eval_sets=None, eval_every=None, clip=0.0,
                     deterministic_timing=True):
    """Minibatch SGD-style loop over a fixed array dataset.

    Batches are drawn with replacement from a seeded stream. Records one
    train row per ``eval_every`` steps (default: five records per run) plus
    one row per eval split. Returns (history, final scores per split).
    """
    params = model.params()
    rng = rng_stream(seed, "batches")
    eval_every = eval_every or max(1, steps // 5)
    clock = _Clock(deterministic_timing)
    history = MetricsHistory()
    running, seen = 0.0, 0
    for step in range(1, steps + 1):
        idx = rng.integers(0, X.shape[0], size=batch)
        with Tape() as tape:
            out = model(Tensor(X[idx]))
            if loss_kind == "xent":
                loss = softmax_xent(out, y[idx], reduction="mean")
            elif loss_kind == "mse":
                loss = mse(out, Tensor(y[idx][:, None]))
            else:
                raise ValueError(f"unknown loss {loss_kind!r}")
        if not np.isfinite(loss.data):
            raise DivergenceError(f"non-finite training loss at step {step}")
        grads = backward(tape, loss, params=params)
        if clip:
            grads, _ = clip_global_norm(grads, clip)
        optimizer.step(grads)
        running += float(loss.data)
        seen += 1
        if step % eval_every == 0 or step == steps:
            history.add(epoch=0, step=step, split="train", loss=running / seen,
                        ppl=None, lr=optimizer.lr, seconds=clock.read())
            running, seen = 0.0, 0
            for split, (Xe, ye) in (eval_sets or {}).items():
                scores = evaluate_supervised(model, Xe, ye, loss_kind)
                history.add(epoch=0, step=step, split=split, loss=scores["loss"],
                            ppl=None, lr=optimizer.lr, seconds=clock.read())
    finals = {split: evaluate_supervised(model, Xe, ye, loss_kind)
              for split, (Xe, ye) in (eval_sets or {}).items()}
    return history, finals
