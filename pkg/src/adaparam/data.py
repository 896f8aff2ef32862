"""Datasets: synthetic regression, IDX image files, text corpora, BPTT batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .params import rng_stream


# ---------------------------------------------------------------------------
# extreme-tail regression


def gen_extreme_tail(n: int, seed: int):
    """Draw x ~ N(0, I_2) and y = (2 x1)^2 - (3 x2)^4 + eps, eps ~ N(0, 1).

    Returns (x, y, eps); the noise is returned so targets are regenerable.
    """
    if n <= 0:
        raise ValueError("need n > 0 samples")
    rng = rng_stream(seed, "extreme-tail")
    x = rng.standard_normal((n, 2))
    eps = rng.standard_normal(n)
    y = (2.0 * x[:, 0]) ** 2 - (3.0 * x[:, 1]) ** 4 + eps
    return x, y, eps


# ---------------------------------------------------------------------------
# IDX image files

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _read_be32(blob: bytes, off: int) -> int:
    if off + 4 > len(blob):
        raise IdxFormatError("truncated IDX header")
    return struct.unpack_from(">i", blob, off)[0]


def load_mnist_idx(images_path, labels_path):
    """Parse big-endian IDX image/label files.

    Returns (images, labels): images flattened to float64 rows scaled to
    [0, 1], labels as int64.
    """
    with open(images_path, "rb") as fh:
        blob = fh.read()
    magic = _read_be32(blob, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"bad image magic: expected {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}")
    count, rows, cols = (_read_be32(blob, o) for o in (4, 8, 12))
    need = 16 + count * rows * cols
    if len(blob) < need:
        raise IdxFormatError(f"truncated image payload: {len(blob)} bytes, need {need}")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as fh:
        blob = fh.read()
    magic = _read_be32(blob, 0)
    if magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"bad label magic: expected {IDX_LABEL_MAGIC:#010x}, got {magic:#010x}")
    n_labels = _read_be32(blob, 4)
    if n_labels != count:
        raise IdxFormatError(f"image/label count mismatch: {count} images, {n_labels} labels")
    if len(blob) < 8 + n_labels:
        raise IdxFormatError("truncated label payload")
    labels = np.frombuffer(blob, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    return images, labels


def write_idx_images(path, images: np.ndarray, rows: int, cols: int) -> None:
    """Inverse of the loader, for fixtures and round-trip checks.

    ``images`` is (n, rows*cols) with values in [0, 1].
    """
    n = images.shape[0]
    data = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(data.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# vocabulary and tokenization

UNK = "<unk>"
EOS = "<eos>"


class Vocabulary:
    """Bijective token <-> index map with <unk> and <eos> specials."""

    def __init__(self, id2tok: list[str]):
        self.id2tok = list(id2tok)
        self.tok2id = {t: i for i, t in enumerate(self.id2tok)}
        if len(self.tok2id) != len(self.id2tok):
            raise ValueError("duplicate tokens in vocabulary")
        self.unk = self.tok2id[UNK]
        self.eos = self.tok2id[EOS]

    @classmethod
    def build(cls, tokens, max_size: int | None = None) -> "Vocabulary":
        counts: dict[str, int] = {}
        for t in tokens:
            if t not in (UNK, EOS):
                counts[t] = counts.get(t, 0) + 1
        # frequency-major, then lexicographic: stable for a given input
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - 2)]
        return cls([UNK, EOS] + ordered)

    def __len__(self) -> int:
        return len(self.id2tok)

    def encode(self, tokens) -> np.ndarray:
        get = self.tok2id.get
        return np.fromiter((get(t, self.unk) for t in tokens), dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.id2tok[i] for i in ids]


def tokenize(text: str, mode: str = "word") -> list[str]:
    """word: whitespace tokens with <eos> appended per line; char: characters."""
    if not text:
        raise ValueError("empty text")
    if mode == "word":
        out: list[str] = []
        for line in text.splitlines():
            out.extend(line.split())
            out.append(EOS)
        return out
    if mode == "char":
        return list(text)
    raise ValueError(f"unknown tokenize mode {mode!r}")


def tokenize_and_index(text: str, mode: str = "word",
                       vocab: Vocabulary | None = None,
                       max_size: int | None = None):
    """Tokenize and map to indices; builds the vocabulary unless given one."""
    tokens = tokenize(text, mode)
    if vocab is None:
        vocab = Vocabulary.build(tokens, max_size=max_size)
    return vocab, vocab.encode(tokens)


# ---------------------------------------------------------------------------
# BPTT batching


@dataclass
class BPTTWindow:
    inputs: np.ndarray   # (batch, len) int64
    targets: np.ndarray  # (batch, len) int64, inputs shifted by one
    carry: bool          # whether hidden state carries in from the last window

    @property
    def length(self) -> int:
        return self.inputs.shape[1]


def batch_bptt(corpus: np.ndarray, batch_size: int, mean_len: int, seed: int,
               p_full: float = 0.95, sigma: float = 5.0, min_len: int = 5):
    """Tile a corpus into variable-length truncation windows.

    The corpus is reshaped into ``batch_size`` contiguous streams. Window
    length is drawn once per window: the base is ``mean_len`` with
    probability ``p_full`` and ``mean_len / 2`` otherwise, jittered by
    N(0, sigma), floored at ``min_len`` and capped at ``mean_len + 20``.
    Windows tile each stream without overlap; the final partial window is
    dropped.
    """
    corpus = np.asarray(corpus, dtype=np.int64)
    if corpus.ndim != 1:
        raise ValueError("corpus must be a flat index sequence")
    if len(corpus) < batch_size * (mean_len + 1):
        raise ValueError(
            f"corpus too small: {len(corpus)} tokens < batch {batch_size} x (len {mean_len} + 1)")
    stream_len = len(corpus) // batch_size
    streams = corpus[: batch_size * stream_len].reshape(batch_size, stream_len)
    rng = rng_stream(seed, "bptt")
    windows: list[BPTTWindow] = []
    pos = 0
    while pos + min_len + 1 <= stream_len:
        base = mean_len if rng.random() < p_full else mean_len / 2.0
        length = int(max(min_len, round(rng.normal(base, sigma))))
        length = min(length, mean_len + 20, stream_len - pos - 1)
        windows.append(BPTTWindow(streams[:, pos:pos + length].copy(),
                                  streams[:, pos + 1:pos + length + 1].copy(),
                                  carry=pos > 0))
        pos += length
    return windows


# ---------------------------------------------------------------------------
# synthetic corpus
#
# A small probabilistic grammar over ~470 word types: paragraphs keep one
# topic (long-range signal), subjects agree in number with their verb even
# across a relative clause (mid-range signal), and content words are drawn
# from topic-specific pools (local signal). Enough structure that extra
# model capacity keeps paying off, which is what the language-model
# comparisons need.

_DETS_SG = ["the", "a", "each", "this", "no"]
_DETS_PL = ["the", "some", "these", "many", "no"]
_PREPS = ["of", "in", "under", "near", "against", "with", "from", "beyond"]
_ADVS = ["quickly", "slowly", "rarely", "often", "barely", "suddenly", "quietly",
         "steadily", "sharply", "finally", "nearly", "openly", "again", "alone"]
_CONJS = ["and", "but", "while", "because", "although"]
_NUMBERS = ["two", "three", "four", "five", "seven", "nine", "eleven", "twenty",
            "forty", "sixty"]

_NOUN_STEMS = [
    "report", "market", "engine", "signal", "farmer", "valley", "border", "vessel",
    "record", "policy", "studio", "singer", "planet", "module", "sensor", "glacier",
    "harbor", "bridge", "cable", "miner", "editor", "critic", "garden", "forest",
    "school", "broker", "tunnel", "rocket", "antenna", "archive", "ballot", "barrel",
    "basket", "beacon", "bearing", "canal", "carrier", "cellar", "channel", "charter",
    "circuit", "citizen", "college", "colony", "column", "compass", "contract",
    "council", "courier", "current", "dancer", "dealer", "desert", "diagram",
    "doctor", "drawing", "driver", "element", "emblem", "empire", "estate", "exhibit",
    "factory", "fossil", "founder", "furnace", "gallery", "general", "grower",
    "hunter", "island", "journal", "keeper", "kernel", "ladder", "lantern", "lawyer",
    "league", "lecture", "ledger", "lighter", "magnet", "mansion", "marker",
    "meadow", "member", "mentor", "merchant", "meteor", "monitor", "motor",
    "needle", "network", "officer", "orchard", "outpost", "packet", "painter",
    "patron", "pillar", "pilot", "pioneer", "porter", "printer", "prism", "ranger",
    "reactor", "reader", "refinery", "region", "register", "sailor", "scholar",
    "sculptor", "server", "shelter", "smelter", "soldier", "spindle", "station",
    "steamer", "surgeon", "tanker", "teacher", "temple", "trader", "turbine",
    "vendor", "village", "warden", "weaver", "worker",
]
_VERB_STEMS = [
    "rise", "fall", "move", "turn", "hold", "carry", "reach", "settle", "expand",
    "shrink", "signal", "report", "gather", "scatter", "drift", "anchor", "climb",
    "slide", "recover", "falter", "advance", "retreat", "flicker", "steady",
    "sharpen", "soften", "brighten", "darken", "open", "close", "widen", "narrow",
    "quicken", "slow", "surge", "stall", "bend", "stretch", "spin", "halt",
    "resume", "linger", "vanish", "appear", "deepen", "thin", "swell", "drain",
    "harden", "loosen", "tighten", "waver", "persist", "erode", "flourish",
    "wither", "accelerate", "decelerate", "converge", "diverge",
]
_ADJS = [
    "red", "cold", "rapid", "narrow", "silent", "heavy", "bright", "ancient",
    "steady", "fragile", "distant", "hollow", "dense", "sharp", "smooth", "rough",
    "pale", "vivid", "stubborn", "gentle", "massive", "minor", "crooked", "level",
    "spare", "busy", "idle", "raw", "ripe", "stale",
]
_NAMES = [
    "alder", "barnes", "calder", "devon", "ellery", "farrow", "garner", "hollis",
    "inman", "jarvis", "keating", "lander", "mercer", "norwood", "osgood", "porter",
    "quimby", "ransom", "sutton", "tilden", "upton", "vance", "whitman", "yandell",
]

_N_TOPICS = 12


def _plural_noun(stem: str) -> str:
    return stem + "es" if stem.endswith(("s", "x", "ch", "sh")) else stem + "s"


def _sg_verb(stem: str) -> str:
    if stem.endswith("y") and stem[-2] not in "aeiou":
        return stem[:-1] + "ies"
    if stem.endswith(("s", "x", "ch", "sh", "o")):
        return stem + "es"
    return stem + "s"


class _Grammar:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.topics = []
        for t in range(_N_TOPICS):
            nouns = rng.choice(len(_NOUN_STEMS), size=22, replace=False)
            verbs = rng.choice(len(_VERB_STEMS), size=14, replace=False)
            adjs = rng.choice(len(_ADJS), size=8, replace=False)
            self.topics.append((nouns, verbs, adjs))

    def _choice(self, seq):
        return seq[self.rng.integers(len(seq))]

    def noun_phrase(self, topic, plural, depth=0):
        nouns, _, adjs = self.topics[topic]
        words = [self._choice(_DETS_PL if plural else _DETS_SG)]
        if self.rng.random() < 0.45:
            words.append(_ADJS[self._choice(adjs)])
        stem = _NOUN_STEMS[self._choice(nouns)]
        words.append(_plural_noun(stem) if plural else stem)
        if depth < 2 and self.rng.random() < 0.22:
            # relative clause, number agreement spans the gap
            words.append("that")
            words.extend(self.verb_phrase(topic, plural, depth + 1))
        return words

    def verb_phrase(self, topic, plural, depth=0):
        _, verbs, _ = self.topics[topic]
        stem = _VERB_STEMS[self._choice(verbs)]
        words = [stem if plural else _sg_verb(stem)]
        r = self.rng.random()
        if r < 0.3:
            words.append(self._choice(_ADVS))
        elif r < 0.55:
            words.append(self._choice(_PREPS))
            words.extend(self.noun_phrase(topic, self.rng.random() < 0.4, depth + 1))
        elif r < 0.7:
            words.extend(["by", self._choice(_NUMBERS), "points"])
        return words

    def sentence(self, topic):
        if self.rng.random() < 0.12:
            quoted = self.sentence(topic)[:-1]
            return [self._choice(_NAMES), "said", "that"] + quoted + ["."]
        plural = self.rng.random() < 0.45
        words = self.noun_phrase(topic, plural) + self.verb_phrase(topic, plural)
        if self.rng.random() < 0.18:
            words.append(",")
            words.append(self._choice(_CONJS))
            plural2 = self.rng.random() < 0.45
            words += self.noun_phrase(topic, plural2) + self.verb_phrase(topic, plural2)
        words.append(".")
        return words


def synthetic_corpus(n_tokens: int, seed: int) -> str:
    """Deterministic synthetic text, one sentence per line, about
    ``n_tokens`` whitespace tokens."""
    rng = rng_stream(seed, "corpus")
    grammar = _Grammar(rng)
    lines: list[str] = []
    total = 0
    while total < n_tokens:
        topic = int(rng.integers(_N_TOPICS))
        for _ in range(int(rng.integers(3, 9))):  # one paragraph, one topic
            words = grammar.sentence(topic)
            lines.append(" ".join(words))
            total += len(words)
            if total >= n_tokens:
                break
    return "\n".join(lines) + "\n"


def split_corpus(text: str, train_frac: float = 0.9, valid_frac: float = 0.05):
    """Split by whole lines into train/valid/test pieces."""
    lines = text.splitlines()
    n = len(lines)
    a = int(n * train_frac)
    b = int(n * (train_frac + valid_frac))
    return ("\n".join(lines[:a]) + "\n", "\n".join(lines[a:b]) + "\n",
            "\n".join(lines[b:]) + "\n")
