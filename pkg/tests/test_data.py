import numpy as np
import pytest

from adaparam.data import (
    EOS,
    IdxFormatError,
    Vocabulary,
    batch_bptt,
    gen_extreme_tail,
    load_mnist_idx,
    split_corpus,
    synthetic_corpus,
    tokenize,
    tokenize_and_index,
    write_idx_images,
    write_idx_labels,
)


# ---------------------------------------------------------------------------
# extreme-tail regression


def test_tail_formula_hand_values():
    # y = (2 x1)^2 - (3 x2)^4 + eps
    x, y, eps = gen_extreme_tail(100, seed=0)
    recon = (2 * x[:, 0]) ** 2 - (3 * x[:, 1]) ** 4 + eps
    assert np.allclose(y, recon, atol=1e-12)
    # the stated point cases
    assert (2 * 1) ** 2 - (3 * 1) ** 4 == -77
    assert (2 * 0) ** 2 - (3 * 0) ** 4 == 0


def test_tail_is_seed_deterministic():
    a = gen_extreme_tail(50, seed=3)
    b = gen_extreme_tail(50, seed=3)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)
    c = gen_extreme_tail(50, seed=4)
    assert not np.array_equal(a[0], c[0])


def test_tail_sample_mean_is_centered():
    x, _, _ = gen_extreme_tail(100_000, seed=5)
    sigma = 1.0 / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0)) < 3 * sigma)


def test_tail_rejects_bad_n():
    with pytest.raises(ValueError):
        gen_extreme_tail(0, seed=0)


# ---------------------------------------------------------------------------
# IDX files


def _write_pair(tmp_path, n=20, rows=4, cols=3, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((n, rows * cols))
    labels = rng.integers(0, 10, size=n)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx_images(ip, images, rows, cols)
    write_idx_labels(lp, labels)
    return ip, lp, images, labels


def test_idx_round_trip(tmp_path):
    ip, lp, images, labels = _write_pair(tmp_path)
    got_images, got_labels = load_mnist_idx(ip, lp)
    assert got_images.shape == (20, 12)
    assert np.all((got_images >= 0) & (got_images <= 1))
    assert np.max(np.abs(got_images - images)) <= 0.5 / 255 + 1e-12
    assert np.array_equal(got_labels, labels)
    assert set(np.unique(got_labels)) <= set(range(10))


def test_idx_rejects_wrong_magic(tmp_path):
    ip, lp, _, _ = _write_pair(tmp_path)
    blob = bytearray(ip.read_bytes())
    blob[3] = 0x99
    bad = tmp_path / "bad.idx"
    bad.write_bytes(bytes(blob))
    with pytest.raises(IdxFormatError, match="expected 0x00000803"):
        load_mnist_idx(bad, lp)
    with pytest.raises(IdxFormatError, match="label magic"):
        load_mnist_idx(ip, ip)


def test_idx_rejects_truncation_and_count_mismatch(tmp_path):
    ip, lp, _, labels = _write_pair(tmp_path)
    short = tmp_path / "short.idx"
    short.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_mnist_idx(short, lp)
    lp2 = tmp_path / "fewer.idx"
    write_idx_labels(lp2, labels[:-1])
    with pytest.raises(IdxFormatError, match="mismatch"):
        load_mnist_idx(ip, lp2)


# ---------------------------------------------------------------------------
# tokenization


def test_word_tokenize_appends_eos_per_line():
    assert tokenize("a b\n", "word") == ["a", "b", EOS]
    assert tokenize("a b\nc\n", "word") == ["a", "b", EOS, "c", EOS]


def test_tokenize_round_trip():
    text = "the quick fox\njumps over\n"
    vocab, ids = tokenize_and_index(text, "word")
    assert vocab.decode(ids) == tokenize(text, "word")
    vocab_c, ids_c = tokenize_and_index(text, "char")
    assert "".join(vocab_c.decode(ids_c)) == text


def test_vocabulary_is_bijective_and_stable():
    vocab, _ = tokenize_and_index("b a a c b a\n", "word")
    assert vocab.decode(vocab.encode(["a", "b", "c"])) == ["a", "b", "c"]
    assert vocab.id2tok[:2] == ["<unk>", "<eos>"]
    assert vocab.id2tok[2] == "a"  # most frequent first
    again, _ = tokenize_and_index("b a a c b a\n", "word")
    assert again.id2tok == vocab.id2tok


def test_vocabulary_unknown_maps_to_unk():
    vocab, _ = tokenize_and_index("a b\n", "word")
    assert vocab.encode(["zebra"])[0] == vocab.unk


def test_vocabulary_max_size():
    vocab, _ = tokenize_and_index("a a b b c\n", "word", max_size=4)
    assert len(vocab) == 4


# ---------------------------------------------------------------------------
# BPTT batching


def test_bptt_deterministic_mode_fixed_windows():
    corpus = np.arange(2 * 101, dtype=np.int64)
    windows = batch_bptt(corpus, batch_size=2, mean_len=10, seed=0,
                         p_full=1.0, sigma=0.0)
    assert all(w.length == 10 for w in windows)
    assert len(windows) == 10  # 101 columns: 10 windows plus a dropped partial


def test_bptt_reconstruction_and_shift():
    corpus = np.arange(1000, dtype=np.int64)
    windows = batch_bptt(corpus, batch_size=4, mean_len=20, seed=1)
    streams = corpus[:4 * 250].reshape(4, 250)
    used = np.concatenate([w.inputs for w in windows], axis=1)
    assert np.array_equal(used, streams[:, : used.shape[1]])
    pos = 0
    for w in windows:
        assert w.length >= 5
        assert np.array_equal(w.inputs, streams[:, pos:pos + w.length])
        assert np.array_equal(w.targets, streams[:, pos + 1:pos + w.length + 1])
        pos += w.length
    assert pos > streams.shape[1] - (20 + 20 + 1)  # only a partial tail is dropped


def test_bptt_carry_flags_and_seed_determinism():
    corpus = np.arange(800, dtype=np.int64)
    a = batch_bptt(corpus, 2, 15, seed=7)
    b = batch_bptt(corpus, 2, 15, seed=7)
    assert [w.length for w in a] == [w.length for w in b]
    assert not a[0].carry and all(w.carry for w in a[1:])
    c = batch_bptt(corpus, 2, 15, seed=8)
    assert [w.length for w in a] != [w.length for w in c]


def test_bptt_length_cap_and_small_corpus_error():
    corpus = np.arange(4000, dtype=np.int64)
    windows = batch_bptt(corpus, 2, 20, seed=3, sigma=100.0)
    assert all(5 <= w.length <= 40 for w in windows)
    with pytest.raises(ValueError, match="too small"):
        batch_bptt(np.arange(10), batch_size=2, mean_len=10, seed=0)


# ---------------------------------------------------------------------------
# synthetic corpus


def test_synthetic_corpus_is_deterministic_and_sized():
    a = synthetic_corpus(5000, seed=11)
    b = synthetic_corpus(5000, seed=11)
    assert a == b
    n = len(a.split())
    assert 5000 <= n <= 5200
    assert synthetic_corpus(5000, seed=12) != a


def test_synthetic_corpus_structure():
    text = synthetic_corpus(20000, seed=13)
    vocab, ids = tokenize_and_index(text, "word")
    assert 200 < len(vocab) < 600
    for line in text.splitlines()[:50]:
        assert line.endswith(" .")


def test_split_corpus_fractions():
    text = synthetic_corpus(3000, seed=14)
    train, valid, test = split_corpus(text, 0.8, 0.1)
    n = len(text.splitlines())
    assert len(train.splitlines()) == int(n * 0.8)
    assert len(train.splitlines()) + len(valid.splitlines()) + len(test.splitlines()) == n
