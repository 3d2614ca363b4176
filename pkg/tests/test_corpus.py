import math
import string

import numpy as np
import pytest

from mdc.corpus import (UNK, CorpusVocab, IngestError, SourceError, SyntheticSource, chunk, ingest, read_chunks,
                        read_text, skewed_source, split, two_state_source, uniform_source, write_chunks)


def test_abab(tmp_path):
    path = tmp_path / "abab.txt"
    path.write_text("abab")
    vocab, train, valid = ingest(path, 2, 2, valid_fraction=0.0)
    assert vocab.symbols == ("a", "b")  # equal counts, so codepoint order
    assert train.tolist() == [[0, 1], [0, 1]]
    assert valid.shape == (0, 2)


def test_frequency_order_and_cap():
    chars = string.ascii_lowercase + "0123"
    # character k appears 30 - k times, so the order is fixed by frequency alone
    text = "".join(c * (30 - k) for k, c in enumerate(chars))
    vocab = CorpusVocab.build(text, cap=27)
    assert vocab.m == 27 and vocab.has_unk
    assert vocab.symbols[:26] == tuple(chars[:26])
    assert vocab.symbols[-1] == UNK
    ids = vocab.encode("a0z")
    assert ids.tolist() == [0, 26, 25]
    assert vocab.mask_id == 27


def test_round_trip():
    text = "the quick brown fox jumps over the lazy dog"
    vocab = CorpusVocab.build(text)
    assert vocab.decode(vocab.encode(text)) == text
    assert vocab.encode(text).max() < vocab.m
    assert CorpusVocab.from_dict(vocab.to_dict()) == vocab
    with pytest.raises(ValueError):
        vocab.encode("Q")
    with pytest.raises(ValueError):
        vocab.decode([vocab.m])


def test_ingest_errors(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_bytes(b"")
    with pytest.raises(IngestError):
        read_text(empty)
    bad = tmp_path / "bad.txt"
    bad.write_bytes(b"hello \xff world")
    with pytest.raises(IngestError) as e:
        ingest(bad, 27, 4)
    assert e.value.offset == 6
    assert "offset 6" in str(e.value)
    short = tmp_path / "short.txt"
    short.write_text("ab")
    with pytest.raises(IngestError):
        ingest(short, 27, 4)


def test_chunk_and_split():
    c = chunk(np.arange(10), 3)
    assert c.tolist() == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    train, valid = split(np.arange(100).reshape(100, 1), 0.02)
    assert len(train) == 98 and valid[:, 0].tolist() == [98, 99]
    train, valid = split(np.arange(3).reshape(3, 1), 0.02)
    assert len(train) == 2 and len(valid) == 1
    with pytest.raises(ValueError):
        chunk([1, 2], 0)


def test_ingest_is_deterministic(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text(two_state_source().generate(5000, 3))
    a, b = ingest(path, 27, 16), ingest(path, 27, 16)
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def test_chunk_fixture_round_trip(tmp_path):
    chunks = np.array([[0, 1, 2, 3], [3, 2, 1, 0]])
    path = tmp_path / "c.chunks"
    write_chunks(path, chunks, 4)
    assert path.read_text().splitlines()[0] == "mdc-chunks v1 m=4 len=4"
    m, back = read_chunks(path)
    assert m == 4 and np.array_equal(back, chunks)


def test_chunk_fixture_errors(tmp_path):
    path = tmp_path / "c.chunks"
    path.write_text("0 1\n")
    with pytest.raises(IngestError):
        read_chunks(path)
    path.write_text("mdc-chunks v1 m=2 len=2\n0 2\n")
    with pytest.raises(IngestError):
        read_chunks(path)
    path.write_text("mdc-chunks v1 m=2 len=2\n0 1 1\n")
    with pytest.raises(IngestError):
        read_chunks(path)


# synthetic sources ---------------------------------------------------------------

def test_entropy_examples():
    assert uniform_source(4).entropy_bits() == pytest.approx(2.0, abs=1e-12)
    h = -(0.1 * math.log2(0.1) + 0.9 * math.log2(0.9))
    assert two_state_source(0.1).entropy_bits() == pytest.approx(h, abs=1e-12)
    assert abs(two_state_source(0.1).entropy_bits() - 0.469) < 1e-3


def test_asymmetric_chain_stationary():
    P = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5], [0.6, 0.0, 0.4]])
    pi = SyntheticSource(1, P).stationary()
    assert np.abs(pi @ P - pi).max() < 1e-11
    ref = np.linalg.eig(P.T)[1][:, 0].real
    assert np.allclose(pi, ref / ref.sum(), atol=1e-10)


@pytest.mark.parametrize("src", [two_state_source(0.1), SyntheticSource(1, [[0.5, 0.5, 0.0], [0.2, 0.3, 0.5],
                                                                            [0.6, 0.0, 0.4]])])
def test_unigram_frequencies_match_stationary(src):
    n = 1_000_000
    ids = src.generate_ids(n, 11)
    freq = np.bincount(ids, minlength=src.m) / n
    pi = src.stationary()
    # correlated samples: widen the i.i.d. standard error by the chain's integrated autocorrelation
    lam = np.sort(np.abs(np.linalg.eigvals(src.table)))[-2]
    se = np.sqrt(pi * (1 - pi) / n * (1 + lam) / (1 - lam))
    assert np.all(np.abs(freq - pi) <= 4 * se)


def test_generation_is_deterministic():
    src = skewed_source(5, 0.1)
    assert np.array_equal(src.generate_ids(1000, 4), src.generate_ids(1000, 4))
    assert not np.array_equal(src.generate_ids(1000, 4), src.generate_ids(1000, 5))
    text = two_state_source().generate(50, 0)
    assert set(text) <= {"a", "b"} and len(text) == 50


def test_non_stochastic_table():
    with pytest.raises(SourceError):
        SyntheticSource(1, [[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(SourceError):
        SyntheticSource(1, [[1.2, -0.2], [0.5, 0.5]])
    with pytest.raises(SourceError):
        SyntheticSource(2, [[1.0]])
