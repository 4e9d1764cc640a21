import numpy as np
import pytest

from c3net.errors import ContractError, DataError
from c3net.moltype import AtomTypeVocabulary
from c3net.type2vec import (EmbeddingTable, SkipGramConfig, cosine, dump_vectors_tsv, nearest,
                            train_skipgram)

A, B, C = "C.sp3.0", "H.none.0", "O.sp2.0"


def _expected_objective(table, pairs, power=0.75):
    """Negative-sampling loss with the noise expectation taken exactly (k=1)."""
    counts = np.bincount(np.asarray(pairs).reshape(-1), minlength=len(table.vocabulary)).astype(float)
    noise = counts ** power / (counts ** power).sum()
    v, u = table.center_vectors.astype(float), table.context_vectors.astype(float)
    total = 0.0
    for c, o in pairs:
        total += np.logaddexp(0.0, -u[o] @ v[c])
        total += sum(p * np.logaddexp(0.0, u[n] @ v[c]) for n, p in enumerate(noise))
    return total / len(pairs)


def test_repeated_pair_loss_falls():
    vocab = AtomTypeVocabulary([A, B, C])
    pairs = [(vocab.id(A), vocab.id(B))] * 8
    cfg = SkipGramConfig(dim=4, negatives=1, epochs=20, lr=0.1, seed=3)
    table = train_skipgram(pairs, vocab, cfg)
    assert len(table.epoch_loss) == 20
    assert table.epoch_loss[-1] < table.epoch_loss[0]
    # independent oracle: the exact expected objective, before (context = 0) and after
    assert _expected_objective(table, pairs) < 2 * np.log(2.0)


def test_deterministic_given_seed():
    vocab = AtomTypeVocabulary([A, B, C])
    pairs = [(0, 1), (1, 0), (2, 0)] * 5
    cfg = SkipGramConfig(dim=8, negatives=2, epochs=5, seed=7)
    a, b = train_skipgram(pairs, vocab, cfg), train_skipgram(pairs, vocab, cfg)
    assert a.to_bytes() == b.to_bytes()
    c = train_skipgram(pairs, vocab, SkipGramConfig(dim=8, negatives=2, epochs=5, seed=8))
    assert c.to_bytes() != a.to_bytes()


def test_initialization_ranges():
    vocab = AtomTypeVocabulary([A, B, C])
    t = train_skipgram([(0, 1)], vocab, SkipGramConfig(dim=16, negatives=1, epochs=1, lr=1e-12))
    assert np.abs(t.center_vectors).max() <= 0.5 / 16 + 1e-7
    assert np.abs(t.context_vectors).max() < 1e-9


def test_preconditions():
    vocab = AtomTypeVocabulary([A, B, C])
    with pytest.raises(ContractError):
        train_skipgram([], vocab)
    with pytest.raises(ContractError):
        train_skipgram([(0, 1)], vocab, SkipGramConfig(negatives=3))
    with pytest.raises(ContractError):
        train_skipgram([(0, 1)], vocab, SkipGramConfig(negatives=0))
    with pytest.raises(ContractError):
        train_skipgram([(0, 3)], vocab, SkipGramConfig(negatives=1))
    with pytest.raises(ContractError):
        train_skipgram([(0, 1)], vocab, SkipGramConfig(dim=1, negatives=1))


def test_toy_corpus_neighbourhoods():
    # methane-like and carbon-dioxide-like blocks: the sp3 carbon only ever sees
    # hydrogen, hydrogens see the carbon and each other, the sp2 oxygens see the
    # sp2 carbon and each other
    codes = [A, "C.sp2.0", B, C]
    vocab = AtomTypeVocabulary(codes)
    i = vocab.id
    methane = [(i(A), i(B))] * 4 + [(i(B), i(A))] * 4 + [(i(B), i(B))] * 12
    dioxide = [(i("C.sp2.0"), i(C))] * 2 + [(i(C), i("C.sp2.0"))] * 2 + [(i(C), i(C))] * 2
    table = train_skipgram((methane + dioxide) * 10, vocab,
                           SkipGramConfig(dim=8, negatives=2, epochs=50, seed=0))
    ranked = [code for code, _ in nearest(table, A, 3)]
    assert ranked.index(B) < ranked.index(C)


def test_nearest_rules():
    vocab = AtomTypeVocabulary([A, B])
    t = EmbeddingTable(vocab, np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros((2, 2)))
    assert [c for c, _ in nearest(t, A, 5)] == [B]
    vocab3 = AtomTypeVocabulary([A, B, C])
    t3 = EmbeddingTable(vocab3, np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0]]), np.zeros((3, 2)))
    out = nearest(t3, A, 10)
    assert len(out) == 2
    assert [c for c, _ in out] == sorted([B, C])  # equal cosine: lower id first
    with pytest.raises(DataError):
        nearest(t3, "N.sp3.0", 1)


def test_cosine_identity():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine(v, np.zeros(3)) == 0.0


def test_table_round_trip_and_corruption(shipped_table):
    raw = shipped_table.to_bytes()
    again = EmbeddingTable.from_bytes(raw)
    assert again.to_bytes() == raw
    assert np.array_equal(again.center_vectors, shipped_table.center_vectors)
    with pytest.raises(DataError):
        EmbeddingTable.from_bytes(raw[:-4])
    with pytest.raises(DataError):
        EmbeddingTable.from_bytes(b"junk" + raw)


def test_non_finite_rejected():
    vocab = AtomTypeVocabulary([A, B])
    with pytest.raises(DataError):
        EmbeddingTable(vocab, np.array([[np.nan, 0.0], [0.0, 1.0]]), np.zeros((2, 2)))


def test_shipped_table_covers_corpus(shipped_table, corpus_vocab):
    assert set(corpus_vocab.codes) <= set(shipped_table.vocabulary.codes)
    assert len(dump_vectors_tsv(shipped_table).splitlines()) == len(shipped_table.vocabulary)
