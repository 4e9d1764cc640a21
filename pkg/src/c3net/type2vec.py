"""Skip-gram with negative sampling over atom-type contexts.

Atom types play the role of words and molecules the role of sentences; a
pair (center, context) is emitted for every atom pair within two bonds.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError
from .moltype import AtomTypeVocabulary

TABLE_MAGIC = "c3net-type2vec 1"


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 64
    negatives: int = 5
    epochs: int = 50
    lr: float = 0.025
    min_lr_fraction: float = 1e-4
    batch_size: int = 16
    unigram_power: float = 0.75
    seed: int = 0


@dataclass
class EmbeddingTable:
    vocabulary: AtomTypeVocabulary
    center_vectors: np.ndarray
    context_vectors: np.ndarray
    seed: int = 0
    corpus_checksum: str = ""
    epoch_loss: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.vocabulary)
        for name in ("center_vectors", "context_vectors"):
            m = np.asarray(getattr(self, name), dtype=np.float32)
            if m.ndim != 2 or m.shape[0] != n:
                raise DataError(f"{name} has shape {m.shape}, expected ({n}, F)")
            if not np.all(np.isfinite(m)):
                raise DataError(f"{name} contains non-finite values")
            setattr(self, name, m)
        if self.center_vectors.shape != self.context_vectors.shape:
            raise DataError("center and context matrices differ in shape")

    @property
    def dim(self) -> int:
        return self.center_vectors.shape[1]

    def vector(self, code: str) -> np.ndarray:
        return self.center_vectors[self.vocabulary.id(code)]

    # file format: text header, blank-line terminator, then the float32 blob
    def to_bytes(self) -> bytes:
        header = [
            TABLE_MAGIC,
            f"dim\t{self.dim}",
            f"seed\t{self.seed}",
            f"corpus_sha256\t{self.corpus_checksum}",
            f"vocab_size\t{len(self.vocabulary)}",
        ]
        text = "\n".join(header) + "\n" + self.vocabulary.dump_tsv() + "\n"
        blob = np.concatenate([self.center_vectors, self.context_vectors]).astype("<f4").tobytes()
        return text.encode("utf-8") + blob

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EmbeddingTable":
        split = raw.find(b"\n\n")
        if split < 0 or not raw.startswith(TABLE_MAGIC.encode()):
            raise DataError("not a type2vec table file")
        lines = raw[:split].decode("utf-8").split("\n")
        meta = dict(line.split("\t", 1) for line in lines[1:5])
        try:
            dim, n = int(meta["dim"]), int(meta["vocab_size"])
        except (KeyError, ValueError):
            raise DataError("type2vec table header is incomplete") from None
        vocab = AtomTypeVocabulary.load_tsv("\n".join(lines[5:]))
        if len(vocab) != n:
            raise DataError(f"table header declares {n} types but lists {len(vocab)}")
        blob = raw[split + 2:]
        if len(blob) != 2 * n * dim * 4:
            raise DataError(f"type2vec blob is {len(blob)} bytes, expected {2 * n * dim * 4}")
        mats = np.frombuffer(blob, dtype="<f4").reshape(2 * n, dim).astype(np.float32)
        return cls(vocab, mats[:n].copy(), mats[n:].copy(), int(meta.get("seed", 0)),
                   meta.get("corpus_sha256", ""))

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        return cls.from_bytes(Path(path).read_bytes())

    @property
    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def corpus_checksum(pairs: Sequence[tuple[int, int]], vocab: AtomTypeVocabulary) -> str:
    h = hashlib.sha256(vocab.dump_tsv().encode())
    h.update(np.asarray(pairs, dtype="<i8").tobytes())
    return h.hexdigest()


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def train_skipgram(pairs: Sequence[tuple[int, int]], vocabulary: AtomTypeVocabulary,
                   config: SkipGramConfig = SkipGramConfig()) -> EmbeddingTable:
    """Train center/context vectors; the returned table records per-epoch mean loss.

    Each pair contributes -log s(c.v) - sum_k log s(-n_k.v), negatives drawn
    from the type unigram distribution raised to ``unigram_power``.
    Updates are plain SGD over mini-batches, learning rate decaying
    linearly to ``lr * min_lr_fraction``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    V, F, k = len(vocabulary), config.dim, config.negatives
    if len(pairs) == 0:
        raise ContractError("cannot train on an empty pair list")
    if k < 1:
        raise ContractError(f"need at least one negative sample, got {k}")
    if F < 2:
        raise ContractError(f"embedding dimension must be >= 2, got {F}")
    if V < k + 1:
        raise ContractError(f"vocabulary of {V} types is too small for {k} negatives")
    if pairs.min() < 0 or pairs.max() >= V:
        raise ContractError("pair ids fall outside the vocabulary")

    rng = np.random.default_rng(config.seed)
    center = rng.uniform(-0.5 / F, 0.5 / F, size=(V, F))
    context = np.zeros((V, F))

    # unigram over every type occurrence in the pair list (both columns)
    counts = np.bincount(pairs.reshape(-1), minlength=V).astype(np.float64)
    weights = counts ** config.unigram_power
    if weights.sum() == 0:
        weights = np.ones(V)
    noise_cdf = np.cumsum(weights / weights.sum())
    noise_cdf[-1] = 1.0

    n = len(pairs)
    total_steps = config.epochs * n
    done = 0
    losses = []
    B = max(1, int(config.batch_size))
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, B):
            batch = pairs[order[start:start + B]]
            lr = config.lr * max(config.min_lr_fraction, 1.0 - done / total_steps)
            done += len(batch)
            c_ids, o_ids = batch[:, 0], batch[:, 1]
            neg = np.searchsorted(noise_cdf, rng.random((len(batch), k)), side="right")
            neg = np.minimum(neg, V - 1)
            v = center[c_ids]  # (b, F)
            targets = np.concatenate([o_ids[:, None], neg], axis=1)  # (b, 1+k)
            u = context[targets]  # (b, 1+k, F)
            score = np.einsum("bf,bkf->bk", v, u)
            sign = np.ones_like(score)
            sign[:, 1:] = -1.0
            epoch_loss -= float(_log_sigmoid(sign * score).sum())
            # d(-log s(sign*score))/d score = -sign * s(-sign*score)
            coef = -sign * _sigmoid(-sign * score)
            grad_v = np.einsum("bk,bkf->bf", coef, u)
            grad_u = coef[:, :, None] * v[:, None, :]
            np.add.at(center, c_ids, -lr * grad_v)
            np.add.at(context, targets.reshape(-1), -lr * grad_u.reshape(-1, F))
        losses.append(epoch_loss / n)

    return EmbeddingTable(vocabulary, center.astype(np.float32), context.astype(np.float32),
                          seed=config.seed, corpus_checksum=corpus_checksum(pairs, vocabulary),
                          epoch_loss=losses)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def nearest(table: EmbeddingTable, code: str, k: int) -> list[tuple[str, float]]:
    """Up to k other codes by descending cosine similarity; ties go to the lower id."""
    q = table.vocabulary.id(code)
    vecs = table.center_vectors.astype(np.float64)
    norms = np.linalg.norm(vecs, axis=1)
    norms[norms == 0] = 1.0
    sims = (vecs @ vecs[q]) / (norms * norms[q])
    ranked = sorted((i for i in range(len(table.vocabulary)) if i != q), key=lambda i: (-sims[i], i))
    return [(table.vocabulary.codes[i], float(sims[i])) for i in ranked[:max(0, k)]]


def embedding_from_corpus(molecules, config: SkipGramConfig = SkipGramConfig()) -> EmbeddingTable:
    """Perceive, build the vocabulary and train in one call."""
    from .moltype import context_ids, perceive

    graphs = [perceive(m) for m in molecules]
    vocab = AtomTypeVocabulary.from_graphs(graphs)
    return train_skipgram(context_ids(graphs, vocab), vocab, config)


def dump_vectors_tsv(table: EmbeddingTable) -> str:
    buf = io.StringIO()
    for code, row in zip(table.vocabulary.codes, table.center_vectors):
        buf.write(code + "\t" + "\t".join(f"{x:.6g}" for x in row) + "\n")
    return buf.getvalue()
