"""Character corpora: vocabulary, chunking, splits, and synthetic Markov sources."""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream

UNK = "�"
CHUNK_HEADER = "mdc-chunks v1"


class IngestError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


class SourceError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusVocab:
    """Characters in id order. If ``has_unk``, the last id is the catch-all ``unk``."""

    symbols: tuple
    has_unk: bool = False
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.symbols)})

    @property
    def m(self) -> int:
        return len(self.symbols)

    @property
    def mask_id(self) -> int:
        return self.m

    @property
    def unk_id(self) -> int | None:
        return self.m - 1 if self.has_unk else None

    @classmethod
    def build(cls, text: str, cap: int | None = None) -> "CorpusVocab":
        """Most frequent first, ties by codepoint; ``cap - 1`` symbols plus ``unk`` when over the cap."""
        counts = Counter(text)
        order = sorted(counts, key=lambda c: (-counts[c], ord(c)))
        if cap is not None and len(order) > cap:
            if cap < 2:
                raise ValueError("a capped vocabulary needs room for at least one symbol and unk")
            return cls(tuple(order[: cap - 1]) + (UNK,), True)
        return cls(tuple(order))

    def encode(self, text: str) -> np.ndarray:
        idx = self._index
        if self.has_unk:
            unk = self.unk_id
            return np.array([idx.get(c, unk) for c in text], dtype=np.int64)
        try:
            return np.array([idx[c] for c in text], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        ids = np.asarray(ids).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.m):
            raise ValueError("ids outside the clean vocabulary")
        return "".join(self.symbols[i] for i in ids)

    def to_dict(self) -> dict:
        return {"symbols": "".join(self.symbols), "has_unk": self.has_unk}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusVocab":
        return cls(tuple(d["symbols"]), bool(d.get("has_unk", False)))


def chunk(ids, chunk_len: int) -> np.ndarray:
    """Non-overlapping chunks; a trailing partial chunk is dropped."""
    if chunk_len < 1:
        raise ValueError("chunk_len must be positive")
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.size // chunk_len
    return ids[: n * chunk_len].reshape(n, chunk_len)


def split(chunks: np.ndarray, valid_fraction: float = 0.02):
    """Hold out the last ``floor(n * valid_fraction)`` chunks, but at least one when there are two or more."""
    n = len(chunks)
    n_valid = int(math.floor(n * valid_fraction))
    if n >= 2 and valid_fraction > 0:
        n_valid = max(n_valid, 1)
    return chunks[: n - n_valid], chunks[n - n_valid:]


def read_text(path) -> str:
    data = Path(path).read_bytes()
    if not data:
        raise IngestError(f"{path}: file is empty")
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise IngestError(f"{path}: invalid UTF-8", e.start) from None


def ingest(path, vocab_size_cap: int | None, chunk_len: int, valid_fraction: float = 0.02):
    """Return ``(vocab, train_chunks, valid_chunks)`` for a UTF-8 text file."""
    text = read_text(path)
    vocab = CorpusVocab.build(text, vocab_size_cap)
    chunks = chunk(vocab.encode(text), chunk_len)
    if len(chunks) == 0:
        raise IngestError(f"{path}: shorter than one chunk of {chunk_len} characters")
    train, valid = split(chunks, valid_fraction)
    return vocab, train, valid


# chunk fixtures ----------------------------------------------------------------

def write_chunks(path, chunks, m: int) -> None:
    chunks = np.asarray(chunks, dtype=np.int64)
    L = chunks.shape[1] if chunks.ndim == 2 else 0
    lines = [f"{CHUNK_HEADER} m={m} len={L}"]
    lines += [" ".join(str(int(v)) for v in row) for row in chunks]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_chunks(path):
    """Return ``(m, chunks)``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(CHUNK_HEADER + " "):
        raise IngestError(f"{path}: missing '{CHUNK_HEADER}' header")
    try:
        fields = dict(kv.split("=", 1) for kv in lines[0][len(CHUNK_HEADER) + 1:].split())
        m, L = int(fields["m"]), int(fields["len"])
    except (KeyError, ValueError):
        raise IngestError(f"{path}: malformed header {lines[0]!r}") from None
    rows = []
    for k, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        row = [int(v) for v in line.split()]
        if len(row) != L:
            raise IngestError(f"{path}:{k}: expected {L} ids, got {len(row)}")
        if min(row) < 0 or max(row) >= m:
            raise IngestError(f"{path}:{k}: id outside [0, {m - 1}]")
        rows.append(row)
    return m, np.array(rows, dtype=np.int64).reshape(-1, L)


# synthetic sources ---------------------------------------------------------------

class SyntheticSource:
    """Order-0 (i.i.d.) or order-1 Markov source over ``m`` symbols with a known entropy rate."""

    def __init__(self, order: int, table, alphabet: str | None = None):
        if order not in (0, 1):
            raise SourceError("order must be 0 or 1")
        table = np.atleast_2d(np.asarray(table, dtype=np.float64))
        if order == 1 and table.shape[0] != table.shape[1]:
            raise SourceError("an order-1 table must be square")
        if order == 0 and table.shape[0] != 1:
            raise SourceError("an order-0 table is a single distribution")
        if np.any(table < 0) or not np.allclose(table.sum(axis=1), 1.0, atol=1e-9):
            raise SourceError("table rows must be non-negative and sum to 1")
        self.order, self.table = order, table
        self.m = table.shape[1]
        if alphabet is None:
            alphabet = "abcdefghijklmnopqrstuvwxyz "[: self.m] if self.m <= 27 else None
        if alphabet is not None and len(alphabet) != self.m:
            raise SourceError("alphabet length must equal the number of symbols")
        self.alphabet = alphabet

    def stationary(self, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
        if self.order == 0:
            return self.table[0].copy()
        pi = np.full(self.m, 1.0 / self.m)
        for _ in range(max_iter):
            nxt = 0.5 * (pi + pi @ self.table)  # lazy chain: same fixed point, always aperiodic
            if np.abs(nxt - pi).max() < tol:
                return nxt / nxt.sum()
            pi = nxt
        raise SourceError("power iteration did not converge")

    def entropy(self) -> float:
        """Entropy rate in nats per symbol."""
        pi = self.stationary()
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(self.table > 0, self.table * np.log(self.table), 0.0)
        if self.order == 0:
            return float(-plogp[0].sum())
        return float(-(pi * plogp.sum(axis=1)).sum())

    def entropy_bits(self) -> float:
        return self.entropy() / math.log(2.0)

    def generate_ids(self, total_len: int, seed: int) -> np.ndarray:
        rng = stream(seed, "synth")
        if self.order == 0:
            c = np.cumsum(self.table[0])
            return np.minimum(np.searchsorted(c, rng.random(total_len) * c[-1], side="right"), self.m - 1)
        u = rng.random(total_len)
        cums = [list(np.cumsum(r)) for r in self.table]
        pi = np.cumsum(self.stationary())
        out = np.empty(total_len, dtype=np.int64)
        x = min(bisect_right(list(pi), u[0] * pi[-1]), self.m - 1) if total_len else 0
        for k in range(total_len):
            if k:
                row = cums[x]
                x = min(bisect_right(row, u[k] * row[-1]), self.m - 1)
            out[k] = x
        return out

    def generate(self, total_len: int, seed: int) -> str:
        if self.alphabet is None:
            raise SourceError("no alphabet to render text with")
        return "".join(self.alphabet[i] for i in self.generate_ids(total_len, seed))

    def vocab(self) -> CorpusVocab:
        return CorpusVocab(tuple(self.alphabet))


def uniform_source(m: int) -> SyntheticSource:
    return SyntheticSource(0, np.full((1, m), 1.0 / m))


def two_state_source(flip: float = 0.1) -> SyntheticSource:
    return SyntheticSource(1, [[1 - flip, flip], [flip, 1 - flip]], "ab")


def skewed_source(m: int, rare: float) -> SyntheticSource:
    """Value 0 has probability ``rare``; the rest share the remainder uniformly."""
    p = np.full(m, (1.0 - rare) / (m - 1))
    p[0] = rare
    return SyntheticSource(0, p[None])
