"""Narrative tokenization: vocabulary, fixed-length id sequences, masking.

Word-level tokens (lowercased, split at whitespace and punctuation)
stand in for a subword vocabulary; ids 0..3 are reserved for the
padding, unknown, sequence-start, and mask tokens.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import InputError

PAD_ID, UNK_ID, CLS_ID, MASK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ["<pad>", "<unk>", "<cls>", "<mask>"]

_WORD_RE = re.compile(r"[a-z0-9']+")


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries."""
    return _WORD_RE.findall(text.lower())


class Vocab:
    """Immutable token-to-id map with dense, 0-based ids.

    Ordering of non-reserved tokens is frequency-descending with
    lexicographic tie-break, so two builds over the same corpus are
    identical.
    """

    def __init__(self, tokens: list[str], min_freq: int = 2):
        self.min_freq = min_freq
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise InputError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def save(self, path) -> None:
        """One token per line; line number == id."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if lines[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise InputError(f"{path}: reserved tokens missing or reordered")
        return cls(lines[len(RESERVED_TOKENS):], min_freq=0)


def build_vocab(corpus: list[str], min_freq: int = 2) -> Vocab:
    """Collect all tokens with frequency >= min_freq, plus reserved ids."""
    if not corpus:
        raise InputError("build_vocab: empty corpus")
    counts = Counter()
    for text in corpus:
        counts.update(split_words(text))
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept, min_freq=min_freq)


@dataclass
class TokenSequence:
    """Fixed-length id sequence; position 0 is the sequence-start token."""

    ids: list[int]
    true_len: int

    def __post_init__(self):
        if self.true_len > len(self.ids):
            raise InputError(f"true_len {self.true_len} exceeds length {len(self.ids)}")


def tokenize(text: str, vocab: Vocab, max_len: int = 256) -> TokenSequence:
    """Map text to ids, start token prepended, padded/truncated to max_len."""
    ids = [CLS_ID] + [vocab.id(w) for w in split_words(text)]
    ids = ids[:max_len]
    true_len = len(ids)
    ids += [PAD_ID] * (max_len - true_len)
    return TokenSequence(ids=ids, true_len=true_len)


def detokenize(seq: TokenSequence, vocab: Vocab) -> str:
    """Inverse of tokenize up to case and punctuation splitting."""
    words = [vocab.token(i) for i in seq.ids[1:seq.true_len]]
    return " ".join(words)


def mask_tokens(seq: TokenSequence, rate: float = 0.15,
                rng: np.random.Generator | None = None) -> tuple[TokenSequence, list[tuple[int, int]]]:
    """Independently replace eligible positions with the mask token.

    Eligible positions are 1..true_len-1 excluding reserved ids other
    than the unknown token. Returns the masked sequence and the list of
    (position, original id) targets; reproducible given the rng state.
    """
    if not 0.0 <= rate <= 1.0:
        raise InputError(f"mask rate {rate} outside [0, 1]")
    if rng is None:
        rng = np.random.default_rng(0)
    ids = list(seq.ids)
    targets: list[tuple[int, int]] = []
    for pos in range(1, seq.true_len):
        if ids[pos] in (PAD_ID, CLS_ID, MASK_ID):
            continue
        if rng.random() < rate:
            targets.append((pos, ids[pos]))
            ids[pos] = MASK_ID
    return TokenSequence(ids=ids, true_len=seq.true_len), targets
