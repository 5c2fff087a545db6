"""Vocabulary, tokenizer and the one-layer LSTM word encoder."""

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .exceptions import ConfigurationError, InvalidInputError

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
DEFAULT_MAX_LEN = 20

_PUNCT = re.compile(r"[^\w\s]")


def normalize(expression):
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", expression.lower()).split())


class Vocabulary:
    """Injective token <-> id mapping with fixed PAD=0 and UNK=1."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise ConfigurationError("vocabulary must start with PAD and UNK")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __contains__(self, token):
        return token in self.index

    def lookup(self, token):
        return self.index.get(token, UNK_ID)

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])


def build_vocabulary(corpus, max_size=None):
    """Build a vocabulary ordered by frequency (desc), ties broken lexicographically."""
    corpus = list(corpus)
    if not corpus:
        raise ConfigurationError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in corpus for tok in normalize(text).split())
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    if max_size is not None:
        ordered = ordered[: max(0, max_size - 2)]
    return Vocabulary([PAD, UNK] + ordered)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    length: int

    @property
    def max_len(self):
        return len(self.ids)


def tokenize(expression, vocab, max_len=DEFAULT_MAX_LEN):
    words = normalize(expression).split()
    if not words:
        raise InvalidInputError("empty expression")
    words = words[:max_len]
    ids = [vocab.lookup(w) for w in words]
    return TokenSequence(tuple(ids + [PAD_ID] * (max_len - len(ids))), len(ids))


def batch_tokens(sequences):
    """Stack TokenSequences into (ids[B, T_max], lengths[B]) long tensors."""
    ids = torch.tensor([s.ids for s in sequences], dtype=torch.long)
    lengths = torch.tensor([s.length for s in sequences], dtype=torch.long)
    return ids, lengths


def length_mask(lengths, max_len):
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


class LanguageEncoder(nn.Module):
    """Learned embedding table followed by a one-layer unidirectional LSTM.

    Returns the per-word hidden states, zeroed at PAD positions.
    """

    def __init__(self, vocab_size, word_dim=64, embed_dim=None):
        super().__init__()
        embed_dim = embed_dim or word_dim
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.lstm = nn.LSTM(embed_dim, word_dim, num_layers=1, batch_first=True)
        self.word_dim = word_dim

    def forward(self, ids, lengths):
        if (lengths < 1).any():
            raise InvalidInputError("every expression needs at least one token")
        states, _ = self.lstm(self.embedding(ids))
        mask = length_mask(lengths, ids.shape[1]).unsqueeze(-1)
        return states * mask.to(states.dtype)


def encode_expression(tokens, encoder):
    """Encode a single TokenSequence; returns a (T_max, D_w) tensor of word states."""
    ids, lengths = batch_tokens([tokens])
    return encoder(ids, lengths)[0]


def last_word_state(states, lengths):
    """Hidden state of the final valid word per expression, shape (B, D_w)."""
    idx = (lengths - 1).clamp(min=0)
    return states[torch.arange(states.shape[0]), idx]
