"""Token representation: word-embedding tables, character CNN, BiLSTM context."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .tensor import (
    Tensor,
    concat,
    conv1d_same,
    gather_rows,
    glorot_uniform,
    lstm_cell,
    max_over_time,
    relu,
    stack_rows,
    uniform_init,
    unstack_rows,
)

__all__ = ["EncoderConfig", "TokenEncoder", "BiLstm", "read_embedding_table"]

EMBEDDING_INIT_BOUND = 0.25


@dataclass
class EncoderConfig:
    """Sizes for the shared token representation.

    ``word_embedding_dims`` holds one entry per word table; tables are
    concatenated, so multiple pretrained sources can sit side by side.
    """

    word_embedding_dims: list[int] = field(default_factory=lambda: [100])
    char_embedding_dim: int = 30
    char_filters: int = 30
    char_filter_width: int = 3
    lstm_hidden: int = 32

    def __post_init__(self) -> None:
        dims = list(self.word_embedding_dims)
        if not dims or min(dims) < 1:
            raise ValueError("word_embedding_dims needs at least one positive entry")
        for name in ("char_embedding_dim", "char_filters", "char_filter_width", "lstm_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        self.word_embedding_dims = dims

    @property
    def token_dim(self) -> int:
        return sum(self.word_embedding_dims) + self.char_filters


class TokenEncoder:
    """Embeds tokens as word-table lookups concatenated with a char-CNN vector.

    Word lookup is case-insensitive; the character path sees the original
    spelling, so casing stays visible as a subword cue.
    """

    def __init__(
        self,
        word_vocab: Vocabulary,
        char_vocab: Vocabulary,
        config: EncoderConfig,
        rng: np.random.Generator,
    ) -> None:
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.config = config
        self.word_tables = [
            uniform_init(rng, (len(word_vocab), dim), EMBEDDING_INIT_BOUND)
            for dim in config.word_embedding_dims
        ]
        self.char_table = uniform_init(
            rng, (len(char_vocab), config.char_embedding_dim), EMBEDDING_INIT_BOUND
        )
        w, ce, f = config.char_filter_width, config.char_embedding_dim, config.char_filters
        self.char_conv_filters = glorot_uniform(rng, (w, ce, f), fan_in=w * ce, fan_out=f)
        self.char_conv_bias = Tensor(np.zeros(f))

    def parameters(self) -> dict[str, Tensor]:
        params = {f"word_table_{i}": t for i, t in enumerate(self.word_tables)}
        params["char_table"] = self.char_table
        params["char_conv_filters"] = self.char_conv_filters
        params["char_conv_bias"] = self.char_conv_bias
        return params

    def char_cnn(self, token: str) -> Tensor:
        """Convolve width-3 filters over the character embeddings, ReLU, then
        take the per-filter maximum over positions."""
        if not token:
            raise ValueError("cannot embed an empty token")
        ids = [self.char_vocab.lookup(c) for c in token]
        chars = gather_rows(self.char_table, ids)
        responses = relu(conv1d_same(chars, self.char_conv_filters, self.char_conv_bias))
        return max_over_time(responses)

    def encode(self, tokens: list[str]) -> Tensor:
        """(n, token_dim) matrix; repeated tokens share one computed vector."""
        if not tokens:
            raise ValueError("cannot encode an empty utterance")
        word_ids = [self.word_vocab.lookup(t.lower()) for t in tokens]
        word_parts = [gather_rows(table, word_ids) for table in self.word_tables]
        char_cache: dict[str, Tensor] = {}
        char_rows = []
        for t in tokens:
            if t not in char_cache:
                char_cache[t] = self.char_cnn(t)
            char_rows.append(char_cache[t])
        return concat(word_parts + [stack_rows(char_rows)])

    def apply_pretrained(self, table_index: int, vectors: dict[str, np.ndarray]) -> int:
        """Overwrite rows of one word table with given vectors; returns hit count."""
        table = self.word_tables[table_index]
        hits = 0
        for token, vec in vectors.items():
            key = token.lower()
            if key in self.word_vocab:
                if vec.shape != (table.shape[1],):
                    raise ValueError(
                        f"pretrained vector for {token!r} has dim {vec.shape[0]}, "
                        f"table {table_index} holds {table.shape[1]}"
                    )
                table.values[self.word_vocab.lookup(key)] = vec
                hits += 1
        return hits


def read_embedding_table(path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    """Read a text embedding file: header "count dim", then "token v1 .. vdim"."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'count dim'")
        count, dim = int(header[0]), int(header[1])
        for lineno, line in enumerate(handle, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    if len(vectors) != count:
        raise ValueError(f"{path}: header promised {count} rows, found {len(vectors)}")
    return vectors, dim


class _LstmDirection:
    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator) -> None:
        self.hidden = hidden
        self.wx = glorot_uniform(rng, (input_dim, 4 * hidden), fan_in=input_dim, fan_out=4 * hidden)
        self.wh = glorot_uniform(rng, (hidden, 4 * hidden), fan_in=hidden, fan_out=4 * hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # open the forget gate at the start of training
        self.b = Tensor(bias)

    def run(self, rows: list[Tensor]) -> list[Tensor]:
        h = Tensor(np.zeros(self.hidden))
        c = Tensor(np.zeros(self.hidden))
        outputs = []
        for x in rows:
            h, c = lstm_cell(x, h, c, self.wx, self.wh, self.b)
            outputs.append(h)
        return outputs


class BiLstm:
    """Forward and backward LSTM over a sequence, outputs concatenated per position."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator) -> None:
        self.input_dim = input_dim
        self.hidden = hidden
        self.fwd = _LstmDirection(input_dim, hidden, rng)
        self.bwd = _LstmDirection(input_dim, hidden, rng)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "fwd_wx": self.fwd.wx, "fwd_wh": self.fwd.wh, "fwd_b": self.fwd.b,
            "bwd_wx": self.bwd.wx, "bwd_wh": self.bwd.wh, "bwd_b": self.bwd.b,
        }

    def encode(self, seq: Tensor) -> Tensor:
        """(n, e) -> (n, 2*hidden); zero initial states in both directions."""
        n, e = seq.shape
        if e != self.input_dim:
            raise ValueError(f"sequence dim {e} does not match encoder input dim {self.input_dim}")
        rows = unstack_rows(seq)
        fwd_states = self.fwd.run(rows)
        bwd_states = self.bwd.run(rows[::-1])[::-1]
        return stack_rows([concat([f, b]) for f, b in zip(fwd_states, bwd_states)])
