"""Token sequences to contextual encodings: embeddings + bidirectional GRU.

Each position i of a sequence maps to the concatenation of a left-to-right
GRU state and a right-to-left GRU state, both started from zero. Batches
are padded row-wise; padded steps are skipped with a row select so valid
positions come out bit-identical to the unpadded layout.
"""

from dataclasses import dataclass

import numpy as np

from .autograd import (Tensor, concat, dropout, embed, gru_mix, gru_reset,
                       linear2, stack_steps, where_rows)
from .errors import ContractError, DimensionError


@dataclass
class EmbeddingTable:
    """Word embedding matrix; row v is the vector for token id v."""

    matrix: Tensor  # (|V|, d)

    def __post_init__(self):
        if self.matrix.data.ndim != 2:
            raise DimensionError(
                f"embedding table must be a matrix, got {self.matrix.shape}")

    @property
    def vocab_size(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]

    def lookup(self, ids):
        return embed(self.matrix, ids)


@dataclass
class GRUParams:
    """Bias-free GRU weights: three input maps and three square recurrent maps."""

    in_reset: Tensor   # (h, d)
    in_update: Tensor  # (h, d)
    in_cand: Tensor    # (h, d)
    rec_reset: Tensor  # (h, h)
    rec_update: Tensor  # (h, h)
    rec_cand: Tensor   # (h, h)

    def __post_init__(self):
        h, d = self.in_reset.shape
        for name in ("in_reset", "in_update", "in_cand"):
            if getattr(self, name).shape != (h, d):
                raise DimensionError(f"{name} must have shape {(h, d)}")
        for name in ("rec_reset", "rec_update", "rec_cand"):
            if getattr(self, name).shape != (h, h):
                raise DimensionError(
                    f"{name} must be square {(h, h)}, "
                    f"got {getattr(self, name).shape}")

    @property
    def hidden_size(self):
        return self.in_reset.shape[0]

    @property
    def input_size(self):
        return self.in_reset.shape[1]

    @classmethod
    def zeros(cls, input_size, hidden_size):
        z = lambda *s: Tensor(np.zeros(s))
        return cls(z(hidden_size, input_size), z(hidden_size, input_size),
                   z(hidden_size, input_size), z(hidden_size, hidden_size),
                   z(hidden_size, hidden_size), z(hidden_size, hidden_size))


@dataclass
class EncodedSequence:
    """Contextual encodings for a padded batch of sequences.

    encodings[b, i] = [forward state i, backward state i]; mask marks the
    true (unpadded) positions.
    """

    encodings: Tensor   # (B, n, 2h)
    mask: np.ndarray    # (B, n) bool
    tokens: np.ndarray  # (B, n) int

    @property
    def width(self):
        return self.encodings.shape[2]

    @property
    def lengths(self):
        return self.mask.sum(axis=1)


def gru_step(x, h_prev, params):
    """One GRU update on a batch of rows.

    reset = sigmoid(in_reset x + rec_reset h); update likewise;
    candidate = tanh(in_cand x + rec_cand (reset * h));
    new state = (1 - update) * h + update * candidate.
    """
    pre_r = linear2(x, params.in_reset, h_prev, params.rec_reset)
    pre_u = linear2(x, params.in_update, h_prev, params.rec_update)
    rh = gru_reset(pre_r, h_prev)
    pre_c = linear2(x, params.in_cand, rh, params.rec_cand)
    return gru_mix(pre_u, pre_c, h_prev)


def _run_direction(xs, mask, params, reverse):
    batch = xs[0].shape[0]
    h = Tensor(np.zeros((batch, params.hidden_size)))
    n = len(xs)
    states = [None] * n
    order = range(n - 1, -1, -1) if reverse else range(n)
    for i in order:
        nxt = gru_step(xs[i], h, params)
        col = mask[:, i]
        if not col.all():
            nxt = where_rows(col, nxt, h)
        states[i] = nxt
        h = nxt
    return states


def encode_bidirectional(tokens, table, fwd, bwd, dropout_rate=0.0,
                         training=False, rng=None, lengths=None):
    """Encode a (batch of) token id sequence(s) into an EncodedSequence.

    A 1-D id sequence is treated as a batch of one. ``lengths`` gives the
    true length per row when trailing padding is present; both GRU
    directions run from a zero state over exactly the true length.
    Dropout is applied to the input embeddings at train time only, with
    inverted scaling.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2:
        raise DimensionError(f"token ids must be 1-D or 2-D, got {tokens.shape}")
    batch, n = tokens.shape
    if n == 0 or batch == 0:
        raise ContractError("cannot encode an empty sequence")
    if lengths is None:
        lengths = np.full(batch, n, dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > n:
            raise ContractError(
                f"lengths must lie in [1, {n}] per row, got {lengths}")
    mask = np.arange(n)[None, :] < lengths[:, None]
    if fwd.hidden_size != bwd.hidden_size:
        raise DimensionError(
            f"direction sizes disagree: {fwd.hidden_size} vs {bwd.hidden_size}")

    use_dropout = training and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ContractError("dropout at train time needs an rng")
    xs = []
    for i in range(n):
        x = table.lookup(tokens[:, i])
        if use_dropout:
            x = dropout(x, dropout_rate, rng)
        xs.append(x)

    fwd_states = _run_direction(xs, mask, fwd, reverse=False)
    bwd_states = _run_direction(xs, mask, bwd, reverse=True)
    enc = concat([stack_steps(fwd_states), stack_steps(bwd_states)], axis=2)
    return EncodedSequence(encodings=enc, mask=mask, tokens=tokens)
