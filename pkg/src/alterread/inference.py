"""The alternating attention loop: query glimpse, conditioned document
glimpse, gated reset, recurrent state update, repeated for a fixed number
of steps over encodings that are computed once.
"""

from dataclasses import dataclass, field

import numpy as np

from .autograd import (Tensor, broadcast_rows, concat, dropout, linear,
                       masked_softmax, mul, rowwise_dot, sigmoid, tanh,
                       weighted_sum)
from .encoder import gru_step
from .errors import ContractError, DimensionError


@dataclass
class AttentionParams:
    """Bilinear attention terms for both sides.

    The query key is query_key_map @ state + query_key_bias (a 2h vector);
    the document key conditions on [state, query glimpse].
    """

    query_key_map: Tensor   # (2h, s)
    query_key_bias: Tensor  # (2h,)
    doc_key_map: Tensor     # (2h, s + 2h)
    doc_key_bias: Tensor    # (2h,)

    def __post_init__(self):
        two_h = self.query_key_map.shape[0]
        s = self.query_key_map.shape[1]
        if self.query_key_bias.shape != (two_h,):
            raise DimensionError(
                f"query_key_bias must be ({two_h},), got {self.query_key_bias.shape}")
        if self.doc_key_map.shape != (two_h, s + two_h):
            raise DimensionError(
                f"doc_key_map must be ({two_h}, {s + two_h}), "
                f"got {self.doc_key_map.shape}")
        if self.doc_key_bias.shape != (two_h,):
            raise DimensionError(
                f"doc_key_bias must be ({two_h},), got {self.doc_key_bias.shape}")


@dataclass
class FeedForward:
    """2-layer network: tanh hidden layer, sigmoid output, both biased."""

    hidden_w: Tensor  # (2h, s + 6h)
    hidden_b: Tensor  # (2h,)
    out_w: Tensor     # (2h, 2h)
    out_b: Tensor     # (2h,)

    def __call__(self, x):
        hidden = tanh(linear(x, self.hidden_w, self.hidden_b))
        return sigmoid(linear(hidden, self.out_w, self.out_b))


@dataclass
class GateParams:
    """Independent reset networks for the query and document glimpses."""

    query_gate: FeedForward
    doc_gate: FeedForward


@dataclass
class InferenceTrace:
    """Per-step attention weights, glimpses and gate activations."""

    query_weights: list = field(default_factory=list)   # each (B, |Q|)
    doc_weights: list = field(default_factory=list)     # each (B, |D|)
    query_glimpses: list = field(default_factory=list)  # each (B, 2h)
    doc_glimpses: list = field(default_factory=list)
    query_gates: list = field(default_factory=list)     # each (B, 2h)
    doc_gates: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.doc_weights)

    @property
    def final_doc_weights(self):
        return self.doc_weights[-1]


def uniform_weights(mask):
    """Exact 1/length weights over unmasked positions, as a constant."""
    lengths = mask.sum(axis=1, keepdims=True)
    return Tensor(np.where(mask, 1.0 / lengths, 0.0))


def _attended(enc, key, attention_dropout, training, rng):
    scored = enc.encodings
    if training and attention_dropout > 0.0:
        scored = dropout(scored, attention_dropout, rng)
    logits = rowwise_dot(scored, key)
    weights = masked_softmax(logits, enc.mask)
    return weighted_sum(weights, enc.encodings), weights


def query_attentive_read(query_enc, s_prev, params, fixed_uniform=False,
                         dropout_rate=0.0, training=False, rng=None):
    """Attend the query encodings given the inference state.

    Returns (glimpse, weights). With fixed_uniform the weights are exactly
    1/|Q| at every unmasked position and no logits are computed.
    """
    if fixed_uniform:
        weights = uniform_weights(query_enc.mask)
        return weighted_sum(weights, query_enc.encodings), weights
    key = linear(s_prev, params.query_key_map, params.query_key_bias)
    return _attended(query_enc, key, dropout_rate, training, rng)


def document_attentive_read(doc_enc, s_prev, query_glimpse, params,
                            dropout_rate=0.0, training=False, rng=None):
    """Attend the document encodings given the state and query glimpse."""
    key_in = concat([s_prev, query_glimpse], axis=1)
    key = linear(key_in, params.doc_key_map, params.doc_key_bias)
    return _attended(doc_enc, key, dropout_rate, training, rng)


def gate(s_prev, query_glimpse, doc_glimpse, params, dropout_rate=0.0,
         training=False, rng=None):
    """Component-wise reset factors for both glimpses.

    Both networks read [state, query glimpse, document glimpse, product of
    the glimpses]; the product term exposes how well the glimpses match.
    Dropout applies to this shared input at train time.
    """
    gate_in = concat(
        [s_prev, query_glimpse, doc_glimpse, mul(query_glimpse, doc_glimpse)],
        axis=1)
    if training and dropout_rate > 0.0:
        gate_in = dropout(gate_in, dropout_rate, rng)
    return params.query_gate(gate_in), params.doc_gate(gate_in)


def run_inference(query_enc, doc_enc, params, steps, fixed_uniform=False,
                  dropout_rate=0.0, training=False, rng=None):
    """Run the alternating attention loop for a fixed number of steps.

    ``params`` provides attention, gates, inference_gru and init_state
    (ModelParams satisfies this). The returned trace holds every step;
    its last document weight vector is what prediction consumes.
    """
    if steps < 1:
        raise ContractError(f"inference needs at least one step, got {steps}")
    batch = doc_enc.encodings.shape[0]
    if query_enc.encodings.shape[0] != batch:
        raise DimensionError(
            f"query batch {query_enc.encodings.shape[0]} does not match "
            f"document batch {batch}")
    state = broadcast_rows(params.init_state, batch)
    trace = InferenceTrace()
    for _ in range(steps):
        q_glimpse, q_weights = query_attentive_read(
            query_enc, state, params.attention, fixed_uniform,
            dropout_rate, training, rng)
        d_glimpse, d_weights = document_attentive_read(
            doc_enc, state, q_glimpse, params.attention,
            dropout_rate, training, rng)
        r_q, r_d = gate(state, q_glimpse, d_glimpse, params.gates,
                        dropout_rate, training, rng)
        update = concat([mul(r_q, q_glimpse), mul(r_d, d_glimpse)], axis=1)
        state = gru_step(update, state, params.inference_gru)
        trace.query_weights.append(q_weights)
        trace.doc_weights.append(d_weights)
        trace.query_glimpses.append(q_glimpse)
        trace.doc_glimpses.append(d_glimpse)
        trace.query_gates.append(r_q)
        trace.doc_gates.append(r_d)
    return trace
