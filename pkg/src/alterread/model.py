"""The assembled model: every trainable tensor plus the batch forward pass."""

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, mul, rowsum, mean_all
from .encoder import EmbeddingTable, GRUParams, encode_bidirectional
from .errors import ConfigError
from .inference import AttentionParams, FeedForward, GateParams, run_inference
from .prediction import nll_loss, score_candidates

_GRU_FIELDS = ("in_reset", "in_update", "in_cand",
               "rec_reset", "rec_update", "rec_cand")
_ATT_FIELDS = ("query_key_map", "query_key_bias", "doc_key_map", "doc_key_bias")
_FF_FIELDS = ("hidden_w", "hidden_b", "out_w", "out_b")


@dataclass
class ModelParams:
    """Every trainable array, grouped by role.

    The query and document encoders have separate GRU weights but share
    one embedding table.
    """

    embedding: Tensor        # (|V|, d)
    query_fwd: GRUParams
    query_bwd: GRUParams
    doc_fwd: GRUParams
    doc_bwd: GRUParams
    attention: AttentionParams
    gates: GateParams
    inference_gru: GRUParams  # input 4h, state s
    init_state: Tensor        # (s,)

    @property
    def vocab_size(self):
        return self.embedding.shape[0]

    @property
    def embed_dim(self):
        return self.embedding.shape[1]

    @property
    def hidden_size(self):
        return self.query_fwd.hidden_size

    @property
    def state_size(self):
        return self.inference_gru.hidden_size

    def named(self):
        """Deterministically ordered {name: Tensor} over all parameters."""
        out = {"embedding": self.embedding}
        for prefix, gru in (("query_fwd", self.query_fwd),
                            ("query_bwd", self.query_bwd),
                            ("doc_fwd", self.doc_fwd),
                            ("doc_bwd", self.doc_bwd)):
            for f in _GRU_FIELDS:
                out[f"{prefix}.{f}"] = getattr(gru, f)
        for f in _ATT_FIELDS:
            out[f"attention.{f}"] = getattr(self.attention, f)
        for side, ff in (("query", self.gates.query_gate),
                         ("doc", self.gates.doc_gate)):
            for f in _FF_FIELDS:
                out[f"gates.{side}.{f}"] = getattr(ff, f)
        for f in _GRU_FIELDS:
            out[f"inference.{f}"] = getattr(self.inference_gru, f)
        out["init_state"] = self.init_state
        return out

    @classmethod
    def from_arrays(cls, arrays):
        """Rebuild from a {name: ndarray} mapping (checkpoint load path)."""
        def take(name):
            try:
                return Tensor(arrays[name], requires_grad=True)
            except KeyError:
                raise ConfigError(f"checkpoint is missing tensor {name!r}") from None

        def gru(prefix):
            return GRUParams(*(take(f"{prefix}.{f}") for f in _GRU_FIELDS))

        def ff(side):
            return FeedForward(*(take(f"gates.{side}.{f}") for f in _FF_FIELDS))

        return cls(
            embedding=take("embedding"),
            query_fwd=gru("query_fwd"), query_bwd=gru("query_bwd"),
            doc_fwd=gru("doc_fwd"), doc_bwd=gru("doc_bwd"),
            attention=AttentionParams(*(take(f"attention.{f}")
                                        for f in _ATT_FIELDS)),
            gates=GateParams(ff("query"), ff("doc")),
            inference_gru=gru("inference"),
            init_state=take("init_state"),
        )


def forward_batch(params, batch, steps, dropout_rate=0.0, training=False,
                  fixed_query=False, rng=None):
    """Encode both sides once, run the inference loop, reduce to a loss.

    Returns (mean negative log answer probability, trace, per-example
    answer masses).
    """
    table = EmbeddingTable(params.embedding)
    q_enc = encode_bidirectional(
        batch.query_ids, table, params.query_fwd, params.query_bwd,
        dropout_rate, training, rng, lengths=batch.query_lengths)
    d_enc = encode_bidirectional(
        batch.doc_ids, table, params.doc_fwd, params.doc_bwd,
        dropout_rate, training, rng, lengths=batch.doc_lengths)
    trace = run_inference(q_enc, d_enc, params, steps, fixed_query,
                          dropout_rate, training, rng)
    masses = rowsum(mul(trace.final_doc_weights, Tensor(batch.answer_indicator)))
    loss = mean_all(nll_loss(masses))
    return loss, trace, masses


def score_batch(params, batch, steps, fixed_query=False):
    """Evaluation pass: per-example candidate masses and predictions.

    Runs without dropout; meant to be called outside any recording graph.
    Returns a list of (predicted token id, masses ndarray) rows.
    """
    table = EmbeddingTable(params.embedding)
    q_enc = encode_bidirectional(batch.query_ids, table, params.query_fwd,
                                 params.query_bwd, lengths=batch.query_lengths)
    d_enc = encode_bidirectional(batch.doc_ids, table, params.doc_fwd,
                                 params.doc_bwd, lengths=batch.doc_lengths)
    trace = run_inference(q_enc, d_enc, params, steps, fixed_query)
    weights = trace.final_doc_weights.data
    results = []
    for b in range(weights.shape[0]):
        masses = score_candidates(weights[b], batch.doc_ids[b],
                                  batch.candidates[b], batch.source_ids[b])
        results.append((batch.candidates[b][int(np.argmax(masses))], masses))
    return results
