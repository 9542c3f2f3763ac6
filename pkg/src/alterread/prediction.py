"""Answer prediction from final document attention weights.

A candidate's probability is the summed attention mass over every
position where it occurs; normalization is over all document positions,
never re-normalized over the candidate set.
"""

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, mul, neg_log, sum_all
from .errors import BoundsError, ContractError, DataIntegrityError

LOG_FLOOR = 1e-12


@dataclass
class CandidateScores:
    """Pointer-sum mass per candidate, in candidate-list order."""

    candidates: tuple        # token ids
    masses: np.ndarray       # same length, each in [0, 1]
    predicted_index: int

    @property
    def predicted(self):
        return self.candidates[self.predicted_index]


def pointer_sum(final_weights, positions):
    """Sum the attention weights at the given document positions.

    Differentiable through the weights; the position set is data.
    """
    positions = sorted(set(int(p) for p in positions))
    if not positions:
        raise ContractError("pointer_sum over an empty position set")
    if final_weights.data.ndim != 1:
        raise ContractError(
            f"pointer_sum takes a weight vector, got shape {final_weights.shape}")
    n = final_weights.shape[0]
    if positions[0] < 0 or positions[-1] >= n:
        raise BoundsError(
            f"position {positions[-1] if positions[-1] >= n else positions[0]} "
            f"outside document of length {n}")
    indicator = np.zeros(n)
    indicator[positions] = 1.0
    return sum_all(mul(final_weights, Tensor(indicator)))


def nll_loss(prob):
    """-log(prob + floor); finite for any prob the pointer sum can emit."""
    return neg_log(prob, LOG_FLOOR)


def occurrence_positions(document, token_id):
    """All positions of a token id in a document id sequence."""
    document = np.asarray(document)
    return np.flatnonzero(document == token_id)


def score_candidates(final_weights_row, document, candidates, source_id=""):
    """Pointer-sum mass for every candidate of one example.

    ``final_weights_row`` is a plain (|D|,) array; every candidate must
    occur in the document at least once.
    """
    masses = np.empty(len(candidates))
    for j, cand in enumerate(candidates):
        pos = occurrence_positions(document, cand)
        if pos.size == 0:
            raise DataIntegrityError(
                f"candidate {cand} never occurs in document"
                + (f" of example {source_id}" if source_id else ""))
        masses[j] = final_weights_row[pos].sum()
    return masses


def predict_answer(trace, example):
    """Score every candidate from the last-step document weights.

    Works on a single-example trace; ties break to the lowest candidate
    index. Returns (predicted token id, CandidateScores).
    """
    weights = trace.final_doc_weights.data
    if weights.ndim == 2:
        if weights.shape[0] != 1:
            raise ContractError(
                "predict_answer takes a single-example trace; "
                f"got batch of {weights.shape[0]}")
        weights = weights[0]
    masses = score_candidates(weights, example.document, example.candidates,
                              example.source_id)
    idx = int(np.argmax(masses))
    scores = CandidateScores(tuple(example.candidates), masses, idx)
    return scores.predicted, scores


def ensemble_average(member_scores):
    """Arithmetic mean of per-candidate masses across ensemble members."""
    if not member_scores:
        raise ContractError("ensemble of zero members")
    first = member_scores[0]
    for m in member_scores[1:]:
        if m.candidates != first.candidates:
            raise ContractError(
                f"ensemble members score different candidate sets: "
                f"{first.candidates} vs {m.candidates}")
    mean = np.mean([m.masses for m in member_scores], axis=0)
    return CandidateScores(first.candidates, mean, int(np.argmax(mean)))
