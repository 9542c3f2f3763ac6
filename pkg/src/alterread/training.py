"""Training recipe: initialization, ADAM with gradient clipping, plateau
learning-rate decay, periodic validation and best-checkpoint persistence.

Everything is driven by explicit seeds; a run with the same HyperParams is
bit-reproducible in single-threaded mode.
"""

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import kernels
from .autograd import Graph, Tensor
from .data import make_batches
from .encoder import GRUParams
from .errors import ContractError, DimensionError, NumericFault
from .inference import AttentionParams, FeedForward, GateParams
from .model import ModelParams, forward_batch, score_batch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class HyperParams:
    embed_dim: int = 32          # d
    hidden_size: int = 32        # encoder h (encodings are 2h wide)
    state_size: int = 64         # inference state s
    steps: int = 3               # inference steps T
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 0.8
    eval_window: int = 157       # batches between validations
    grad_clip: float = 5.0
    dropout: float = 0.0
    embed_l2: float = 1e-4
    max_epochs: int = 10
    seed: int = 1

    def __post_init__(self):
        for f in ("embed_dim", "hidden_size", "state_size", "steps",
                  "batch_size", "eval_window", "max_epochs"):
            if getattr(self, f) < 1:
                raise ContractError(f"{f} must be >= 1, got {getattr(self, f)}")
        for f in ("learning_rate", "lr_decay", "grad_clip"):
            if getattr(self, f) <= 0:
                raise ContractError(f"{f} must be positive, got {getattr(self, f)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0,1), got {self.dropout}")
        if self.embed_l2 < 0:
            raise ContractError(f"embed_l2 must be >= 0, got {self.embed_l2}")
        if self.seed < 0:
            raise ContractError(f"seed must be >= 0, got {self.seed}")

    def override(self, **kwargs):
        return replace(self, **kwargs)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


PROFILES = {
    # the robust full-scale setting
    "paper": HyperParams(embed_dim=384, hidden_size=128, state_size=512,
                         steps=8, batch_size=32, learning_rate=1e-3,
                         lr_decay=0.8, eval_window=2000, grad_clip=5.0,
                         dropout=0.2, embed_l2=1e-4, max_epochs=10, seed=1),
    # small enough to train and verify on one CPU core in minutes
    "desk": HyperParams(embed_dim=32, hidden_size=32, state_size=64,
                        steps=3, batch_size=32, learning_rate=1e-3,
                        lr_decay=0.8, eval_window=157, grad_clip=5.0,
                        dropout=0.0, embed_l2=1e-4, max_epochs=10, seed=1),
}


def _orthogonal(rng, n):
    """Orthogonal factor of a QR decomposition of a standard normal draw."""
    a = rng.normal(0.0, 1.0, (n, n))
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    return q * np.where(d == 0.0, 1.0, np.sign(d))


def init_params(hyper, vocab_size, seed=None):
    """Fresh model parameters.

    Non-recurrent weights are N(0, 0.05) draws; every square recurrent
    matrix is orthogonal; biases and the initial inference state start at
    zero.
    """
    if vocab_size < 3:
        raise ContractError(f"vocabulary too small: {vocab_size}")
    rng = np.random.default_rng(hyper.seed if seed is None else seed)
    d, h, s = hyper.embed_dim, hyper.hidden_size, hyper.state_size

    def normal(*shape):
        return Tensor(rng.normal(0.0, 0.05, shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def gru(input_size, hidden):
        return GRUParams(
            in_reset=normal(hidden, input_size),
            in_update=normal(hidden, input_size),
            in_cand=normal(hidden, input_size),
            rec_reset=Tensor(_orthogonal(rng, hidden), requires_grad=True),
            rec_update=Tensor(_orthogonal(rng, hidden), requires_grad=True),
            rec_cand=Tensor(_orthogonal(rng, hidden), requires_grad=True),
        )

    def ff():
        return FeedForward(hidden_w=normal(2 * h, s + 6 * h),
                           hidden_b=zeros(2 * h),
                           out_w=normal(2 * h, 2 * h),
                           out_b=zeros(2 * h))

    return ModelParams(
        embedding=normal(vocab_size, d),
        query_fwd=gru(d, h), query_bwd=gru(d, h),
        doc_fwd=gru(d, h), doc_bwd=gru(d, h),
        attention=AttentionParams(query_key_map=normal(2 * h, s),
                                  query_key_bias=zeros(2 * h),
                                  doc_key_map=normal(2 * h, s + 2 * h),
                                  doc_key_bias=zeros(2 * h)),
        gates=GateParams(ff(), ff()),
        inference_gru=gru(4 * h, s),
        init_state=zeros(s),
    )


@dataclass
class OptimizerState:
    moment1: dict
    moment2: dict
    step: int
    lr: float
    decay: float
    best_accuracy: float = -math.inf

    @classmethod
    def create(cls, params, hyper):
        named = params.named()
        return cls(moment1={k: np.zeros_like(t.data) for k, t in named.items()},
                   moment2={k: np.zeros_like(t.data) for k, t in named.items()},
                   step=0, lr=hyper.learning_rate, decay=hyper.lr_decay)


def named_grads(params, tensor_grads):
    """Re-key a backward() result {Tensor: grad} by parameter name."""
    return {name: tensor_grads[t]
            for name, t in params.named().items() if t in tensor_grads}


def clip_gradients(grads, max_norm=5.0):
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds
    max_norm; leave them untouched (bitwise) otherwise."""
    total = 0.0
    for g in grads.values():
        total += kernels.sq_norm(g)
    if not math.isfinite(total):
        raise NumericFault("non-finite gradient norm")
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return grads


def adam_step(params, grads, state, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
              eps=ADAM_EPS, embed_l2=0.0):
    """One bias-corrected ADAM update over every parameter, in place.

    A parameter absent from ``grads`` is treated as zero-gradient. The
    embedding L2 penalty enters here as an added 2*coeff*X term.
    """
    state.step += 1
    corr1 = 1.0 - beta1 ** state.step
    corr2 = 1.0 - beta2 ** state.step
    for name, tensor in params.named().items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        elif g.shape != tensor.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} of shape {tensor.data.shape}")
        if name == "embedding" and embed_l2 > 0.0:
            g = g + (2.0 * embed_l2) * tensor.data
        kernels.adam_update(tensor.data, g, state.moment1[name],
                            state.moment2[name], state.lr, beta1, beta2,
                            eps, corr1, corr2)
    return state


def lr_plateau_decay(state, validation_accuracy, window_batches=None):
    """Multiply the learning rate by the decay factor whenever validation
    accuracy fails to improve on the best seen so far."""
    if validation_accuracy > state.best_accuracy:
        state.best_accuracy = validation_accuracy
    else:
        state.lr *= state.decay
    return state


@dataclass
class WindowRecord:
    index: int
    batches: int
    train_loss: float
    val_accuracy: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    windows: list
    best_accuracy: float
    checkpoint_path: str = None


def evaluate_accuracy(params, batches, steps, fixed_query=False):
    """Fraction of examples whose argmax candidate is the answer."""
    correct = 0
    total = 0
    for batch in batches:
        for b, (pred, _) in enumerate(score_batch(params, batch, steps,
                                                  fixed_query)):
            correct += int(pred == batch.answers[b])
            total += 1
    return correct / max(total, 1)


def train(train_examples, valid_examples, hyper, vocab=None,
          fixed_query=False, checkpoint_path=None, on_window=None):
    """Run the full optimization loop.

    Per batch: forward (encode once per side, inference, pointer-sum loss
    averaged over the batch), backward, global-norm clip, ADAM step. Every
    ``eval_window`` batches: validation accuracy, plateau decay, and a
    checkpoint dump whenever the accuracy improves (requires ``vocab``
    and ``checkpoint_path``).
    """
    if not train_examples:
        raise ContractError("empty training set")
    if checkpoint_path is not None and vocab is None:
        raise ContractError("persisting checkpoints requires the vocabulary")

    root = np.random.SeedSequence(hyper.seed)
    init_seq, shuffle_root, dropout_seq = root.spawn(3)
    params = init_params(hyper, _required_vocab_size(train_examples, vocab),
                         seed=init_seq)
    state = OptimizerState.create(params, hyper)
    dropout_rng = np.random.default_rng(dropout_seq)

    valid_batches = make_batches(valid_examples, hyper.batch_size) \
        if valid_examples else []
    windows = []
    seen = 0
    loss_sum = 0.0
    loss_count = 0

    for _epoch in range(hyper.max_epochs):
        epoch_seq = shuffle_root.spawn(1)[0]
        for batch in make_batches(train_examples, hyper.batch_size,
                                  seed=epoch_seq, shuffle=True):
            with Graph() as graph:
                loss, _, _ = forward_batch(
                    params, batch, hyper.steps, dropout_rate=hyper.dropout,
                    training=True, fixed_query=fixed_query, rng=dropout_rng)
                grads = named_grads(params, graph.backward(loss))
            clip_gradients(grads, hyper.grad_clip)
            adam_step(params, grads, state, embed_l2=hyper.embed_l2)
            loss_sum += loss.item()
            loss_count += 1
            seen += 1
            if seen % hyper.eval_window == 0 and valid_batches:
                acc = evaluate_accuracy(params, valid_batches, hyper.steps,
                                        fixed_query)
                record = WindowRecord(index=len(windows) + 1, batches=seen,
                                      train_loss=loss_sum / loss_count,
                                      val_accuracy=acc, lr=state.lr)
                windows.append(record)
                loss_sum = 0.0
                loss_count = 0
                improved = acc > state.best_accuracy
                if improved and checkpoint_path is not None:
                    from .checkpoint import save_checkpoint
                    save_checkpoint(checkpoint_path, hyper, params, state,
                                    vocab, fixed_query)
                lr_plateau_decay(state, acc, hyper.eval_window)
                if on_window is not None:
                    on_window(record)

    if checkpoint_path is not None and not windows:
        from .checkpoint import save_checkpoint
        save_checkpoint(checkpoint_path, hyper, params, state, vocab,
                        fixed_query)
    best = state.best_accuracy if windows else -math.inf
    return TrainResult(params=params, state=state, windows=windows,
                       best_accuracy=best, checkpoint_path=checkpoint_path)


def _required_vocab_size(examples, vocab):
    if vocab is not None:
        return vocab.size
    top = 0
    for ex in examples:
        top = max(top, int(ex.document.max()), int(ex.query.max()))
    return top + 1
