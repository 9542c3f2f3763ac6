"""Checkpoint container: magic "AAIR", a version word, a key=value text
header (hyperparameters, ablation flag, vocabulary), then named float64
tensor records for parameters and optimizer moments. Round-trips are
bit-exact.
"""

import io
import math
import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from .data import RESERVED_TOKENS, Vocabulary
from .errors import ConfigError, ContractError, IOFailure
from .model import ModelParams
from .training import HyperParams, OptimizerState

MAGIC = b"AAIR"
VERSION = 1

_M_PREFIX = "opt.m."
_V_PREFIX = "opt.v."
_SCALARS = ("opt.step", "opt.lr", "opt.best_accuracy")


@dataclass
class Checkpoint:
    hyper: HyperParams
    fixed_query: bool
    vocab: Vocabulary
    params: ModelParams
    opt_state: OptimizerState


def _header_text(hyper, fixed_query, vocab):
    lines = []
    for f in fields(hyper):
        value = getattr(hyper, f.name)
        lines.append(f"{f.name}={value!r}")
    lines.append(f"fixed_query_attention={int(fixed_query)}")
    for tok in vocab.id_to_token[3:]:
        if any(ch.isspace() for ch in tok):
            raise ContractError(f"token {tok!r} contains whitespace")
    lines.append("vocab=" + " ".join(vocab.id_to_token[3:]))
    return "\n".join(lines) + "\n"


def _write_record(fh, name, array):
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    arr = np.asarray(array, dtype="<f8")  # keeps rank 0 for scalar records
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.tobytes())


def save_checkpoint(path, hyper, params, state, vocab, fixed_query=False):
    data = checkpoint_bytes(hyper, params, state, vocab, fixed_query)
    with open(path, "wb") as fh:
        fh.write(data)


def checkpoint_bytes(hyper, params, state, vocab, fixed_query=False):
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<H", VERSION))
    header = _header_text(hyper, fixed_query, vocab).encode("utf-8")
    fh.write(struct.pack("<I", len(header)))
    fh.write(header)
    named = params.named()
    for name, tensor in named.items():
        _write_record(fh, name, tensor.data)
    for name in named:
        _write_record(fh, _M_PREFIX + name, state.moment1[name])
    for name in named:
        _write_record(fh, _V_PREFIX + name, state.moment2[name])
    _write_record(fh, "opt.step", np.float64(state.step))
    _write_record(fh, "opt.lr", np.float64(state.lr))
    _write_record(fh, "opt.best_accuracy", np.float64(state.best_accuracy))
    return fh.getvalue()


class _Reader:
    def __init__(self, data, name):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ConfigError(f"{self.name}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    @property
    def exhausted(self):
        return self.pos >= len(self.data)


def _read_records(r):
    records = {}
    while not r.exhausted:
        (nlen,) = struct.unpack("<H", r.take(2))
        name = r.take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1))
        dims = tuple(struct.unpack("<I", r.take(4))[0] for _ in range(rank))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims)
        if name in records:
            raise ConfigError(f"{r.name}: duplicate tensor record {name!r}")
        records[name] = values.copy()
    return records


_INT_FIELDS = {"embed_dim", "hidden_size", "state_size", "steps",
               "batch_size", "eval_window", "max_epochs", "seed"}


def _parse_header(text, name):
    pairs = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{name}: malformed header line {line!r}")
        pairs[key] = value
    try:
        hyper_kwargs = {}
        for f in fields(HyperParams):
            raw = pairs.pop(f.name)
            hyper_kwargs[f.name] = int(raw) if f.name in _INT_FIELDS \
                else float(raw)
        hyper = HyperParams(**hyper_kwargs)
        fixed_query = bool(int(pairs.pop("fixed_query_attention")))
        vocab = Vocabulary(list(RESERVED_TOKENS) + pairs.pop("vocab").split())
    except KeyError as missing:
        raise ConfigError(f"{name}: header is missing {missing}") from None
    return hyper, fixed_query, vocab


def load_checkpoint(path):
    if not os.path.exists(path):
        raise IOFailure(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, os.fspath(path))
    if r.take(4) != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", r.take(2))
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", r.take(4))
    hyper, fixed_query, vocab = _parse_header(
        r.take(hlen).decode("utf-8"), os.fspath(path))
    records = _read_records(r)

    step = int(records.pop("opt.step", np.float64(0)))
    lr = float(records.pop("opt.lr", np.float64(hyper.learning_rate)))
    best = float(records.pop("opt.best_accuracy", np.float64(-math.inf)))
    moment1, moment2, arrays = {}, {}, {}
    for name, arr in records.items():
        if name.startswith(_M_PREFIX):
            moment1[name[len(_M_PREFIX):]] = arr
        elif name.startswith(_V_PREFIX):
            moment2[name[len(_V_PREFIX):]] = arr
        else:
            arrays[name] = arr
    params = ModelParams.from_arrays(arrays)
    expected = set(params.named())
    if set(arrays) != expected:
        extra = set(arrays) - expected
        raise ConfigError(f"{path}: unexpected tensor records {sorted(extra)}")
    if set(moment1) != expected or set(moment2) != expected:
        raise ConfigError(f"{path}: optimizer moments incomplete")
    if vocab.size != params.vocab_size:
        raise ConfigError(
            f"{path}: vocabulary of {vocab.size} tokens does not match "
            f"embedding table of {params.vocab_size} rows")
    state = OptimizerState(moment1=moment1, moment2=moment2, step=step,
                           lr=lr, decay=hyper.lr_decay, best_accuracy=best)
    return Checkpoint(hyper=hyper, fixed_query=fixed_query, vocab=vocab,
                      params=params, opt_state=state)
