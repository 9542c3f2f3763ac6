"""Corpus ingestion: CBT blocks, CNN question files, a seeded synthetic
Cloze generator, vocabulary construction and padded batching.

Both real corpora ship pre-tokenized, so tokenization is whitespace
splitting with no further normalization. The query placeholder is
normalized to one canonical surface token at parse time.
"""

import io
import os
import re
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import (ContractError, DataIntegrityError, IOFailure,
                     ParseError)

PAD_ID = 0
UNK_ID = 1
PLACEHOLDER_ID = 2
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PLACEHOLDER_TOKEN = "@placeholder"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, PLACEHOLDER_TOKEN)

CBT_PLACEHOLDER = "XXXXX"
CBT_CANDIDATES = 10
SYNTHETIC_MARKER = "cue"

MAX_DOC_TOKENS = 2000  # guard against pathological documents, never truncate


@dataclass
class RawExample:
    """One comprehension instance in surface-token form."""

    query: list          # tokens, contains PLACEHOLDER_TOKEN exactly once
    document: list
    candidates: list     # distinct tokens, each occurring in document
    answer: str
    source_id: str

    def validate(self):
        if self.query.count(PLACEHOLDER_TOKEN) != 1:
            raise DataIntegrityError(
                f"{self.source_id}: query must contain the placeholder exactly "
                f"once, found {self.query.count(PLACEHOLDER_TOKEN)}")
        if len(self.candidates) != len(set(self.candidates)):
            raise DataIntegrityError(
                f"{self.source_id}: duplicate candidates")
        if len(self.candidates) < 2:
            raise DataIntegrityError(
                f"{self.source_id}: need at least two candidates")
        if self.answer not in self.candidates:
            raise DataIntegrityError(
                f"{self.source_id}: answer {self.answer!r} not among candidates")
        present = set(self.document)
        for cand in self.candidates:
            if cand not in present:
                raise DataIntegrityError(
                    f"{self.source_id}: candidate {cand!r} never occurs "
                    f"in the document")
        return self


@dataclass
class Example:
    """A comprehension instance over vocabulary ids."""

    query: np.ndarray        # int64, placeholder id exactly once
    document: np.ndarray     # int64
    candidates: list         # >=2 distinct ids
    answer: int
    answer_positions: np.ndarray
    source_id: str

    def validate(self):
        if int((self.query == PLACEHOLDER_ID).sum()) != 1:
            raise DataIntegrityError(
                f"{self.source_id}: encoded query must hold the placeholder "
                f"id exactly once")
        if len(self.candidates) != len(set(self.candidates)):
            raise DataIntegrityError(f"{self.source_id}: duplicate candidate ids")
        if len(self.candidates) < 2:
            raise DataIntegrityError(f"{self.source_id}: need >=2 candidates")
        if self.answer not in self.candidates:
            raise DataIntegrityError(f"{self.source_id}: answer not a candidate")
        if self.answer_positions.size == 0:
            raise DataIntegrityError(
                f"{self.source_id}: answer never occurs in the document")
        if not (self.document[self.answer_positions] == self.answer).all():
            raise DataIntegrityError(
                f"{self.source_id}: answer position set inconsistent")
        doc = set(self.document.tolist())
        for cand in self.candidates:
            if cand not in doc:
                raise DataIntegrityError(
                    f"{self.source_id}: candidate id {cand} absent from document")
        return self


@dataclass
class Vocabulary:
    """Frequency-ranked token ids with fixed reserved slots 0/1/2."""

    id_to_token: list
    token_to_id: dict = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:3]) != RESERVED_TOKENS:
            raise ContractError("vocabulary must start with the reserved tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("vocabulary tokens must be unique")

    @property
    def size(self):
        return len(self.id_to_token)

    def encode_token(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens):
        return np.array([self.encode_token(t) for t in tokens], dtype=np.int64)

    def decode(self, ids):
        return [self.id_to_token[int(i)] for i in ids]


def build_vocab(examples, min_count=1):
    """Frequency-ranked vocabulary over document+query tokens.

    Tokens seen fewer than min_count times map to the unknown id. Ties in
    frequency break lexicographically so the assignment is deterministic.
    """
    counts = Counter()
    for ex in examples:
        for tok in ex.document:
            counts[tok] += 1
        for tok in ex.query:
            if tok != PLACEHOLDER_TOKEN:
                counts[tok] += 1
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_count),
                    key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED_TOKENS) + ranked)


@dataclass
class EncodeReport:
    total: int = 0
    unanswerable: int = 0
    unanswerable_ids: list = field(default_factory=list)


def encode_examples(raws, vocab, max_doc_tokens=MAX_DOC_TOKENS):
    """Map raw examples to id form under a vocabulary.

    Examples whose candidate set hits the unknown id cannot be scored
    faithfully; they are counted (never silently dropped) and returned
    separately via the report.
    """
    out = []
    report = EncodeReport()
    for raw in raws:
        report.total += 1
        if len(raw.document) > max_doc_tokens:
            raise DataIntegrityError(
                f"{raw.source_id}: document of {len(raw.document)} tokens "
                f"exceeds the {max_doc_tokens}-token guard")
        for cand in raw.candidates:
            if cand in RESERVED_TOKENS:
                raise DataIntegrityError(
                    f"{raw.source_id}: reserved token {cand!r} used as candidate")
        cand_ids = [vocab.encode_token(c) for c in raw.candidates]
        if UNK_ID in cand_ids:
            report.unanswerable += 1
            report.unanswerable_ids.append(raw.source_id)
            continue
        doc = vocab.encode(raw.document)
        answer = vocab.encode_token(raw.answer)
        ex = Example(query=vocab.encode(raw.query), document=doc,
                     candidates=cand_ids, answer=answer,
                     answer_positions=np.flatnonzero(doc == answer),
                     source_id=raw.source_id)
        out.append(ex.validate())
    return out, report


# ---------------------------------------------------------------------------
# CBT block format
# ---------------------------------------------------------------------------

def _lines_of(source):
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise IOFailure(f"no such file: {source}")
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read().splitlines(), os.fspath(source)
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return source.read().splitlines(), getattr(source, "name", "<stream>")
    return [str(line).rstrip("\n") for line in source], "<stream>"


def parse_cbt(source, lowercase=False):
    """Parse the 21-line block format: 20 numbered story lines, then a
    query line holding the Cloze query, the answer and a |-separated
    10-candidate list in tab-separated fields."""
    lines, name = _lines_of(source)
    examples = []
    block = []
    block_start = None
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            if not block:
                block_start = lineno
            block.append(line)
        elif block:
            examples.append(_parse_cbt_block(block, block_start, name, lowercase))
            block = []
    if block:
        examples.append(_parse_cbt_block(block, block_start, name, lowercase))
    return examples


def _parse_cbt_block(block, start_line, name, lowercase):
    if len(block) != 21:
        raise ParseError(
            f"{name}: block at line {start_line} has {len(block)} lines, "
            f"expected 21")
    document = []
    for i, line in enumerate(block[:20], start=1):
        prefix, _, rest = line.partition(" ")
        if prefix != str(i):
            raise ParseError(
                f"{name}: block at line {start_line}: expected line number "
                f"{i}, got {prefix!r}")
        document.extend(rest.split())
    last = block[20]
    prefix, _, rest = last.partition(" ")
    if prefix != "21":
        raise ParseError(
            f"{name}: block at line {start_line}: expected line number 21, "
            f"got {prefix!r}")
    fields_ = rest.split("\t")
    if len(fields_) < 3:
        raise ParseError(
            f"{name}: block at line {start_line}: query line needs "
            f"tab-separated query/answer/candidates fields")
    query_text, answer = fields_[0], fields_[1].strip()
    candidates = [c.strip() for c in fields_[-1].split("|") if c.strip()]
    query = query_text.split()
    if query.count(CBT_PLACEHOLDER) != 1:
        raise ParseError(
            f"{name}: block at line {start_line}: query must contain "
            f"{CBT_PLACEHOLDER} exactly once")
    query = [PLACEHOLDER_TOKEN if t == CBT_PLACEHOLDER else t for t in query]
    if lowercase:
        document = [t.lower() for t in document]
        query = [t if t == PLACEHOLDER_TOKEN else t.lower() for t in query]
        answer = answer.lower()
        candidates = [c.lower() for c in candidates]
    if len(candidates) != CBT_CANDIDATES:
        raise ParseError(
            f"{name}: block at line {start_line}: expected "
            f"{CBT_CANDIDATES} candidates, got {len(candidates)}")
    if answer not in candidates:
        raise ParseError(
            f"{name}: block at line {start_line}: answer {answer!r} not "
            f"among candidates")
    raw = RawExample(query=query, document=document, candidates=candidates,
                     answer=answer, source_id=f"{name}:{start_line}")
    return raw.validate()


# ---------------------------------------------------------------------------
# CNN question-file format
# ---------------------------------------------------------------------------

_ENTITY_RE = re.compile(r"^@entity\d+$")


def parse_cnn(source, lowercase=False):
    """Parse one question file: URL, passage, query with @placeholder,
    answer entity, then entity mapping lines, blank-line separated.

    Candidates are the anonymized entities appearing in the passage.
    """
    if isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise IOFailure(f"no such file: {source}")
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
        name = os.path.splitext(os.path.basename(source))[0]
    else:
        text = source.read()
        name = getattr(source, "name", "<stream>")
    sections = [s for s in text.split("\n\n") if s.strip()]
    if len(sections) < 5:
        raise ParseError(
            f"{name}: expected url/passage/question/answer/entity sections, "
            f"got {len(sections)}")
    _url, passage, question, answer = (s.strip() for s in sections[:4])
    mapping_lines = "\n\n".join(sections[4:]).splitlines()
    mapping = {}
    for line in mapping_lines:
        entity, sep, surface = line.partition(":")
        if not sep or not _ENTITY_RE.match(entity.strip()):
            raise ParseError(f"{name}: malformed entity mapping line {line!r}")
        mapping[entity.strip()] = surface
    if lowercase:
        passage = passage.lower()
        question = question.lower()
    document = passage.split()
    query = question.split()
    if query.count(PLACEHOLDER_TOKEN) != 1:
        raise ParseError(
            f"{name}: question must contain {PLACEHOLDER_TOKEN} exactly once")
    answer = answer.strip()
    if not _ENTITY_RE.match(answer):
        raise ParseError(f"{name}: answer {answer!r} is not an entity token")
    seen = set()
    candidates = []
    for tok in document:
        if _ENTITY_RE.match(tok) and tok not in seen:
            seen.add(tok)
            candidates.append(tok)
    candidates.sort(key=lambda t: int(t[len("@entity"):]))
    if answer not in seen:
        raise DataIntegrityError(
            f"{name}: answer entity {answer!r} absent from passage")
    raw = RawExample(query=query, document=document, candidates=candidates,
                     answer=answer, source_id=name)
    return raw.validate()


def parse_cnn_dir(path, lowercase=False):
    """Parse every *.question file under a directory, sorted by name."""
    if not os.path.isdir(path):
        raise IOFailure(f"no such directory: {path}")
    files = sorted(f for f in os.listdir(path) if f.endswith(".question"))
    if not files:
        raise IOFailure(f"no .question files under {path}")
    return [parse_cnn(os.path.join(path, f), lowercase) for f in files]


# ---------------------------------------------------------------------------
# synthetic Cloze benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_examples: int = 5000
    vocab_size: int = 100
    doc_len_range: tuple = (30, 60)
    n_candidates: int = 10
    seed: int = 13
    id_prefix: str = "syn-"

    def __post_init__(self):
        lo, hi = self.doc_len_range
        if self.n_examples < 1:
            raise ContractError("n_examples must be >= 1")
        if hi < lo or lo < self.n_candidates + 3:
            raise ContractError(
                f"doc_len_range {self.doc_len_range} cannot host "
                f"{self.n_candidates} candidates plus the key pattern")
        if self.vocab_size < self.n_candidates + 10:
            raise ContractError(
                f"vocab_size {self.vocab_size} leaves no filler margin over "
                f"{self.n_candidates} candidates")
        if self.n_candidates < 2:
            raise ContractError("need at least two candidates")


def generate_synthetic(config):
    """Seeded corpus where one marker token precedes the answer.

    Each document embeds the key pattern (marker, answer) exactly once;
    distractor candidates land elsewhere, never right after the marker.
    The query repeats the key pattern with the answer replaced by the
    placeholder, so marker lookup solves every example.
    """
    rng = np.random.default_rng(config.seed)
    words = np.array([f"w{i:03d}" for i in range(config.vocab_size)])
    lo, hi = config.doc_len_range
    examples = []
    for i in range(config.n_examples):
        doc_len = int(rng.integers(lo, hi + 1))
        cand_idx = rng.choice(config.vocab_size, config.n_candidates,
                              replace=False)
        candidates = [str(words[j]) for j in cand_idx]
        answer = candidates[int(rng.integers(config.n_candidates))]
        filler = np.delete(words, cand_idx)
        doc = [str(t) for t in
               filler[rng.integers(0, filler.size, doc_len)]]
        key_pos = int(rng.integers(0, doc_len - 1))
        doc[key_pos] = SYNTHETIC_MARKER
        doc[key_pos + 1] = answer
        open_slots = [p for p in range(doc_len) if p not in (key_pos, key_pos + 1)]
        slot_idx = rng.choice(len(open_slots), config.n_candidates - 1,
                              replace=False)
        distractors = [c for c in candidates if c != answer]
        for cand, si in zip(distractors, slot_idx):
            doc[open_slots[si]] = cand
        extra = int(rng.integers(4, 9))
        q_filler = [str(t) for t in filler[rng.integers(0, filler.size, extra)]]
        cut = int(rng.integers(0, extra + 1))
        query = q_filler[:cut] + [SYNTHETIC_MARKER, PLACEHOLDER_TOKEN] \
            + q_filler[cut:]
        raw = RawExample(query=query, document=doc, candidates=candidates,
                         answer=answer,
                         source_id=f"{config.id_prefix}{i:05d}")
        examples.append(raw.validate())
    return examples


def marker_rule_answer(document_tokens):
    """The rule-based solver for the synthetic task: the token after the
    (unique) marker."""
    idx = document_tokens.index(SYNTHETIC_MARKER)
    return document_tokens[idx + 1]


def synthetic_splits(n_train, n_valid, vocab_size=100, doc_len_range=(30, 60),
                     n_candidates=10, seed=13):
    """Disjointly seeded train/valid corpora with split-tagged example ids."""
    train = generate_synthetic(SyntheticConfig(
        n_examples=n_train, vocab_size=vocab_size,
        doc_len_range=doc_len_range, n_candidates=n_candidates,
        seed=seed, id_prefix="train-"))
    valid = generate_synthetic(SyntheticConfig(
        n_examples=n_valid, vocab_size=vocab_size,
        doc_len_range=doc_len_range, n_candidates=n_candidates,
        seed=seed + 1, id_prefix="valid-"))
    return train, valid


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    doc_ids: np.ndarray          # (B, n_d) int64, padded with PAD_ID
    doc_lengths: np.ndarray      # (B,)
    query_ids: np.ndarray        # (B, n_q)
    query_lengths: np.ndarray
    candidates: list             # per-example candidate id lists
    answers: list                # per-example answer id
    answer_positions: list       # per-example position arrays
    answer_indicator: np.ndarray  # (B, n_d) float64, 1.0 at answer positions
    source_ids: list

    @property
    def size(self):
        return self.doc_ids.shape[0]


def _pad(rows):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    return out, np.array([len(r) for r in rows], dtype=np.int64)


def make_batches(examples, batch_size, seed=0, shuffle=False):
    """Deterministically shuffled fixed-size batches, padded per batch;
    the final short batch is kept."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(examples))
    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        doc_ids, doc_lengths = _pad([ex.document for ex in chunk])
        query_ids, query_lengths = _pad([ex.query for ex in chunk])
        indicator = np.zeros(doc_ids.shape, dtype=np.float64)
        for i, ex in enumerate(chunk):
            indicator[i, ex.answer_positions] = 1.0
        batches.append(Batch(
            doc_ids=doc_ids, doc_lengths=doc_lengths,
            query_ids=query_ids, query_lengths=query_lengths,
            candidates=[list(ex.candidates) for ex in chunk],
            answers=[ex.answer for ex in chunk],
            answer_positions=[ex.answer_positions for ex in chunk],
            answer_indicator=indicator,
            source_ids=[ex.source_id for ex in chunk]))
    return batches


# ---------------------------------------------------------------------------
# normalized corpus cache (binary)
# ---------------------------------------------------------------------------

_CORPUS_MAGIC = b"ARDC"
_CORPUS_VERSION = 1


def _w_str(fh, s):
    b = s.encode("utf-8")
    fh.write(struct.pack("<H", len(b)))
    fh.write(b)


def _w_ids(fh, ids):
    arr = np.asarray(ids, dtype="<u4")
    fh.write(struct.pack("<I", arr.size))
    fh.write(arr.tobytes())


def save_corpus(examples, vocab, path):
    """Length-prefixed binary dump of encoded examples plus vocabulary."""
    with open(path, "wb") as fh:
        fh.write(_CORPUS_MAGIC)
        fh.write(struct.pack("<H", _CORPUS_VERSION))
        fh.write(struct.pack("<I", vocab.size - 3))
        for tok in vocab.id_to_token[3:]:
            _w_str(fh, tok)
        fh.write(struct.pack("<I", len(examples)))
        for ex in examples:
            _w_str(fh, ex.source_id)
            _w_ids(fh, ex.query)
            _w_ids(fh, ex.document)
            _w_ids(fh, ex.candidates)
            fh.write(struct.pack("<I", ex.answer))
            _w_ids(fh, ex.answer_positions)


class _Reader:
    def __init__(self, data, name):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ParseError(f"{self.name}: truncated corpus file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u16()).decode("utf-8")

    def ids(self):
        n = self.u32()
        return np.frombuffer(self.take(4 * n), dtype="<u4").astype(np.int64)


def load_corpus(path):
    """Inverse of save_corpus; returns (examples, vocab)."""
    if not os.path.exists(path):
        raise IOFailure(f"no such file: {path}")
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), os.fspath(path))
    if r.take(4) != _CORPUS_MAGIC:
        raise ParseError(f"{path}: not a corpus file (bad magic)")
    if r.u16() != _CORPUS_VERSION:
        raise ParseError(f"{path}: unsupported corpus version")
    tokens = [r.string() for _ in range(r.u32())]
    vocab = Vocabulary(list(RESERVED_TOKENS) + tokens)
    examples = []
    for _ in range(r.u32()):
        source_id = r.string()
        query = r.ids()
        document = r.ids()
        candidates = [int(c) for c in r.ids()]
        answer = r.u32()
        positions = r.ids()
        examples.append(Example(query=query, document=document,
                                candidates=candidates, answer=answer,
                                answer_positions=positions,
                                source_id=source_id).validate())
    return examples, vocab
