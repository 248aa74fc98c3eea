"""Token and position embeddings for entity-pair sentence encoding.

A sentence is mapped to three parallel id sequences: word ids plus, for each
of the two marked entities, the clamped relative distance of every token to
that entity. ``embed`` gathers the three tables and concatenates along the
feature axis, giving each token a d_w + 2 d_p feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataError

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
PAD_ID = 0
UNK_ID = 1
_RESERVED = (PAD_TOKEN, UNK_TOKEN)


class Vocabulary:
    """Token-to-id map with fixed PAD=0 / UNK=1 slots.

    Unknown tokens resolve to UNK rather than raising; the padding slot is
    what sentence encoding fills past the real tokens.
    """

    def __init__(self, tokens=()):
        self._id_of = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        self._tokens = [PAD_TOKEN, UNK_TOKEN]
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        """Insert ``token`` if new; returns its id either way."""
        got = self._id_of.get(token)
        if got is not None:
            return got
        new_id = len(self._tokens)
        self._id_of[token] = new_id
        self._tokens.append(token)
        return new_id

    def id_of(self, token):
        return self._id_of.get(token, UNK_ID)

    def __contains__(self, token):
        return token in self._id_of

    def __len__(self):
        return len(self._tokens)

    @property
    def tokens(self):
        return tuple(self._tokens)

    @classmethod
    def from_corpus(cls, instances):
        """Vocabulary over the sorted set of tokens appearing in ``instances``."""
        seen = set()
        for inst in instances:
            seen.update(inst.tokens)
        seen.difference_update(_RESERVED)
        return cls(sorted(seen))


@dataclass(frozen=True)
class EmbeddingConfig:
    """Dimensions and clipping range of the sentence encoder."""

    word_dim: int = 50
    pos_dim: int = 5
    min_distance: int = -30
    max_distance: int = 30
    sent_len: int = 100

    def __post_init__(self):
        if self.word_dim < 1 or self.pos_dim < 1:
            raise ValueError(f"embedding dims must be positive, got word_dim={self.word_dim} pos_dim={self.pos_dim}")
        if self.min_distance > 0 or self.max_distance < 0:
            raise ValueError(f"distance range [{self.min_distance}, {self.max_distance}] must contain 0")
        if self.sent_len < 1:
            raise ValueError(f"sent_len must be positive, got {self.sent_len}")

    @property
    def num_distances(self):
        return self.max_distance - self.min_distance + 1

    @property
    def concat_dim(self):
        return self.word_dim + 2 * self.pos_dim


@dataclass(frozen=True)
class EncodedInstance:
    """Fixed-length id views of one sentence, ready for table lookup."""

    token_ids: np.ndarray
    pos1_ids: np.ndarray
    pos2_ids: np.ndarray
    label: int
    pair_key: tuple = ("", "")
    original_length: int = 0


def relative_position(index, entity_index, cfg):
    """Clamped signed distance from ``index`` to the entity, shifted to >= 0.

    The raw distance index - entity_index is clipped to
    [min_distance, max_distance] and offset by -min_distance so it indexes a
    table with num_distances rows.
    """
    d = index - entity_index
    d = max(cfg.min_distance, min(cfg.max_distance, d))
    return d - cfg.min_distance


def encode_instance(tokens, e1_idx, e2_idx, label, vocab, cfg, pair_key=("", "")):
    """Encode one sentence to padded/truncated id arrays of length sent_len.

    Tokens past sent_len are dropped; an entity falling in the dropped tail
    is a DataError. Padding slots take the PAD word id and the clamped
    distance their (virtual) index would have, so far-right pads saturate at
    the max distance.
    """
    n = len(tokens)
    if n == 0:
        raise DataError("cannot encode an empty sentence")
    for which, e_idx in (("e1", e1_idx), ("e2", e2_idx)):
        if not 0 <= e_idx < n:
            raise DataError(f"{which} index {e_idx} outside sentence of length {n}")
        if e_idx >= cfg.sent_len:
            raise DataError(f"{which} index {e_idx} beyond sent_len {cfg.sent_len} after truncation")
    token_ids = np.full(cfg.sent_len, PAD_ID, dtype=np.int64)
    kept = min(n, cfg.sent_len)
    for i in range(kept):
        token_ids[i] = vocab.id_of(tokens[i])
    positions = np.arange(cfg.sent_len)
    pos1 = np.clip(positions - e1_idx, cfg.min_distance, cfg.max_distance) - cfg.min_distance
    pos2 = np.clip(positions - e2_idx, cfg.min_distance, cfg.max_distance) - cfg.min_distance
    return EncodedInstance(
        token_ids=token_ids,
        pos1_ids=pos1.astype(np.int64),
        pos2_ids=pos2.astype(np.int64),
        label=int(label),
        pair_key=tuple(pair_key),
        original_length=n,
    )


def encode_corpus(instances, vocab, cfg, schema):
    """Encode every instance; sentences that cannot be encoded are dropped.

    Returns (encoded list, rejected count). Rejection only happens for
    entity indices beyond the truncation horizon; unknown words just map to
    UNK.
    """
    encoded = []
    rejected = 0
    for inst in instances:
        try:
            encoded.append(
                encode_instance(
                    inst.tokens,
                    inst.e1_idx,
                    inst.e2_idx,
                    schema.id_of(inst.relation),
                    vocab,
                    cfg,
                    pair_key=(inst.e1_id, inst.e2_id),
                )
            )
        except DataError:
            rejected += 1
    return encoded, rejected


def load_embeddings(source, expected_dim=None):
    """Read whitespace-separated text vectors: ``token v1 v2 ... vD`` lines.

    ``source`` is a path or an open text handle. An optional first line with
    exactly two integers (count and dimension) is treated as a header. The
    returned table is trainable, row 0 is the all-zero PAD vector, and row 1
    (UNK) is the mean of all loaded vectors. Malformed lines raise DataError
    with a 1-based line number.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        try:
            handle = open(source, "r", encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read embeddings {source}: {exc}") from None
        with handle:
            return load_embeddings(handle, expected_dim=expected_dim)
    lines = iter(enumerate(source, start=1))
    first = next(lines, None)
    if first is None:
        raise DataError("embedding file is empty")
    vocab = Vocabulary()
    vectors = []
    dim = None

    def consume(lineno, line):
        nonlocal dim
        parts = line.split()
        if not parts:
            return
        token, values = parts[0], parts[1:]
        if dim is None:
            if not values:
                raise DataError(f"line {lineno}: no vector components for token {token!r}")
            dim = len(values)
            if expected_dim is not None and dim != expected_dim:
                raise DataError(f"line {lineno}: vectors have {dim} components, expected {expected_dim}")
        if len(values) != dim:
            raise DataError(f"line {lineno}: expected {dim} components, got {len(values)}")
        if token in _RESERVED:
            raise DataError(f"line {lineno}: token {token!r} is reserved")
        if token in vocab:
            raise DataError(f"line {lineno}: duplicate token {token!r}")
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if not np.isfinite(vec).all():
            raise DataError(f"line {lineno}: non-finite component for token {token!r}")
        vocab.add(token)
        vectors.append(vec)

    lineno, line = first
    header = line.split()
    is_header = len(header) == 2 and all(_is_int(p) for p in header)
    if not is_header:
        consume(lineno, line)
    for lineno, line in lines:
        consume(lineno, line)
    if not vectors:
        raise DataError("embedding file holds no vectors")
    table = np.zeros((len(vocab), dim), dtype=np.float64)
    stacked = np.stack(vectors)
    table[UNK_ID] = stacked.mean(axis=0)
    table[UNK_ID + 1 :] = stacked
    return vocab, ad.Tensor(table, requires_grad=True, name="word_emb")


def _is_int(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


def embed(word_table, pos1_table, pos2_table, encoded):
    """Feature matrix (sent_len, d_w + 2 d_p) for one encoded sentence."""
    if pos1_table is pos2_table:
        raise ValueError("pos1 and pos2 require distinct embedding tables")
    return ad.concat(
        [
            ad.lookup(word_table, encoded.token_ids),
            ad.lookup(pos1_table, encoded.pos1_ids),
            ad.lookup(pos2_table, encoded.pos2_ids),
        ],
        axis=-1,
    )


def embed_batch(word_table, pos1_table, pos2_table, batch):
    """Stacked features (batch, sent_len, d_w + 2 d_p) for encoded sentences.

    The two position tables must be distinct tensors; sharing one object
    would silently merge head and tail distance meanings.
    """
    if pos1_table is pos2_table:
        raise ValueError("pos1 and pos2 require distinct embedding tables")
    token_ids = np.stack([e.token_ids for e in batch])
    pos1_ids = np.stack([e.pos1_ids for e in batch])
    pos2_ids = np.stack([e.pos2_ids for e in batch])
    return ad.concat(
        [
            ad.lookup(word_table, token_ids),
            ad.lookup(pos1_table, pos1_ids),
            ad.lookup(pos2_table, pos2_ids),
        ],
        axis=-1,
    )
