"""Document encoding: text to a fixed-dimensional vector.

The trainable reference encoder hashes subword units (words plus their
character 3-grams) into an embedding table, mean-pools the embeddings, and
applies a tanh-squashed linear projection.  Any encoder producing a vector
of the configured hidden dimension can replace it; precomputed vectors can
also be imported from the binary format below.

Parameters are stored as float32 (the on-disk tensor format); all math is
carried out in float64 so gradients check out against finite differences.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .hashing import fnv1a64

BEGIN_ID = 0
END_ID = 1
_NUM_RESERVED = 2

DEFAULT_VOCAB_SIZE = 1 << 18
DEFAULT_EMBED_DIM = 64
DEFAULT_HIDDEN_DIM = 128

_WORD_RE = re.compile(r"\w+")


@dataclass(frozen=True)
class TokenSequence:
    """Hashed subword ids, framed with the reserved BEGIN/END markers."""

    ids: tuple[int, ...]
    framed: bool = True


def subword_units(text: str) -> list[str]:
    """Lowercased words split on whitespace/punctuation, each followed by
    its character 3-grams."""
    units = []
    for word in _WORD_RE.findall(text.lower()):
        units.append(word)
        units.extend(word[i : i + 3] for i in range(len(word) - 2))
    return units


def hash_unit(unit: str, vocab_size: int) -> int:
    """Map a subword unit into [2, vocab_size) with the fixed 64-bit hash."""
    return _NUM_RESERVED + fnv1a64(unit) % (vocab_size - _NUM_RESERVED)


def tokenize(text: str, max_len: int = 512, vocab_size: int = DEFAULT_VOCAB_SIZE) -> TokenSequence:
    """Tokenize text into a framed, truncated id sequence.

    With m subword units the interior keeps t = min(m, max_len - 2) of them,
    so the framed sequence never exceeds max_len ids.  Empty text yields
    just the frame markers.
    """
    if max_len < 3:
        raise ConfigError(f"max sequence length must be at least 3, got {max_len}")
    if vocab_size <= _NUM_RESERVED:
        raise ConfigError(f"vocab size must exceed {_NUM_RESERVED}, got {vocab_size}")
    units = subword_units(text)
    keep = min(len(units), max_len - 2)
    ids = [BEGIN_ID]
    ids.extend(hash_unit(unit, vocab_size) for unit in units[:keep])
    ids.append(END_ID)
    return TokenSequence(ids=tuple(ids), framed=True)


@dataclass
class EncoderParams:
    """Trainable state of the reference encoder."""

    embed: np.ndarray  # (vocab_size, embed_dim)
    proj: np.ndarray  # (embed_dim, hidden_dim)
    bias: np.ndarray  # (hidden_dim,)

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embed.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.proj.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.embed.copy(), self.proj.copy(), self.bias.copy())


@dataclass
class EncoderGrads:
    """Gradients shaped like :class:`EncoderParams`."""

    embed: np.ndarray
    proj: np.ndarray
    bias: np.ndarray


def init_encoder_params(
    rng: np.random.Generator,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    embed_dim: int = DEFAULT_EMBED_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
    dtype=np.float32,
) -> EncoderParams:
    if min(vocab_size, embed_dim, hidden_dim) <= 0 or vocab_size <= _NUM_RESERVED:
        raise ConfigError("encoder dimensions must be positive")
    embed = rng.normal(0.0, 0.1, size=(vocab_size, embed_dim)).astype(dtype)
    proj = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(embed_dim, hidden_dim)).astype(dtype)
    bias = np.zeros(hidden_dim, dtype=dtype)
    return EncoderParams(embed=embed, proj=proj, bias=bias)


def _interior(tokens: TokenSequence, vocab_size: int) -> np.ndarray:
    if not tokens.framed or len(tokens.ids) < 2 or tokens.ids[0] != BEGIN_ID or tokens.ids[-1] != END_ID:
        raise ValueError("encode requires a framed token sequence")
    ids = np.asarray(tokens.ids[1:-1], dtype=np.intp)
    if ids.size and (ids.max() >= vocab_size or ids.min() < _NUM_RESERVED):
        raise ValueError("token ids fall outside the encoder's hash range")
    return ids


def encode_batch(
    seqs: Sequence[TokenSequence], params: EncoderParams
) -> tuple[np.ndarray, np.ndarray]:
    """Encode a batch of sequences; returns (H, mean-embeddings), float64.

    H[b] = tanh(mean_embed[b] @ proj + bias); an empty interior contributes
    a zero mean.
    """
    mean = np.zeros((len(seqs), params.embed_dim))
    for row, seq in enumerate(seqs):
        ids = _interior(seq, params.vocab_size)
        if ids.size:
            mean[row] = params.embed[ids].astype(np.float64).mean(axis=0)
    pre = mean @ params.proj.astype(np.float64) + params.bias.astype(np.float64)
    return np.tanh(pre), mean


def encode(tokens: TokenSequence, params: EncoderParams) -> np.ndarray:
    """Document vector for one framed token sequence (float64, length d_h)."""
    h, _ = encode_batch([tokens], params)
    return h[0]


def encoder_backward_batch(
    seqs: Sequence[TokenSequence],
    params: EncoderParams,
    mean: np.ndarray,
    h: np.ndarray,
    dh: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backprop through the encoder for a batch.

    Returns (proj_grad, bias_grad, token_ids, per-token embedding rows);
    accumulate the rows at the ids (duplicates add) to get the embedding
    gradient.  Inputs are the (H, mean) pair produced by
    :func:`encode_batch` and the upstream gradient dL/dH.
    """
    dpre = np.asarray(dh, dtype=np.float64) * (1.0 - h * h)
    proj_grad = mean.T @ dpre
    bias_grad = dpre.sum(axis=0)
    dmean = dpre @ params.proj.astype(np.float64).T
    id_chunks = []
    row_chunks = []
    for row, seq in enumerate(seqs):
        ids = _interior(seq, params.vocab_size)
        if ids.size:
            id_chunks.append(ids)
            row_chunks.append(np.broadcast_to(dmean[row] / ids.size, (ids.size, params.embed_dim)))
    if id_chunks:
        token_ids = np.concatenate(id_chunks)
        token_rows = np.concatenate(row_chunks)
    else:
        token_ids = np.zeros(0, dtype=np.intp)
        token_rows = np.zeros((0, params.embed_dim))
    return proj_grad, bias_grad, token_ids, token_rows


def encode_gradients(
    tokens: TokenSequence, params: EncoderParams, upstream: np.ndarray
) -> EncoderGrads:
    """Exact analytic gradients of :func:`encode` for one document.

    ``upstream`` is dL/dH.  The embedding gradient comes back dense; the
    training loop uses the sparse row form from
    :func:`encoder_backward_batch` instead.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (params.hidden_dim,):
        raise ValueError(
            f"upstream gradient has shape {upstream.shape}, expected ({params.hidden_dim},)"
        )
    h, mean = encode_batch([tokens], params)
    proj_grad, bias_grad, token_ids, token_rows = encoder_backward_batch(
        [tokens], params, mean, h, upstream[None, :]
    )
    embed_grad = np.zeros(params.embed.shape)
    np.add.at(embed_grad, token_ids, token_rows)
    return EncoderGrads(embed=embed_grad, proj=proj_grad, bias=bias_grad)


# Precomputed document vectors: external encoders write this format and the
# fine-grained head consumes the vectors directly.
HVEC_MAGIC = b"HVEC"
HVEC_VERSION = 1
_HVEC_HEADER = struct.Struct("<4sIIQ")


def sidecar_path(path: str) -> str:
    return str(path) + ".tsv"


def write_doc_vectors(
    path: str, vectors: np.ndarray, keys: Sequence[tuple[str, str]]
) -> None:
    """Write document vectors plus the row -> (language, pageid) sidecar TSV."""
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise DataError("document vectors must be a 2-D array")
    if len(keys) != vectors.shape[0]:
        raise DataError("one (language, pageid) key per vector row is required")
    with open(path, "wb") as handle:
        handle.write(
            _HVEC_HEADER.pack(HVEC_MAGIC, HVEC_VERSION, vectors.shape[1], vectors.shape[0])
        )
        handle.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    with open(sidecar_path(path), "w", encoding="utf-8") as handle:
        for lang, page_id in keys:
            handle.write(f"{lang}\t{page_id}\n")


def read_doc_vectors(path: str) -> tuple[np.ndarray, list[tuple[str, str]]]:
    """Read a vector file and its sidecar; returns (float32 matrix, keys)."""
    with open(path, "rb") as handle:
        header = handle.read(_HVEC_HEADER.size)
        if len(header) < _HVEC_HEADER.size:
            raise DataError(f"{path}: truncated vector file header")
        magic, version, dim, count = _HVEC_HEADER.unpack(header)
        if magic != HVEC_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, not a document-vector file")
        if version != HVEC_VERSION:
            raise DataError(f"{path}: unsupported vector format version {version}")
        payload = handle.read(4 * dim * count)
        if len(payload) < 4 * dim * count:
            raise DataError(f"{path}: truncated vector data")
        vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    keys = []
    try:
        with open(sidecar_path(path), encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                fields = line.rstrip("\n").split("\t")
                if len(fields) != 2:
                    raise DataError(f"{sidecar_path(path)} line {lineno}: expected lang<TAB>pageid")
                keys.append((fields[0], fields[1]))
    except FileNotFoundError:
        raise DataError(f"missing sidecar file {sidecar_path(path)}") from None
    if len(keys) != count:
        raise DataError(
            f"sidecar lists {len(keys)} rows but vector file holds {count}"
        )
    return vectors, keys
