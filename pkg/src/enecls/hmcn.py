"""Hierarchy-aware prediction head, loss, gradients, optimizer, checkpoints.

The head is a feed-forward cascade of linear layers: level 2 reads the
document vector H, and each deeper level reads H concatenated with the
logits of every shallower level, so supervision at one level shapes the
inputs of the next.  The loss is a per-level frequency-weighted binary
cross entropy summed over levels 2..4, computed in the numerically stable
log-sum form.

Fed-forward level outputs are raw logits by default; ``feedback="sigmoid"``
squashes them first (the alternative wiring, kept for experimentation).

Head weights initialize to zero, so an untrained model emits logits of
exactly 0 (probability 0.5) for every label.  Zero init costs nothing here:
each layer is linear in trained inputs, so gradients break the symmetry on
the first step.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .encoder import EncoderParams
from .errors import CheckpointError, DataError, NumericError

FEEDBACK_MODES = ("logits", "sigmoid")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class HeadParams:
    """Per-level linear layers of the prediction head."""

    w2: np.ndarray  # (d_h, d2)
    b2: np.ndarray  # (d2,)
    w3: np.ndarray  # (d_h + d2, d3)
    b3: np.ndarray  # (d3,)
    w4: np.ndarray  # (d_h + d2 + d3, d4)
    b4: np.ndarray  # (d4,)

    @property
    def hidden_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def level_sizes(self) -> tuple[int, int, int]:
        return self.w2.shape[1], self.w3.shape[1], self.w4.shape[1]

    def copy(self) -> "HeadParams":
        return HeadParams(*(a.copy() for a in (self.w2, self.b2, self.w3, self.b3, self.w4, self.b4)))


@dataclass
class HeadGrads:
    """Gradients shaped like :class:`HeadParams`."""

    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray


@dataclass
class LevelLogits:
    """Raw pre-sigmoid outputs for levels 2..4."""

    y2: np.ndarray
    y3: np.ndarray
    y4: np.ndarray


@dataclass
class LossWeights:
    """Per-label loss weights for levels 2..4, each entry in (0, 1]."""

    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray

    def by_level(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.w2, self.w3, self.w4)


def init_head_params(
    hidden_dim: int,
    level_sizes: Sequence[int],
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> HeadParams:
    """Zero-initialized head (random normal when ``rng`` is given)."""
    d2, d3, d4 = level_sizes
    shapes = [
        (hidden_dim, d2),
        (d2,),
        (hidden_dim + d2, d3),
        (d3,),
        (hidden_dim + d2 + d3, d4),
        (d4,),
    ]
    arrays = []
    for shape in shapes:
        if rng is None:
            arrays.append(np.zeros(shape, dtype=dtype))
        else:
            scale = 1.0 / np.sqrt(max(shape[0], 1)) if len(shape) == 2 else 0.5
            arrays.append(rng.normal(0.0, scale, size=shape).astype(dtype))
    return HeadParams(*arrays)


def ones_weights(level_sizes: Sequence[int]) -> LossWeights:
    return LossWeights(*(np.ones(d) for d in level_sizes))


def frequency_weights(counts) -> np.ndarray:
    """Imbalance weights for one level: min(mean(counts) / counts, 1).

    ``counts`` is the label frequency vector over the (ancestor-closed)
    training targets.  Zero-frequency labels get weight 1, the min-clamp
    limit, so unseen labels are never silenced.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise DataError("cannot compute weights for an empty level")
    if (counts < 0).any():
        raise DataError("label counts must be non-negative")
    mean = counts.mean()
    weights = np.ones_like(counts)
    seen = counts > 0
    weights[seen] = np.minimum(mean / counts[seen], 1.0)
    return weights


def compute_weights(counts_by_level: Sequence) -> LossWeights:
    """Per-level frequency weights from three label-count vectors."""
    c2, c3, c4 = counts_by_level
    return LossWeights(frequency_weights(c2), frequency_weights(c3), frequency_weights(c4))


def _forward_arrays(
    h: np.ndarray, params: HeadParams, feedback: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched forward pass; returns (A2, A3, A4, X3, X4) in float64."""
    if feedback not in FEEDBACK_MODES:
        raise DataError(f"unknown feedback mode {feedback!r}")
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.hidden_dim:
        raise ValueError(f"document vectors have shape {h.shape}, expected (batch, {params.hidden_dim})")
    w2, w3, w4 = (params.w2.astype(np.float64), params.w3.astype(np.float64), params.w4.astype(np.float64))
    a2 = h @ w2 + params.b2.astype(np.float64)
    f2 = sigmoid(a2) if feedback == "sigmoid" else a2
    x3 = np.hstack([h, f2])
    a3 = x3 @ w3 + params.b3.astype(np.float64)
    f3 = sigmoid(a3) if feedback == "sigmoid" else a3
    x4 = np.hstack([h, f2, f3])
    a4 = x4 @ w4 + params.b4.astype(np.float64)
    return a2, a3, a4, x3, x4


def forward(h: np.ndarray, params: HeadParams, feedback: str = "logits") -> LevelLogits:
    """Level-wise logits for one document vector."""
    a2, a3, a4, _, _ = _forward_arrays(np.asarray(h)[None, :], params, feedback)
    return LevelLogits(y2=a2[0], y3=a3[0], y4=a4[0])


def _bce(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    # max(z,0) - z*y + log(1 + exp(-|z|)): finite for logits of any magnitude
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def _loss_arrays(
    logits_by_level: Sequence[np.ndarray],
    targets_by_level: Sequence[np.ndarray],
    weights: LossWeights,
) -> float:
    """Mean-over-batch sum of per-level weighted BCE terms."""
    total = 0.0
    batch = logits_by_level[0].shape[0]
    for logits, targets, w in zip(logits_by_level, targets_by_level, weights.by_level()):
        m = logits.shape[1]
        if m == 0:
            continue
        if targets.shape != logits.shape or w.shape != (m,):
            raise ValueError("targets/weights shape does not match logits")
        total += float((w * _bce(logits, np.asarray(targets, dtype=np.float64))).sum()) / (m * batch)
    return total


def loss(logits: LevelLogits, targets, weights: LossWeights) -> float:
    """Weighted multi-level BCE for one sample.

    J = sum over levels i of -(1/M_i) sum_j w_ij [y log sig(z) + (1-y) log(1-sig(z))],
    evaluated in the stable log-sum form.
    """
    y2, y3, y4 = targets.by_level() if hasattr(targets, "by_level") else targets
    return _loss_arrays(
        (logits.y2[None, :], logits.y3[None, :], logits.y4[None, :]),
        (np.atleast_2d(y2), np.atleast_2d(y3), np.atleast_2d(y4)),
        weights,
    )


def _backward_arrays(
    h: np.ndarray,
    params: HeadParams,
    targets_by_level: Sequence[np.ndarray],
    weights: LossWeights,
    feedback: str,
) -> tuple[HeadGrads, np.ndarray, float]:
    """Batched gradients of the mean-over-batch loss; returns (grads, dJ/dH, J).

    The chain rule crosses levels: fed-forward level outputs carry gradient
    from every deeper level back into their producing layer.
    """
    a2, a3, a4, x3, x4 = _forward_arrays(h, params, feedback)
    h = np.asarray(h, dtype=np.float64)
    batch = h.shape[0]
    y_levels = [np.atleast_2d(np.asarray(y, dtype=np.float64)) for y in targets_by_level]
    loss_value = _loss_arrays((a2, a3, a4), y_levels, weights)

    def loss_grad(logits: np.ndarray, targets: np.ndarray, w: np.ndarray) -> np.ndarray:
        m = logits.shape[1]
        if m == 0:
            return np.zeros_like(logits)
        return w * (sigmoid(logits) - targets) / (m * batch)

    s2 = sigmoid(a2) if feedback == "sigmoid" else None
    s3 = sigmoid(a3) if feedback == "sigmoid" else None

    d_h, d2, d3 = params.hidden_dim, params.w2.shape[1], params.w3.shape[1]
    g4 = loss_grad(a4, y_levels[2], weights.w4)
    w4_g = x4.T @ g4
    b4_g = g4.sum(axis=0)
    dx4 = g4 @ params.w4.astype(np.float64).T

    df3 = dx4[:, d_h + d2 :]
    g3 = loss_grad(a3, y_levels[1], weights.w3)
    g3 = g3 + (df3 * s3 * (1.0 - s3) if feedback == "sigmoid" else df3)
    w3_g = x3.T @ g3
    b3_g = g3.sum(axis=0)
    dx3 = g3 @ params.w3.astype(np.float64).T

    df2 = dx4[:, d_h : d_h + d2] + dx3[:, d_h:]
    g2 = loss_grad(a2, y_levels[0], weights.w2)
    g2 = g2 + (df2 * s2 * (1.0 - s2) if feedback == "sigmoid" else df2)
    w2_g = h.T @ g2
    b2_g = g2.sum(axis=0)

    dh = g2 @ params.w2.astype(np.float64).T + dx3[:, :d_h] + dx4[:, :d_h]
    grads = HeadGrads(w2=w2_g, b2=b2_g, w3=w3_g, b3=b3_g, w4=w4_g, b4=b4_g)
    return grads, dh, loss_value


def backward(
    h: np.ndarray, params: HeadParams, targets, weights: LossWeights, feedback: str = "logits"
) -> tuple[HeadGrads, np.ndarray]:
    """Exact gradients of :func:`loss` for one sample, plus dJ/dh."""
    y_levels = targets.by_level() if hasattr(targets, "by_level") else targets
    grads, dh, _ = _backward_arrays(
        np.asarray(h)[None, :], params, [np.atleast_2d(y) for y in y_levels], weights, feedback
    )
    return grads, dh[0]


@dataclass
class OptimizerState:
    """Adam accumulators for a fixed, named list of tensors."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    names: tuple[str, ...] = field(default_factory=tuple)


def init_optimizer(
    named_params: Sequence[tuple[str, np.ndarray]],
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    names = tuple(name for name, _ in named_params)
    m = [np.zeros_like(array) for _, array in named_params]
    v = [np.zeros_like(array) for _, array in named_params]
    return OptimizerState(m=m, v=v, step=0, learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps, names=names)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState
) -> tuple[Sequence[np.ndarray], OptimizerState]:
    """One bias-corrected Adam update, in place.

    Raises :class:`NumericError` naming the offending tensor if any gradient
    is non-finite.
    """
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ValueError("parameter/gradient count does not match optimizer state")
    for i, grad in enumerate(grads):
        if not np.isfinite(grad).all():
            name = state.names[i] if i < len(state.names) else f"tensor {i}"
            raise NumericError(f"non-finite gradient for tensor {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for param, grad, m, v in zip(params, grads, state.m, state.v):
        grad = np.asarray(grad, dtype=param.dtype)
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)
        param -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass
class ModelParams:
    """Encoder plus head: everything the training loop updates."""

    encoder: EncoderParams
    head: HeadParams

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """All trainable tensors in the fixed checkpoint order."""
        return [
            ("embed", self.encoder.embed),
            ("proj", self.encoder.proj),
            ("enc_bias", self.encoder.bias),
            ("head_w2", self.head.w2),
            ("head_b2", self.head.b2),
            ("head_w3", self.head.w3),
            ("head_b3", self.head.b3),
            ("head_w4", self.head.w4),
            ("head_b4", self.head.b4),
        ]

    def copy(self) -> "ModelParams":
        return ModelParams(encoder=self.encoder.copy(), head=self.head.copy())


CHECKPOINT_MAGIC = b"HMCN"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIQ")
_CKPT_DIMS = struct.Struct("<6I")
_CKPT_OPT = struct.Struct("<Qdddd")


@dataclass
class Checkpoint:
    model: ModelParams
    optimizer: OptimizerState | None
    taxonomy_hash: int
    meta: dict


def save_checkpoint(
    path: str,
    model: ModelParams,
    optimizer: OptimizerState | None,
    taxonomy_hash: int,
    meta: dict | None = None,
) -> None:
    """Serialize model (and optionally optimizer state) to the binary format.

    Layout: magic, format version, 64-bit taxonomy content hash, a JSON
    metadata block, the six dimensions, then every tensor as row-major
    little-endian float32 in :meth:`ModelParams.named_tensors` order.
    Optimizer state follows under a flag: step, hyperparameters, then the
    (m, v) pair for each tensor in the same order.
    """
    enc, head = model.encoder, model.head
    d2, d3, d4 = head.level_sizes
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, taxonomy_hash))
        handle.write(struct.pack("<I", len(meta_blob)))
        handle.write(meta_blob)
        handle.write(_CKPT_DIMS.pack(enc.vocab_size, enc.embed_dim, enc.hidden_dim, d2, d3, d4))
        for _, tensor in model.named_tensors():
            _write_tensor(handle, tensor)
        if optimizer is None:
            handle.write(struct.pack("<I", 0))
        else:
            handle.write(struct.pack("<I", 1))
            handle.write(
                _CKPT_OPT.pack(
                    optimizer.step,
                    optimizer.learning_rate,
                    optimizer.beta1,
                    optimizer.beta2,
                    optimizer.eps,
                )
            )
            for m, v in zip(optimizer.m, optimizer.v):
                _write_tensor(handle, m)
                _write_tensor(handle, v)


def load_checkpoint(path: str, expected_taxonomy_hash: int | None = None) -> Checkpoint:
    """Read a checkpoint; fails on corruption or a taxonomy mismatch."""
    with open(path, "rb") as handle:
        magic, version, taxonomy_hash = _CKPT_HEADER.unpack(_read_exact(handle, _CKPT_HEADER.size, path))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, not a checkpoint")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
        if expected_taxonomy_hash is not None and taxonomy_hash != expected_taxonomy_hash:
            raise CheckpointError(
                f"{path}: taxonomy hash mismatch (checkpoint {taxonomy_hash:#018x},"
                f" current {expected_taxonomy_hash:#018x}); the checkpoint was trained"
                " against a different taxonomy"
            )
        (meta_len,) = struct.unpack("<I", _read_exact(handle, 4, path))
        try:
            meta = json.loads(_read_exact(handle, meta_len, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt metadata block ({exc})") from None
        vocab, d_e, d_h, d2, d3, d4 = _CKPT_DIMS.unpack(_read_exact(handle, _CKPT_DIMS.size, path))
        shapes = _tensor_shapes(vocab, d_e, d_h, d2, d3, d4)
        tensors = [_read_tensor(handle, shape, path) for shape in shapes]
        model = ModelParams(
            encoder=EncoderParams(embed=tensors[0], proj=tensors[1], bias=tensors[2]),
            head=HeadParams(*tensors[3:]),
        )
        (opt_flag,) = struct.unpack("<I", _read_exact(handle, 4, path))
        optimizer = None
        if opt_flag == 1:
            step, lr, beta1, beta2, eps = _CKPT_OPT.unpack(_read_exact(handle, _CKPT_OPT.size, path))
            m, v = [], []
            for shape in shapes:
                m.append(_read_tensor(handle, shape, path))
                v.append(_read_tensor(handle, shape, path))
            optimizer = OptimizerState(
                m=m,
                v=v,
                step=step,
                learning_rate=lr,
                beta1=beta1,
                beta2=beta2,
                eps=eps,
                names=tuple(name for name, _ in model.named_tensors()),
            )
        elif opt_flag != 0:
            raise CheckpointError(f"{path}: invalid optimizer-state flag {opt_flag}")
    return Checkpoint(model=model, optimizer=optimizer, taxonomy_hash=taxonomy_hash, meta=meta)


def _tensor_shapes(vocab, d_e, d_h, d2, d3, d4) -> list[tuple[int, ...]]:
    return [
        (vocab, d_e),
        (d_e, d_h),
        (d_h,),
        (d_h, d2),
        (d2,),
        (d_h + d2, d3),
        (d3,),
        (d_h + d2 + d3, d4),
        (d4,),
    ]


def _write_tensor(handle: BinaryIO, tensor: np.ndarray) -> None:
    handle.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _read_tensor(handle: BinaryIO, shape: tuple[int, ...], path: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(handle, 4 * count, path)
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def _read_exact(handle: BinaryIO, size: int, path: str) -> bytes:
    data = handle.read(size)
    if len(data) < size:
        raise CheckpointError(f"{path}: truncated checkpoint file")
    return data
