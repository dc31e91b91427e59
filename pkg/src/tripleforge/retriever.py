"""Trainable sample retriever: an affine projection over a frozen base
embedder, regressed so that projected L2 distances between raw sentences
approximate the triple-set distances computed from pre-extractions.  The
trained model scores unseen test samples without any further LLM calls.
"""
from __future__ import annotations

import json
import random
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Sample
from .similarity import EmbeddingProvider, PoolDistanceMatrix

CHECKPOINT_MAGIC = b"TFRETRV1"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt or incompatible with the supplied base."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    learning_rate: float = 2e-5
    validation_fraction: float = 0.10
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_pairs: int = 0  # 0 = train on every pool pair

    def __post_init__(self) -> None:
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")


Pair = tuple[int, int, float]


@dataclass(frozen=True)
class TrainingPairs:
    """All unordered pool pairs with their target distances, split so that a
    held-out sample's pairs all land in validation (no endpoint leakage)."""

    train: tuple[Pair, ...]
    validation: tuple[Pair, ...]
    held_out: tuple[int, ...]


def make_training_pairs(matrix: PoolDistanceMatrix, validation_fraction: float = 0.10,
                        seed: int = 0, max_pairs: int = 0) -> TrainingPairs:
    n = matrix.n
    if n < 3:
        raise ValueError(f"insufficient pool: need at least 3 samples, got {n}")
    rng = random.Random(seed)
    indices = list(range(n))
    rng.shuffle(indices)
    held_count = min(max(1, round(validation_fraction * n)), n - 2)
    held = set(indices[:held_count])

    train: list[Pair] = []
    validation: list[Pair] = []
    for i in range(n):
        for j in range(i + 1, n):
            pair = (i, j, float(matrix.entries[i, j]))
            (validation if i in held or j in held else train).append(pair)
    if max_pairs > 0 and len(train) > max_pairs:
        train = rng.sample(train, max_pairs)
        train.sort()
    return TrainingPairs(train=tuple(train), validation=tuple(validation),
                         held_out=tuple(sorted(held)))


# --- loss kernel ------------------------------------------------------------
# For a pair (i, j) with target D the loss is (D - ||W e_i - W e_j||)^2.
# The bias of the affine head cancels in every pairwise difference, so its
# gradient is identically zero and it stays at initialization.

def _pair_arrays(pairs: Sequence[Pair], embeddings: np.ndarray):
    idx_i = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    idx_j = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    targets = np.fromiter((p[2] for p in pairs), dtype=np.float64, count=len(pairs))
    diffs = embeddings[idx_i] - embeddings[idx_j]
    return diffs, targets


def batch_loss(weights: np.ndarray, diffs: np.ndarray, targets: np.ndarray) -> float:
    """Sum of squared residuals between targets and projected distances."""
    projected = diffs @ weights.T
    radii = np.linalg.norm(projected, axis=1)
    return float(np.sum((targets - radii) ** 2))


def batch_grad(weights: np.ndarray, diffs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Analytic gradient of ``batch_loss`` with respect to the weights."""
    projected = diffs @ weights.T
    radii = np.linalg.norm(projected, axis=1)
    coeff = np.zeros_like(radii)
    safe = radii > 1e-12
    coeff[safe] = 2.0 * (radii[safe] - targets[safe]) / radii[safe]
    return (projected * coeff[:, None]).T @ diffs


@dataclass
class TrainingHistory:
    initial_validation_loss: float
    epochs: list[dict]
    best_epoch: int

    def to_json_dict(self) -> dict:
        return {
            "initial_validation_loss": self.initial_validation_loss,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
        }


def _mean_pair_loss(weights: np.ndarray, pairs: Sequence[Pair], embeddings: np.ndarray) -> float:
    if not pairs:
        return 0.0
    diffs, targets = _pair_arrays(pairs, embeddings)
    return batch_loss(weights, diffs, targets) / len(pairs)


def train(pairs: TrainingPairs, embeddings: np.ndarray,
          config: TrainConfig) -> tuple[np.ndarray, TrainingHistory]:
    """Mini-batch AdamW regression of the projection weights.

    Starts from the identity (so the untrained retriever reproduces raw
    base-embedding distances) and returns the weights of the epoch with the
    lowest validation loss; epoch 0 is the initialization itself.
    """
    if not pairs.train:
        raise ValueError("no training pairs")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    dim = embeddings.shape[1]
    weights = np.eye(dim, dtype=np.float64)

    init_val = _mean_pair_loss(weights, pairs.validation, embeddings)
    best_val = init_val
    best_weights = weights.copy()
    best_epoch = 0
    history: list[dict] = []

    rng = np.random.default_rng(config.seed)
    m = np.zeros_like(weights)
    v = np.zeros_like(weights)
    step = 0
    order = np.arange(len(pairs.train))
    train_list = list(pairs.train)

    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_list[k] for k in order[start:start + config.batch_size]]
            diffs, targets = _pair_arrays(batch, embeddings)
            loss = batch_loss(weights, diffs, targets)
            if not np.isfinite(loss):
                raise RuntimeError(f"divergence: non-finite training loss at epoch {epoch}")
            epoch_loss += loss
            grad = batch_grad(weights, diffs, targets)
            step += 1
            m = config.beta1 * m + (1 - config.beta1) * grad
            v = config.beta2 * v + (1 - config.beta2) * grad * grad
            m_hat = m / (1 - config.beta1 ** step)
            v_hat = v / (1 - config.beta2 ** step)
            weights = weights - config.learning_rate * (
                m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * weights
            )
        val_loss = _mean_pair_loss(weights, pairs.validation, embeddings)
        if not np.isfinite(val_loss):
            raise RuntimeError(f"divergence: non-finite validation loss at epoch {epoch}")
        history.append({
            "epoch": epoch,
            "train_loss_mean": epoch_loss / len(pairs.train),
            "validation_loss_mean": val_loss,
        })
        if val_loss < best_val:
            best_val = val_loss
            best_weights = weights.copy()
            best_epoch = epoch
    return best_weights, TrainingHistory(
        initial_validation_loss=init_val, epochs=history, best_epoch=best_epoch
    )


# --- the model ---------------------------------------------------------------

@dataclass(frozen=True)
class RetrieverModel:
    """Frozen base embedder plus a trainable affine projection."""

    base: EmbeddingProvider
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[1] != self.base.dim:
            raise ValueError(f"weights must be (out_dim, {self.base.dim}), got {weights.shape}")
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"bias must be ({weights.shape[0]},), got {bias.shape}")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def identity(cls, base: EmbeddingProvider) -> "RetrieverModel":
        return cls(base=base, weights=np.eye(base.dim), bias=np.zeros(base.dim))

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def encode(self, text: str) -> np.ndarray:
        return self.weights @ self.base.embed(text) + self.bias

    def encode_samples(self, samples: Sequence[Sample]) -> np.ndarray:
        return np.stack([self.encode(s.text) for s in samples])


def train_retriever(texts_by_id: Mapping[str, str], matrix: PoolDistanceMatrix,
                    base: EmbeddingProvider,
                    config: TrainConfig) -> tuple[RetrieverModel, TrainingHistory]:
    """End-to-end training against a pool distance matrix: embeds the pool
    sentences once, builds the pair split, and fits the projection."""
    missing = [sid for sid in matrix.sample_ids if sid not in texts_by_id]
    if missing:
        raise ValueError(f"matrix samples missing from the pool: {missing[:5]}")
    embeddings = np.stack([base.embed(texts_by_id[sid]) for sid in matrix.sample_ids])
    pairs = make_training_pairs(matrix, validation_fraction=config.validation_fraction,
                                seed=config.seed, max_pairs=config.max_pairs)
    weights, history = train(pairs, embeddings, config)
    return RetrieverModel(base=base, weights=weights, bias=np.zeros(weights.shape[0])), history


# --- pool-to-test distances ---------------------------------------------------

@dataclass(frozen=True)
class PairwiseDistanceSet:
    """N x M distances between candidate-pool samples and test samples."""

    unlabeled_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    entries: np.ndarray
    provider: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "unlabeled_ids", tuple(self.unlabeled_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (len(self.unlabeled_ids), len(self.test_ids)):
            raise ValueError(
                f"entries must be {len(self.unlabeled_ids)}x{len(self.test_ids)}, got {entries.shape}"
            )
        if entries.size and (np.any(entries < 0) or not np.all(np.isfinite(entries))):
            raise ValueError("entries must be finite and non-negative")
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return len(self.unlabeled_ids)

    @property
    def m(self) -> int:
        return len(self.test_ids)

    def scaled(self, factor: float) -> "PairwiseDistanceSet":
        return PairwiseDistanceSet(self.unlabeled_ids, self.test_ids,
                                   self.entries * factor, self.provider)

    def to_json_dict(self) -> dict:
        return {
            "kind": "pairwise_distance_set",
            "n": self.n,
            "m": self.m,
            "unlabeled_ids": list(self.unlabeled_ids),
            "test_ids": list(self.test_ids),
            "provider": self.provider,
            "entries": self.entries.tolist(),
        }

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> "PairwiseDistanceSet":
        if raw.get("kind") != "pairwise_distance_set":
            raise ValueError(f"not a pairwise distance artifact: kind={raw.get('kind')!r}")
        return cls(
            unlabeled_ids=tuple(raw["unlabeled_ids"]),
            test_ids=tuple(raw["test_ids"]),
            entries=np.asarray(raw["entries"], dtype=np.float64),
            provider=raw.get("provider", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "PairwiseDistanceSet":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def compute_P(model: RetrieverModel, pool_samples: Sequence[Sample],
              test_samples: Sequence[Sample]) -> PairwiseDistanceSet:
    """Project every sample once and take all pool-to-test L2 distances."""
    if not pool_samples or not test_samples:
        raise ValueError("both pool and test sets must be non-empty")
    pool = model.encode_samples(pool_samples)
    test = model.encode_samples(test_samples)
    # cell-by-cell 1-D norms: bitwise identical to the defining single-pair
    # distance, unlike a broadcast axis reduction whose summation order differs
    entries = np.empty((len(pool_samples), len(test_samples)), dtype=np.float64)
    for i in range(entries.shape[0]):
        for j in range(entries.shape[1]):
            entries[i, j] = np.linalg.norm(pool[i] - test[j])
    return PairwiseDistanceSet(
        unlabeled_ids=tuple(s.id for s in pool_samples),
        test_ids=tuple(s.id for s in test_samples),
        entries=entries,
        provider=f"retriever/{model.base.name}",
    )


# --- checkpoints ---------------------------------------------------------------

def save_checkpoint(model: RetrieverModel, path: str | Path) -> None:
    """Binary checkpoint: magic, version, base provider name, dims, row-major
    little-endian float64 parameters, CRC32 trailer."""
    name = model.base.name.encode("utf-8")
    out_dim, base_dim = model.weights.shape
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(name)) + name
    blob += struct.pack("<II", base_dim, out_dim)
    blob += np.ascontiguousarray(model.weights, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(model.bias, dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path, base: EmbeddingProvider) -> RetrieverModel:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 16 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a retriever checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: CRC mismatch, file corrupt")
    offset = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (name_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    name = body[offset:offset + name_len].decode("utf-8")
    offset += name_len
    base_dim, out_dim = struct.unpack_from("<II", body, offset)
    offset += 8
    if name != base.name:
        raise CheckpointError(
            f"{path}: checkpoint base provider {name!r} does not match {base.name!r}"
        )
    if base_dim != base.dim:
        raise CheckpointError(
            f"{path}: checkpoint base dim {base_dim} does not match provider dim {base.dim}"
        )
    w_bytes = out_dim * base_dim * 8
    weights = np.frombuffer(body, dtype="<f8", count=out_dim * base_dim,
                            offset=offset).reshape(out_dim, base_dim)
    bias = np.frombuffer(body, dtype="<f8", count=out_dim, offset=offset + w_bytes)
    if offset + w_bytes + out_dim * 8 != len(body):
        raise CheckpointError(f"{path}: truncated or oversized parameter block")
    return RetrieverModel(base=base, weights=weights.copy(), bias=bias.copy())
