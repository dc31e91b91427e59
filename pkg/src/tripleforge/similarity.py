"""Embedding providers and triple-set distances.

A sample's pre-extracted triples are verbalized, embedded, and compared with
the average Pompeiu-Hausdorff set distance: the mean nearest-neighbor
distance taken in both directions, which is symmetric and robust to outlier
triples (unlike the classical max-of-min form).
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np
import requests

from .gateway import API_KEY_ENV, GatewayError


class EmbeddingProvider(Protocol):
    name: str
    dim: int
    deterministic: bool

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic feature-hashing sentence embedder.

    Token unigrams and bigrams are hashed into a fixed-dimension signed
    count vector which is then L2-normalized.  Needs no weights or network,
    so it is the default for tests and offline runs; hashes come from
    blake2b, not the salted builtin ``hash``.
    """

    deterministic = True

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.name = f"hash-{dim}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        tokens = text.split()
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            index = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[index] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class HttpEmbeddingProvider:
    """Embeddings over an HTTP endpoint: POSTs ``{model, input}`` and reads
    ``data[i].embedding``."""

    deterministic = False

    def __init__(self, endpoint_url: str, model_id: str, dim: int,
                 api_key: Optional[str] = None, api_key_env: str = API_KEY_ENV,
                 timeout: float = 60.0, post: Callable = requests.post):
        if not endpoint_url:
            raise GatewayError("embedding provider requires an endpoint URL")
        key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        if not key:
            raise GatewayError(f"missing API key: set the {api_key_env} environment variable")
        self.name = f"http-{model_id}"
        self.dim = dim
        self._endpoint = endpoint_url
        self._model_id = model_id
        self._key = key
        self._timeout = timeout
        self._post = post

    def embed(self, text: str) -> np.ndarray:
        response = self._post(
            self._endpoint,
            json={"model": self._model_id, "input": [text]},
            headers={"Authorization": f"Bearer {self._key}"},
            timeout=self._timeout,
        )
        if response.status_code != 200:
            raise GatewayError(f"embedding HTTP {response.status_code}", status=response.status_code)
        vec = np.asarray(response.json()["data"][0]["embedding"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise GatewayError(f"embedding dim mismatch: expected {self.dim}, got {vec.shape}")
        return vec


def triple_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two embedded triples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding dim mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def set_distance(zi: Sequence[np.ndarray] | np.ndarray,
                 zj: Sequence[np.ndarray] | np.ndarray) -> float:
    """Average Pompeiu-Hausdorff distance between two sets of embeddings:
    mean over each set of the distance to its nearest neighbor in the other,
    summed over both directions."""
    a = np.atleast_2d(np.asarray(zi, dtype=np.float64))
    b = np.atleast_2d(np.asarray(zj, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("set distance undefined for empty triple set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    pairwise = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(pairwise.min(axis=1).mean() + pairwise.min(axis=0).mean())


@dataclass(frozen=True)
class PoolDistanceMatrix:
    """Symmetric pairwise set distances over the candidate pool."""

    sample_ids: tuple[str, ...]
    entries: np.ndarray
    provider: str
    dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        entries = np.asarray(self.entries, dtype=np.float64)
        n = len(self.sample_ids)
        if entries.shape != (n, n):
            raise ValueError(f"entries must be {n}x{n}, got {entries.shape}")
        if n and (not np.allclose(entries, entries.T, atol=1e-9) or np.any(np.diag(entries) != 0)):
            raise ValueError("entries must be symmetric with a zero diagonal")
        if np.any(entries < 0) or not np.all(np.isfinite(entries)):
            raise ValueError("entries must be finite and non-negative")
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    def to_json_dict(self) -> dict:
        return {
            "kind": "pool_distance_matrix",
            "n": self.n,
            "sample_ids": list(self.sample_ids),
            "dim": self.dim,
            "provider": self.provider,
            "entries": self.entries.tolist(),
        }

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> "PoolDistanceMatrix":
        if raw.get("kind") != "pool_distance_matrix":
            raise ValueError(f"not a pool distance matrix artifact: kind={raw.get('kind')!r}")
        return cls(
            sample_ids=tuple(raw["sample_ids"]),
            entries=np.asarray(raw["entries"], dtype=np.float64),
            provider=raw["provider"],
            dim=int(raw["dim"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "PoolDistanceMatrix":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def embed_triple_sets(preextracted: Mapping[str, Sequence[str]],
                      provider: EmbeddingProvider,
                      memoize: bool = True) -> dict[str, np.ndarray]:
    """Embed each sample's verbalized triples; one provider call per unique
    verbalization when memoization is on."""
    memo: Optional[dict[str, np.ndarray]] = {} if memoize else None
    out: dict[str, np.ndarray] = {}
    for sid, verbalizations in preextracted.items():
        if not verbalizations:
            raise ValueError(
                f"sample {sid!r} has no pre-extracted triples; exclude it from the pool first"
            )
        rows = []
        for text in verbalizations:
            if memo is not None and text in memo:
                rows.append(memo[text])
                continue
            vec = provider.embed(text)
            if memo is not None:
                memo[text] = vec
            rows.append(vec)
        out[sid] = np.stack(rows)
    return out


def pool_distances(preextracted: Mapping[str, Sequence[str]],
                   provider: EmbeddingProvider,
                   memoize: bool = True) -> PoolDistanceMatrix:
    """All-pairs set distances over the pool, in the mapping's id order."""
    embedded = embed_triple_sets(preextracted, provider, memoize=memoize)
    ids = list(embedded.keys())
    n = len(ids)
    entries = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = set_distance(embedded[ids[i]], embedded[ids[j]])
            entries[i, j] = d
            entries[j, i] = d
    return PoolDistanceMatrix(sample_ids=tuple(ids), entries=entries,
                              provider=provider.name, dim=provider.dim)
