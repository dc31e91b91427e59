"""Plain-text key-value configuration for pipeline runs.

Lines are ``key = value``; ``#`` starts a comment.  Path values are resolved
relative to the config file's directory so a run can be launched from
anywhere.  CLI flags override file values.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    pool_path: Path = Path("train.jsonl")
    test_path: Path = Path("test.jsonl")
    run_dir: Path = Path("runs/default")
    cache_dir: Optional[Path] = None  # defaults to <run_dir>/cache

    provider: str = "mock"  # mock | real
    model_id: str = "mock-echo-gold"
    endpoint_url: str = ""
    retry_attempts: int = 3
    backoff_base: float = 0.5
    concurrency: int = 4

    embedder: str = "hash"  # hash | http
    embedding_dim: int = 64
    embedding_endpoint: str = ""
    embedding_model: str = ""

    format: str = "tableie"  # tableie | textie | codeie
    strategy: str = "coverage"  # topk | balance | coverage | random
    budget: int = 5
    top_u: int = 5
    seed: int = 0
    distance_source: str = "retriever"  # retriever | direct
    checkpoint_path: Optional[Path] = None  # defaults to <run_dir>/retriever.ckpt
    demo_order: str = "similar-last"  # similar-last | similar-first

    epochs: int = 5
    batch_size: int = 16
    learning_rate: float = 2e-5
    validation_fraction: float = 0.10
    weight_decay: float = 0.01
    max_pairs: int = 0

    def __post_init__(self) -> None:
        if self.provider not in ("mock", "real"):
            raise ConfigError(f"provider must be mock or real, got {self.provider!r}")
        if self.strategy not in ("topk", "balance", "coverage", "random"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.distance_source not in ("retriever", "direct"):
            raise ConfigError(f"distance_source must be retriever or direct, got {self.distance_source!r}")
        if self.demo_order not in ("similar-last", "similar-first"):
            raise ConfigError(f"demo_order must be similar-last or similar-first, got {self.demo_order!r}")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")

    @property
    def effective_cache_dir(self) -> Path:
        return self.cache_dir if self.cache_dir is not None else self.run_dir / "cache"

    @property
    def effective_checkpoint_path(self) -> Path:
        return (self.checkpoint_path if self.checkpoint_path is not None
                else self.run_dir / "retriever.ckpt")

    def snapshot(self) -> dict:
        """JSON-safe view of every setting, for the run manifest."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value) if isinstance(value, Path) else value
        out["cache_dir"] = str(self.effective_cache_dir)
        out["checkpoint_path"] = str(self.effective_checkpoint_path)
        return out


_PATH_KEYS = {"pool_path", "test_path", "run_dir", "cache_dir", "checkpoint_path"}
_INT_KEYS = {"retry_attempts", "concurrency", "embedding_dim", "budget", "top_u",
             "seed", "epochs", "batch_size", "max_pairs"}
_FLOAT_KEYS = {"backoff_base", "learning_rate", "validation_fraction", "weight_decay"}
_STR_KEYS = {"provider", "model_id", "endpoint_url", "embedder", "embedding_endpoint",
             "embedding_model", "format", "strategy", "distance_source", "demo_order"}
_ALL_KEYS = _PATH_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    base = path.parent
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in _PATH_KEYS:
                values[key] = (base / value).resolve() if value else None
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return PipelineConfig(**values)


def apply_overrides(cfg: PipelineConfig, **overrides) -> PipelineConfig:
    """Return a copy of the config with non-None overrides applied."""
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in values:
            raise ConfigError(f"unknown config override {key!r}")
        values[key] = value
    return PipelineConfig(**values)
