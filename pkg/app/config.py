"""
Project configuration: defaults for every knob, file-format constants, and the
resolved RunConfig.

Preprocessing defaults follow the usual session-recommendation convention:
    items with fewer than 5 clicks are dropped,
    sessions shorter than 2 clicks are dropped,
    sessions keep at most their last 19 clicks,
    the last day of the log becomes the test split.

Config precedence (lowest first):
    built-in defaults < TAILNET_* environment < config file < command-line flags
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from app.errors import ConfigError
from app.tasks import resolve_workers

# Preprocessing
MIN_ITEM_SUPPORT: int = 5
MIN_SESSION_LEN: int = 2
MAX_SESSION_LEN: int = 19
HEAD_FRACTION: float = 0.2
TEST_DAYS: float = 1.0
SECONDS_PER_DAY: int = 86_400

# Share of malformed rows tolerated by the CSV parser
MAX_MALFORMED_SHARE: float = 0.10

# Synthetic clickstream
SYNTH_SESSIONS: int = 5000
SYNTH_ITEMS: int = 500
SYNTH_ZIPF: float = 1.2
SYNTH_MEAN_LEN: float = 6.0
SYNTH_SPAN_DAYS: float = 14.0
SYNTH_REPEAT_PROB: float = 0.1

# Training
EMBED_DIM: int = 100
LEARNING_RATE: float = 1e-3
BATCH_SIZE: int = 32
EPOCHS: int = 30
L2: float = 1e-5
SEED: int = 42
EARLY_STOP_PATIENCE: int = 3
ADAM_BETA1: float = 0.9
ADAM_BETA2: float = 0.999
ADAM_EPS: float = 1e-8
# Pairs per gradient work unit; the reduction order depends on this, not on the worker count
GRADIENT_CHUNK: int = 4

# Model selection metric
SELECTION_K: int = 20

# Evaluation
DEFAULT_KS: tuple[int, ...] = (5, 10, 15, 20)
METHODS: tuple[str, ...] = ("tailnet", "tailnet-proportion", "pop", "spop", "itemknn")

# Log clamping in the loss
LOG_EPS: float = 1e-12

# File formats
DATASET_MAGIC: bytes = b"TLDS"
DATASET_VERSION: int = 1
CHECKPOINT_MAGIC: bytes = b"TLNT"
CHECKPOINT_VERSION: int = 1


def load_config_file(path: str | Path) -> dict[str, Any]:
    """
    Read a config file into a plain dict.

    JSON objects are accepted as-is; anything else is read as `key = value`
    lines where `#` starts a comment. Dashes in keys are normalised to
    underscores so flag spellings work too.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")

    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Invalid JSON in config file {str(path)!r}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {str(path)!r} must hold a JSON object")
        return {str(k).replace("-", "_"): v for k, v in raw.items()}

    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


class RunConfig(BaseSettings):
    """Union of ingest, synth, train and eval settings."""

    model_config = SettingsConfigDict(env_prefix="TAILNET_", extra="forbid")

    # ingest
    min_item_support: int = Field(MIN_ITEM_SUPPORT, ge=1)
    min_session_len: int = Field(MIN_SESSION_LEN, ge=2)
    max_session_len: int = Field(MAX_SESSION_LEN, ge=2)
    head_fraction: float = Field(HEAD_FRACTION, gt=0.0, lt=1.0)
    test_days: float = Field(TEST_DAYS, gt=0.0)

    # synth
    sessions: int = Field(SYNTH_SESSIONS, ge=1)
    items: int = Field(SYNTH_ITEMS, ge=10)
    zipf: float = Field(SYNTH_ZIPF, gt=0.0)
    mean_len: float = Field(SYNTH_MEAN_LEN, ge=2.0)
    seed: int = Field(SEED, ge=0)

    # train
    d: int = Field(EMBED_DIM, ge=1)
    lr: float = Field(LEARNING_RATE, gt=0.0)
    batch: int = Field(BATCH_SIZE, ge=1)
    epochs: int = Field(EPOCHS, ge=0)
    l2: float = Field(L2, ge=0.0)
    use_pm: bool = True
    patience: int = Field(EARLY_STOP_PATIENCE, ge=1)

    # eval
    ks: Annotated[tuple[int, ...], NoDecode] = DEFAULT_KS
    threads: int = Field(0, ge=0)  # 0 = all cores

    @field_validator("ks", mode="before")
    @classmethod
    def _split_ks(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [part for part in value.replace(" ", "").split(",") if part]
        return value

    @field_validator("ks")
    @classmethod
    def _check_ks(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or min(value) < 1:
            raise ValueError("every K must be >= 1")
        return tuple(sorted(set(value)))

    @classmethod
    def resolve(cls, config_file: str | Path | None = None, **overrides: Any) -> RunConfig:
        """Merge defaults, environment, config file and explicit overrides."""
        values = load_config_file(config_file) if config_file else {}
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except ValidationError as exc:
            first = exc.errors()[0]
            where = ".".join(str(p) for p in first.get("loc", ())) or "config"
            raise ConfigError(f"Invalid setting {where}: {first.get('msg')}") from exc

    @property
    def test_window_seconds(self) -> int:
        return int(round(self.test_days * SECONDS_PER_DAY))

    @property
    def worker_count(self) -> int:
        return resolve_workers(self.threads)

    def ingest_settings(self) -> dict[str, Any]:
        return {
            "min_item_support": self.min_item_support,
            "min_session_len": self.min_session_len,
            "max_session_len": self.max_session_len,
            "head_fraction": self.head_fraction,
            "test_window_seconds": self.test_window_seconds,
        }

    def provenance(self) -> dict[str, Any]:
        """Settings echoed into output artifacts (threads excluded: results do not depend on it)."""
        data = self.model_dump(exclude={"threads"})
        data["ks"] = list(self.ks)
        return data
