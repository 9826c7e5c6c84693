"""Runtime settings: defaults, JSON config file, environment overrides.

Precedence, lowest to highest: built-in defaults, the config file, then
``ANAMNESIS_*`` environment variables (e.g. ``ANAMNESIS_PORT=9000``).  Command
line flags, where offered, sit above all three.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from .dialogue import EngineConfig
from .errors import ContractError, SchemaError

ENV_PREFIX = "ANAMNESIS_"


@dataclass(frozen=True)
class Settings:
    kb_path: Optional[str] = None
    bank_path: Optional[str] = None
    lexicon_path: Optional[str] = None
    model_path: Optional[str] = None
    journal_path: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8000
    seed: int = 0
    variant: str = "emotive"
    emote_mode: str = "none"
    max_questions: int = 10
    margin_threshold: float = 20.0
    external_endpoint: Optional[str] = None

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            variant=self.variant, max_questions=self.max_questions,
            margin_threshold=self.margin_threshold, seed=self.seed,
            emote_mode=self.emote_mode)


_FIELDS = {f.name: f for f in dataclasses.fields(Settings)}
_INT_FIELDS = {"port", "seed", "max_questions"}
_FLOAT_FIELDS = {"margin_threshold"}


def _coerce(name: str, value, source: str, *, from_text: bool):
    """Validate one setting.  ``from_text`` marks string-only sources (env),
    where numeric fields must be parsed; typed sources (JSON) must already
    hold the right type."""
    try:
        if name in _INT_FIELDS:
            if isinstance(value, bool) or (
                    not from_text and not isinstance(value, int)):
                raise ValueError("not an integer")
            return int(value)
        if name in _FLOAT_FIELDS:
            if isinstance(value, bool) or (
                    not from_text and not isinstance(value, (int, float))):
                raise ValueError("not a number")
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ContractError(
            f"setting {name!r} from {source}: {value!r} is not numeric"
        ) from exc
    if value is not None and not isinstance(value, str):
        raise ContractError(
            f"setting {name!r} from {source}: expected a string, got {value!r}")
    return value


def load_settings(path: Optional[str | Path] = None,
                  env: Optional[Mapping[str, str]] = None) -> Settings:
    """Build Settings from defaults, an optional JSON file, and environment."""
    values: dict = {}

    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config file {path}: invalid JSON ({exc.msg})")
        if not isinstance(data, dict):
            raise SchemaError(f"config file {path}: expected a JSON object")
        for name, value in data.items():
            if name not in _FIELDS:
                raise ContractError(f"config file {path}: unknown setting "
                                    f"{name!r}")
            values[name] = _coerce(name, value, f"file {path}",
                                   from_text=False)

    environ = os.environ if env is None else env
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in _FIELDS:
            raise ContractError(f"unknown environment setting {key}")
        values[name] = _coerce(name, raw, f"env {key}", from_text=True)

    return Settings(**values)
