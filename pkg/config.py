"""Run configuration: pydantic models, shipped defaults and .env overrides."""
import json
import os
from pathlib import Path
from typing import Dict, List, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from errors import ConfigError
from utils.terms import PdiMode

load_dotenv()

DATA_DIR = Path(__file__).resolve().parent / "data"
COMMAND_KEYWORDS_FILE = DATA_DIR / "command_keywords.json"

DEFAULT_ALPHA = 0.002
DEFAULT_TAU = -0.5
DEFAULT_WARMUP = 2
DEFAULT_N_MAX = 7
DEFAULT_TAIL_CHARS = 2000
DEFAULT_CHAIN_K = 12
PIVOT_THRESHOLD = 0.15
MEDIAN_TIE_POLICY = "ties_low"
SPEARMAN_EXACT_MAX_N = 12
MANN_WHITNEY_EXACT_MAX_N = 16
ALPHA_GRID = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 0.002, 0.005, 0.007,
              1e-2, 1e-1, 1.0, 10.0)


class TokenizerConfig(BaseModel):
    lowercase: bool = True
    # alphanumeric runs; underscores and punctuation are boundaries
    pattern: str = r"[^\W_]+"
    version: str = "word-v1"


class ReferenceStat(BaseModel):
    mean: float
    std: float

    @field_validator("std")
    @classmethod
    def std_positive(cls, value: float) -> float:
        if not value > 0:
            raise ConfigError(f"reference std must be > 0, got {value}", "reference_stats")
        return value


def _default_reference() -> Dict[str, ReferenceStat]:
    # Uncalibrated centre of the [0,1] range; run `calibrate` on a corpus to replace.
    return {name: ReferenceStat(mean=0.5, std=0.25) for name in ("exec", "plan", "oss")}


class ControllerConfig(BaseModel):
    tau: float = DEFAULT_TAU
    warmup_W: int = DEFAULT_WARMUP
    reference_stats: Dict[str, ReferenceStat] = Field(default_factory=_default_reference)

    @field_validator("warmup_W")
    @classmethod
    def warmup_positive(cls, value: int) -> int:
        if value < 1:
            raise ConfigError(f"warmup_W must be >= 1, got {value}", "warmup_W")
        return value

    @field_validator("reference_stats")
    @classmethod
    def all_components(cls, value: Dict[str, ReferenceStat]) -> Dict[str, ReferenceStat]:
        missing = {"exec", "plan", "oss"} - set(value)
        if missing:
            raise ConfigError(f"reference_stats missing {sorted(missing)}", "reference_stats")
        return value


def load_controller_config(path: Path) -> ControllerConfig:
    """Controller settings from a YAML file such as the one `calibrate` writes."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read controller config: {e}", str(path)) from e
    if not isinstance(data, dict):
        raise ConfigError("controller config must be a mapping", str(path))
    try:
        return ControllerConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e.errors()[0]["msg"]), str(path)) from e


class FeatureConfig(BaseModel):
    negation_keywords: List[str] = Field(default_factory=lambda: ["not", "never", "failed", "wrong"])
    pivot_threshold: float = PIVOT_THRESHOLD
    ngram_n: int = 3


class CategoryRule(BaseModel):
    category: str
    weight: float
    keywords: List[str]


class CommandKeywordTable(BaseModel):
    categories: List[CategoryRule]
    fallback_category: str = "Action"
    fallback_weight: float = 1.0
    low_signal: List[str] = Field(default_factory=lambda: ["ls", "pwd", "echo"])

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "CommandKeywordTable":
        path = path or COMMAND_KEYWORDS_FILE
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.model_validate(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read keyword table: {e}", str(path)) from e
        except ValidationError as e:
            raise ConfigError(f"invalid keyword table: {e.errors()[0]['msg']}", str(path)) from e


class HarnessConfig(BaseModel):
    N_max: int = DEFAULT_N_MAX
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    pdi_mode: PdiMode = PdiMode.off
    tail_chars: int = DEFAULT_TAIL_CHARS
    chain_k: int = DEFAULT_CHAIN_K
    alpha: float = DEFAULT_ALPHA
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)

    @field_validator("N_max")
    @classmethod
    def n_max_positive(cls, value: int) -> int:
        if value < 1:
            raise ConfigError(f"N_max must be >= 1, got {value}", "N_max")
        return value

    @property
    def pdi_enabled(self) -> bool:
        return self.pdi_mode is PdiMode.intervene


class RunConfig(BaseModel):
    alpha: float = DEFAULT_ALPHA
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    output_format: str = "csv"
    seed: int = 0
    workers: int = 1
    skip_invalid: bool = False

    @field_validator("alpha")
    @classmethod
    def alpha_positive(cls, value: float) -> float:
        if not value > 0:
            raise ConfigError(f"alpha must be > 0, got {value}", "alpha")
        return value

    @field_validator("output_format")
    @classmethod
    def known_format(cls, value: str) -> str:
        if value not in ("csv", "json"):
            raise ConfigError(f"output format must be csv or json, got {value!r}", "output_format")
        return value

    @classmethod
    def from_env(cls, **overrides) -> "RunConfig":
        """Build a config from PDI_* environment variables, then apply explicit overrides."""
        values = {}
        if os.getenv("PDI_ALPHA"):
            values["alpha"] = float(os.getenv("PDI_ALPHA"))
        if os.getenv("PDI_SEED"):
            values["seed"] = int(os.getenv("PDI_SEED"))
        if os.getenv("PDI_WORKERS"):
            values["workers"] = int(os.getenv("PDI_WORKERS"))
        controller = {}
        if os.getenv("PDI_TAU"):
            controller["tau"] = float(os.getenv("PDI_TAU"))
        if os.getenv("PDI_WARMUP"):
            controller["warmup_W"] = int(os.getenv("PDI_WARMUP"))
        if controller:
            values["controller"] = ControllerConfig(**controller)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def fingerprint(self) -> Dict[str, str]:
        return {
            "alpha": repr(self.alpha),
            "tokenizer": self.tokenizer.version,
            "median_ties": MEDIAN_TIE_POLICY,
            "spearman_exact_max_n": str(SPEARMAN_EXACT_MAX_N),
            "mann_whitney_exact_max_n": str(MANN_WHITNEY_EXACT_MAX_N),
            "seed": str(self.seed),
        }
