"""
Run Settings
YAML configuration files, command-line overrides and process environment
"""
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import structlog
import yaml
from dotenv import load_dotenv
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from .exceptions import ConfigError
from .schemas import Ablation, RunConfig

logger = structlog.get_logger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.toy.yaml"
THREADS_ENV = "REFCON_THREADS"
SECTIONS = ("data", "model", "hyper", "contrastive", "train", "eval")

PathLike = Union[str, Path]


# ================================
# ENVIRONMENT
# ================================

def load_environment() -> None:
    """Read a .env file if present; variables already set win"""
    load_dotenv(override=False)


def thread_limit() -> Optional[int]:
    raw = os.getenv(THREADS_ENV)
    if raw is None or not raw.strip():
        return None
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from e
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def apply_thread_limit():
    """Cap BLAS/OpenMP pools for the rest of the process when REFCON_THREADS is set"""
    limit = thread_limit()
    if limit is None:
        return None
    logger.debug("Thread pools capped", threads=limit)
    return threadpool_limits(limits=limit)


# ================================
# CONFIG FILES
# ================================

def read_config_file(path: Optional[PathLike] = None) -> Dict[str, Any]:
    """Raw section mapping; an absent default file yields the model defaults"""
    source = Path(path) if path is not None else DEFAULT_CONFIG
    if not source.is_file():
        if path is None:
            return {}
        raise ConfigError(f"config file not found: {source}")
    try:
        raw = yaml.safe_load(source.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{source}: not valid YAML ({e})") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{source}: unknown sections {unknown}")
    return raw


def merge_sections(base: Dict[str, Any], overrides: Optional[Dict[str, Dict[str, Any]]]) -> Dict[str, Any]:
    merged = {name: dict(values or {}) for name, values in base.items()}
    for section, values in (overrides or {}).items():
        merged.setdefault(section, {}).update(values)
    return merged


def _describe(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "config"
    return f"{location}: {first['msg']}"


def build_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    try:
        return RunConfig.model_validate(merge_sections(raw, overrides))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration ({_describe(e)})") from e


def with_ablations(config: RunConfig, ablations: Iterable[Union[str, Ablation]]) -> RunConfig:
    chosen = [Ablation(a) for a in ablations]
    if not chosen:
        return config
    return config.model_copy(update={"hyper": config.hyper.with_ablations(chosen)})


def load_config(path: Optional[PathLike] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None,
                ablations: Iterable[Union[str, Ablation]] = ()) -> RunConfig:
    """File, then overrides, then ablation switches; validated before returning"""
    config = with_ablations(build_config(read_config_file(path), overrides), ablations)
    logger.debug("Configuration loaded", source=str(path or DEFAULT_CONFIG))
    return config


def revalidate(config: RunConfig, overrides: Dict[str, Dict[str, Any]]) -> RunConfig:
    """A copy of ``config`` with ``overrides`` applied and every validator re-run"""
    return build_config(config.model_dump(mode="json"), overrides)
