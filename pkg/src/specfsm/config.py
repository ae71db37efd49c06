"""Run configuration (JSON file) with CLI overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .fsm import DEFAULT_DENYLIST
from .preproc import DEFAULT_CLEAN_RULES, DEFAULT_MAX_WORDS
from .prompting import (
    DEFAULT_CONTEXT_BUDGET,
    DEFAULT_MAX_REFS,
    DEFAULT_REF_BUDGET,
    DEFAULT_TAIL,
    ProtocolProfile,
)
from .providers import ProviderConfig
from .ensemble import DEFAULT_THETA


@dataclass(frozen=True)
class RunConfig:
    document: Path
    profile: ProtocolProfile
    providers: tuple[ProviderConfig, ...]
    doc_id: str = ""
    spec_version: str = ""
    templates_dir: Path | None = None
    theta: float = DEFAULT_THETA
    vote_threshold: int | None = None
    max_words: int = DEFAULT_MAX_WORDS
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    context_tail: int = DEFAULT_TAIL
    reference_budget: int = DEFAULT_REF_BUDGET
    max_references: int = DEFAULT_MAX_REFS
    denylist: frozenset[str] = DEFAULT_DENYLIST
    clean_rules: tuple[str, ...] = DEFAULT_CLEAN_RULES
    output_dir: Path = Path("out")
    dump: bool = False
    ground_truth: Path | None = None
    global_cap: int = 4
    per_provider_cap: int = 2
    base_dir: Path = field(default=Path("."), compare=False)

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _path(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_dict(data: dict, base_dir: str | Path = ".") -> RunConfig:
    base = Path(base_dir)
    try:
        proto = data["protocol"]
        profile = ProtocolProfile(
            protocol=proto["name"],
            style=proto.get("style", "state_oriented"),
            known_prefixes=tuple(proto.get("known_prefixes", ())),
            layer_tags=tuple(proto.get("layer_tags", ())),
        )
        providers = tuple(ProviderConfig.from_dict(p) for p in data.get("providers", ()))
        concurrency = data.get("concurrency", {})
        document = _path(base, data["document"])
        cfg = RunConfig(
            document=document,
            profile=profile,
            providers=providers,
            doc_id=data.get("doc_id") or document.stem,
            spec_version=data.get("spec_version", ""),
            templates_dir=_path(base, data.get("templates_dir")),
            theta=float(data.get("theta", DEFAULT_THETA)),
            vote_threshold=data.get("vote_threshold"),
            max_words=int(data.get("max_words", DEFAULT_MAX_WORDS)),
            context_budget=int(data.get("context_budget", DEFAULT_CONTEXT_BUDGET)),
            context_tail=int(data.get("context_tail", DEFAULT_TAIL)),
            reference_budget=int(data.get("reference_budget", DEFAULT_REF_BUDGET)),
            max_references=int(data.get("max_references", DEFAULT_MAX_REFS)),
            denylist=frozenset(data.get("denylist", DEFAULT_DENYLIST)),
            clean_rules=tuple(data.get("clean_rules", DEFAULT_CLEAN_RULES)),
            output_dir=_path(base, data.get("output_dir", "out")),
            dump=bool(data.get("dump", False)),
            ground_truth=_path(base, data.get("ground_truth")),
            global_cap=int(concurrency.get("global", 4)),
            per_provider_cap=int(concurrency.get("per_provider", 2)),
            base_dir=base,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run config: {exc!r}") from exc
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if not cfg.providers:
        raise ConfigError("run config lists no providers")
    names = [p.name for p in cfg.providers]
    if len(set(names)) != len(names):
        raise ConfigError(f"provider names must be unique: {names}")
    if not cfg.document.is_file():
        raise ConfigError(f"document not found: {cfg.document}")
    if cfg.templates_dir is not None and not cfg.templates_dir.is_dir():
        raise ConfigError(f"templates directory not found: {cfg.templates_dir}")
    if cfg.ground_truth is not None and not cfg.ground_truth.is_file():
        raise ConfigError(f"ground truth not found: {cfg.ground_truth}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, path.parent)
