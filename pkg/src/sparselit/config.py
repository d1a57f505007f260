"""JSON configuration documents covering every tunable default."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

from .index import BM25LParams, Boost, DEFAULT_BOOST_WEIGHTS, RecencyParams
from .llm import ProviderConfig
from .pipeline import AskConfig
from .rerank import FusionParams
from .textproc.chunking import ChunkingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    max_rank: int = 200
    chunk_max_rank: int = 30
    repeats: int = 1
    cove_statements: int = 10
    reference_mode: str = "retained"


@dataclass(frozen=True)
class Settings:
    ask: AskConfig = field(default_factory=AskConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _recency(data: dict) -> RecencyParams:
    data = dict(data)
    if data.get("reference_date"):
        data["reference_date"] = dt.date.fromisoformat(data["reference_date"])
    return _build(RecencyParams, data, "recency")


def _boosts(data: dict) -> dict[Boost, float]:
    out = dict(DEFAULT_BOOST_WEIGHTS)
    for k, v in data.items():
        try:
            out[Boost(k.upper())] = float(v)
        except ValueError:
            raise ConfigError(f"boosts: unknown level {k!r}") from None
    return out


def settings_from_dict(d: dict) -> Settings:
    d = dict(d)
    known = {"ask", "chunking", "bm25l", "fusion", "recency", "boosts", "provider", "eval"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    for name, section in d.items():
        if not isinstance(section, dict):
            raise ConfigError(f"{name}: expected an object")
    ask = dict(d.get("ask", {}))
    if ask.get("date_cutoff"):
        ask["date_cutoff"] = dt.date.fromisoformat(ask["date_cutoff"])
    for nested in ("chunking", "bm25l", "fusion", "recency", "boosts"):
        if nested in ask:
            raise ConfigError(f"ask: {nested!r} belongs in its own top-level section")
    ask["chunking"] = _build(ChunkingConfig, d.get("chunking", {}), "chunking")
    ask["bm25l"] = _build(BM25LParams, d.get("bm25l", {}), "bm25l")
    ask["fusion"] = _build(FusionParams, d.get("fusion", {}), "fusion")
    ask["recency"] = _recency(d.get("recency", {}))
    ask["boosts"] = _boosts(d.get("boosts", {}))
    return Settings(
        ask=_build(AskConfig, ask, "ask"),
        provider=_build(ProviderConfig, d.get("provider", {}), "provider"),
        eval=_build(EvalConfig, d.get("eval", {}), "eval"),
    )


def settings_to_dict(s: Settings) -> dict:
    a = s.ask
    r = a.recency
    return {
        "ask": {
            "top_docs": a.top_docs,
            "top_chunks": a.top_chunks,
            "dedup_enabled": a.dedup_enabled,
            "dedup_set_size": a.dedup_set_size,
            "date_cutoff": a.date_cutoff.isoformat() if a.date_cutoff else None,
        },
        "chunking": dataclasses.asdict(a.chunking),
        "bm25l": dataclasses.asdict(a.bm25l),
        "fusion": dataclasses.asdict(a.fusion),
        "recency": {
            "weight": r.weight,
            "half_life_years": r.half_life_years,
            "reference_date": r.reference_date.isoformat() if r.reference_date else None,
        },
        "boosts": {b.value: w for b, w in a.boosts.items()},
        "provider": dataclasses.asdict(s.provider),
        "eval": dataclasses.asdict(s.eval),
    }


def load_settings(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return settings_from_dict(data)


def write_settings(s: Settings, path: str | Path) -> None:
    Path(path).write_text(json.dumps(settings_to_dict(s), indent=2) + "\n", encoding="utf-8")
