"""Run configuration: TOML file, environment overrides, and runtime assembly.

Precedence is environment > file > defaults.  Secrets (API keys) are only
ever read from the environment; a key written into the file is rejected.
"""

from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .explorer import ExplorerBudget
from .llm import (ChatCompletionBackend, GenerationParams, LLMClient, RecordingBackend, ScriptedBackend,
                  load_script)
from .web import (DEFAULT_TEXT_CAP, BingSearch, FixtureStore, HttpFetcher, RecordingFetcher, RecordingSearch,
                  WebAccess)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

MODES = ("live", "record", "replay")
ENV_PREFIX = "WEBREASON_"


class ConfigError(Exception):
    pass


@dataclass
class EndpointConfig:
    base_url: str | None = None
    model: str = ""
    api_key_env: str = ""
    stream: bool = False
    timeout: float = 600.0

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


@dataclass
class SearchConfig:
    provider: str = "bing"
    market: str = "en-US"
    k: int = 10
    api_key_env: str = "WEBREASON_SEARCH_KEY"
    per_host_rps: float = 1.0
    respect_robots: bool = True
    text_cap: int = DEFAULT_TEXT_CAP

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


@dataclass
class RunConfig:
    mode: str = "live"
    backbone: EndpointConfig = field(default_factory=lambda: EndpointConfig(api_key_env="WEBREASON_BACKBONE_KEY"))
    assistant: EndpointConfig = field(default_factory=lambda: EndpointConfig(api_key_env="WEBREASON_ASSISTANT_KEY"))
    judges: dict[str, EndpointConfig] = field(default_factory=dict)
    search: SearchConfig = field(default_factory=SearchConfig)
    generation: GenerationParams = field(default_factory=GenerationParams)
    assistant_generation: GenerationParams | None = None
    explorer: ExplorerBudget = field(default_factory=ExplorerBudget)
    tool_cap: int = 15
    transcript: Path | None = None
    judge_transcript: Path | None = None
    fixtures: Path | None = None
    output: Path = Path("runs")
    workers: int = 4
    requests_per_second: float | None = None
    template: str = "qwq"

    def validate(self) -> RunConfig:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode in ("replay", "record") and self.transcript is None:
            raise ConfigError(f"{self.mode} mode requires a transcript path")
        if self.mode == "replay":
            if not Path(self.transcript).exists():
                raise ConfigError(f"transcript not found: {self.transcript}")
            if self.fixtures is None:
                raise ConfigError("replay mode requires a web fixture directory")
        if self.mode == "record" and self.fixtures is None:
            raise ConfigError("record mode requires a web fixture directory to write to")
        if self.mode in ("live", "record"):
            for role, ep in (("backbone", self.backbone), ("assistant", self.assistant)):
                if not ep.base_url or not ep.model:
                    raise ConfigError(f"{self.mode} mode requires {role}.base_url and {role}.model")
            if not self.search.api_key:
                raise ConfigError(f"{self.mode} mode requires a search API key in ${self.search.api_key_env}")
        return self


def _endpoint(d: dict, default: EndpointConfig, where: str) -> EndpointConfig:
    if "api_key" in d:
        raise ConfigError(f"{where}.api_key must not be stored in the file; set {where}.api_key_env instead")
    known = {f.name for f in fields(EndpointConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    vals = {f.name: getattr(default, f.name) for f in fields(EndpointConfig)}
    vals.update(d)
    return EndpointConfig(**vals)


def _section(cls, d: dict, where: str, base=None):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    if "api_key" in d:
        raise ConfigError(f"[{where}] must not contain secrets")
    vals = {f.name: getattr(base, f.name) for f in fields(cls)} if base is not None else {}
    vals.update(d)
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}]: {exc}") from exc


def from_mapping(data: dict, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    data = dict(data)
    paths = data.pop("paths", {})
    for key, value in paths.items():
        if key not in ("transcript", "judge_transcript", "fixtures", "output"):
            raise ConfigError(f"unknown key in [paths]: {key}")
        setattr(cfg, key, Path(value))
    if "backbone" in data:
        cfg.backbone = _endpoint(data.pop("backbone"), cfg.backbone, "backbone")
    if "assistant" in data:
        cfg.assistant = _endpoint(data.pop("assistant"), cfg.assistant, "assistant")
    for name, d in data.pop("judges", {}).items():
        cfg.judges[name] = _endpoint(d, EndpointConfig(), f"judges.{name}")
    if "search" in data:
        cfg.search = _section(SearchConfig, data.pop("search"), "search", cfg.search)
    if "generation" in data:
        gen = dict(data.pop("generation"))
        if "stop_sequences" in gen:
            raise ConfigError("stop sequences are set by the runtime per mode")
        cfg.generation = _section(GenerationParams, gen, "generation", cfg.generation)
    if "assistant_generation" in data:
        cfg.assistant_generation = _section(GenerationParams, data.pop("assistant_generation"),
                                            "assistant_generation", cfg.generation)
    if "explorer" in data:
        cfg.explorer = _section(ExplorerBudget, data.pop("explorer"), "explorer", cfg.explorer)
    for key in ("mode", "tool_cap", "workers", "requests_per_second", "template"):
        if key in data:
            setattr(cfg, key, data.pop(key))
    if data:
        raise ConfigError(f"unknown top-level keys: {sorted(data)}")
    return cfg


_ENV = {
    "MODE": ("mode", str),
    "WORKERS": ("workers", int),
    "TOOL_CAP": ("tool_cap", int),
    "TRANSCRIPT": ("transcript", Path),
    "JUDGE_TRANSCRIPT": ("judge_transcript", Path),
    "FIXTURES": ("fixtures", Path),
    "OUTPUT": ("output", Path),
}


def apply_env(cfg: RunConfig, environ=None) -> RunConfig:
    env = os.environ if environ is None else environ
    for suffix, (attr, conv) in _ENV.items():
        raw = env.get(ENV_PREFIX + suffix)
        if raw is not None:
            try:
                setattr(cfg, attr, conv(raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {ENV_PREFIX}{suffix}: {raw!r}") from exc
    for role in ("backbone", "assistant"):
        ep: EndpointConfig = getattr(cfg, role)
        url = env.get(f"{ENV_PREFIX}{role.upper()}_URL")
        model = env.get(f"{ENV_PREFIX}{role.upper()}_MODEL")
        if url is not None:
            ep.base_url = url
        if model is not None:
            ep.model = model
    return cfg


def load_config(path: str | Path | None = None, environ=None) -> RunConfig:
    """Defaults, then the TOML file (if any), then environment overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        cfg = from_mapping(data, cfg)
    return apply_env(cfg, environ)


# -- runtime assembly --------------------------------------------------------

@dataclass
class Runtime:
    model: LLMClient
    assistant: LLMClient
    web: WebAccess
    script: ScriptedBackend | None = None


def _live_backend(ep: EndpointConfig) -> ChatCompletionBackend:
    return ChatCompletionBackend(ep.base_url, ep.model, ep.api_key, timeout=ep.timeout, stream=ep.stream)


def build_web(cfg: RunConfig) -> WebAccess:
    if cfg.mode == "replay":
        return WebAccess.from_fixtures(cfg.fixtures, text_cap=cfg.search.text_cap)
    provider = BingSearch(cfg.search.api_key, cfg.search.market)
    fetcher = HttpFetcher(per_host_rps=cfg.search.per_host_rps, respect_robots=cfg.search.respect_robots)
    if cfg.mode == "record":
        store = FixtureStore(cfg.fixtures)
        provider, fetcher = RecordingSearch(provider, store), RecordingFetcher(fetcher, store)
    return WebAccess(provider, fetcher, text_cap=cfg.search.text_cap)


def build_runtime(cfg: RunConfig, transcript: Path | None = None) -> Runtime:
    """Clients and web access for ``cfg.mode``.

    Replay serves backbone and assistant from one ordered transcript, which
    is also what record mode writes.
    """
    transcript = transcript or cfg.transcript
    web = build_web(cfg)
    aparams = cfg.assistant_generation or cfg.generation
    if cfg.mode == "replay":
        script = load_script(transcript)
        return Runtime(LLMClient(script, cfg.generation), LLMClient(script, aparams), web, script)
    model_be = _live_backend(cfg.backbone)
    asst_be = _live_backend(cfg.assistant)
    if cfg.mode == "record":
        model_be = RecordingBackend(model_be, transcript, truncate=True)
        asst_be = RecordingBackend(asst_be, transcript, truncate=False)
    rps = cfg.requests_per_second
    return Runtime(LLMClient(model_be, cfg.generation, requests_per_second=rps),
                   LLMClient(asst_be, aparams, requests_per_second=rps), web)


def build_judges(cfg: RunConfig, transcript: Path | None = None) -> dict[str, LLMClient]:
    """Judge clients by name.  In replay every judge answers from the one judge script."""
    if cfg.mode == "replay":
        path = transcript or cfg.judge_transcript
        if path is None or not Path(path).exists():
            raise ConfigError("replay judging requires a judge transcript")
        script = load_script(path)
        names = list(cfg.judges) or ["judge"]
        return {n: LLMClient(script, cfg.generation) for n in names}
    if not cfg.judges:
        raise ConfigError("no [judges.*] endpoints configured")
    out = {}
    for name, ep in cfg.judges.items():
        be = _live_backend(ep)
        if cfg.mode == "record" and (transcript or cfg.judge_transcript):
            be = RecordingBackend(be, transcript or cfg.judge_transcript, truncate=not out)
        out[name] = LLMClient(be, cfg.generation, requests_per_second=cfg.requests_per_second)
    return out
