"""
Scenario Configuration
======================

TOML scenario files validated with pydantic.

A scenario file has these tables (see docs/SCENARIOS.md):

    [scenario]      name, kind, duration_s, seed, execution
    [[templates]]   name, stages = [{app, core, config}], pool and heap sizes
    [[rules]]       priority, match fields ('*' = any), action, template
    [source]        packet source kind and its knobs
    [cores]         net_in, net_out, mma = [...], workers = [...]
    [params]        scenario-specific knobs
    [output]        report path, csv dir, sink

Validation errors become ConfigError with the dotted field path:

    templates.0.stages.1.app: unknown app 'fw'
"""

import tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import app.apps  # noqa: F401  (registers the bundled applications)
from app.chains import ChainTemplate, StageSpec
from app.config import MAX_PAYLOAD, get_runtime_settings
from app.fwp import app_names
from app.fwp.registry import is_registered
from app.gateway import FlowAction, FlowPattern
from .exceptions import ConfigError


class ScenarioKind(str, Enum):
    FORWARD = "forward"
    CHURN = "churn"
    STARTUP = "startup"
    CHAIN = "chain"
    KV = "kv"
    KV_MULTI = "kv_multi"
    TENANTS = "tenants"
    PING = "ping"
    MMA = "mma"
    RESTORE = "restore"
    SCALE = "scale"
    FAIRNESS = "fairness"
    CALIBRATE = "calibrate"


class Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ────────────────────────────────
# Sections
# ────────────────────────────────

class ScenarioSection(Schema):
    name: str
    kind: ScenarioKind
    duration_s: float = Field(1.0, gt=0)
    seed: int = 0
    execution: Literal["step", "threaded"] = "step"


class StageSchema(Schema):
    app: str
    core: int = Field(0, ge=0)
    config: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("app")
    @classmethod
    def known_app(cls, value: str) -> str:
        if not is_registered(value):
            raise ValueError(f"unknown app '{value}' (known: {', '.join(app_names())})")
        return value


def _defaults():
    return get_runtime_settings()


class TemplateSchema(Schema):
    name: str
    stages: List[StageSchema] = Field(..., min_length=1)
    slot_count: int = Field(default_factory=lambda: _defaults().slot_count, gt=0)
    slot_size: int = Field(default_factory=lambda: _defaults().slot_size, ge=64)
    heap_size: int = Field(default_factory=lambda: _defaults().heap_size, ge=16)
    wiring: Optional[List[Tuple[int, int]]] = None

    @field_validator("slot_count")
    @classmethod
    def power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError(f"slot_count must be a power of two, got {value}")
        return value

    def to_template(self) -> ChainTemplate:
        return ChainTemplate(
            template_id=self.name,
            stages=tuple(StageSpec(s.app, s.core, dict(s.config)) for s in self.stages),
            slot_count=self.slot_count,
            slot_size=self.slot_size,
            heap_size=self.heap_size,
            wiring=tuple(self.wiring) if self.wiring is not None else None,
        )


MatchField = Union[int, str]


class RuleSchema(Schema):
    template: str
    priority: int = 0
    action: FlowAction = FlowAction.SHARED
    src_addr: MatchField = "*"
    dst_addr: MatchField = "*"
    src_port: MatchField = "*"
    dst_port: MatchField = "*"
    proto: MatchField = "*"

    @model_validator(mode="after")
    def parseable(self) -> "RuleSchema":
        self.pattern()
        return self

    def pattern(self) -> FlowPattern:
        try:
            return FlowPattern.parse(self.src_addr, self.dst_addr, self.src_port, self.dst_port, self.proto)
        except (OSError, ValueError) as exc:
            raise ValueError(f"bad match field: {exc}") from None


class SourceSchema(Schema):
    kind: Literal["synthetic", "pcap", "datagram", "kv", "ping"] = "synthetic"
    rate_pps: float = Field(0.0, ge=0)
    total: Optional[int] = Field(None, gt=0)
    size: int = Field(64, ge=64, le=MAX_PAYLOAD)
    flows: int = Field(1, ge=1)
    per_request: bool = False
    path: Optional[str] = None
    loop: bool = False
    bind: str = "127.0.0.1:9000"
    keys: int = Field(1000, ge=1)
    get_ratio: float = Field(0.95, ge=0, le=1)
    value_size: int = Field(135, ge=1, le=1024)
    clients: int = Field(1, ge=1)
    warm: int = Field(0, ge=0)

    @model_validator(mode="after")
    def pcap_needs_path(self) -> "SourceSchema":
        if self.kind == "pcap" and not self.path:
            raise ValueError("pcap source needs 'path'")
        return self

    @property
    def bind_address(self) -> Tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        return host or "127.0.0.1", int(port)


class CoresSchema(Schema):
    net_in: int = Field(0, ge=0)
    net_out: int = Field(1, ge=0)
    mma: List[int] = Field(default_factory=lambda: [2], min_length=1)
    workers: List[int] = Field(default_factory=lambda: [3], min_length=1)

    @model_validator(mode="after")
    def disjoint(self) -> "CoresSchema":
        assigned = [self.net_in, self.net_out, *self.mma, *self.workers]
        if len(assigned) != len(set(assigned)):
            raise ValueError(f"core assignments overlap: {assigned}")
        return self


class OutputSchema(Schema):
    report: Optional[str] = None
    csv: Optional[str] = None
    sink: Literal["counter", "pcap", "datagram"] = "counter"
    pcap_path: Optional[str] = None

    @model_validator(mode="after")
    def pcap_needs_path(self) -> "OutputSchema":
        if self.sink == "pcap" and not self.pcap_path:
            raise ValueError("pcap sink needs 'pcap_path'")
        return self


class ScenarioConfig(Schema):
    scenario: ScenarioSection
    templates: List[TemplateSchema] = Field(default_factory=list)
    rules: List[RuleSchema] = Field(default_factory=list)
    source: SourceSchema = Field(default_factory=SourceSchema)
    cores: CoresSchema = Field(default_factory=CoresSchema)
    params: Dict[str, Any] = Field(default_factory=dict)
    output: OutputSchema = Field(default_factory=OutputSchema)

    @model_validator(mode="after")
    def references_resolve(self) -> "ScenarioConfig":
        names = [t.name for t in self.templates]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate template names: {names}")
        for i, rule in enumerate(self.rules):
            if rule.template not in names:
                raise ValueError(f"rules.{i}.template: unknown template '{rule.template}'")
        workers = len(self.cores.workers)
        for t, template in enumerate(self.templates):
            for s, stage in enumerate(template.stages):
                if stage.core >= workers:
                    raise ValueError(
                        f"templates.{t}.stages.{s}.core: worker {stage.core} but only {workers} worker cores"
                    )
        return self

    def template(self, name: str) -> TemplateSchema:
        for template in self.templates:
            if template.name == name:
                return template
        raise ConfigError(f"templates: no template '{name}'")


# ────────────────────────────────
# Loading
# ────────────────────────────────

def _format(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"])
        message = item["msg"].removeprefix("Value error, ")
        lines.append(f"{path}: {message}" if path else message)
    return "; ".join(lines)


def parse_config(data: Dict[str, Any]) -> ScenarioConfig:
    """
    Raises:
        ConfigError: Validation failed; the message carries the field path
    """
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from None


def load_config(path: Union[str, Path], seed: Optional[int] = None, duration: Optional[float] = None) -> ScenarioConfig:
    """
    Read and validate a scenario file, applying CLI overrides.

    Raises:
        ConfigError: Missing file, TOML syntax error or validation failure
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    scenario = data.setdefault("scenario", {})
    if isinstance(scenario, dict):
        if seed is not None:
            scenario["seed"] = seed
        if duration is not None:
            scenario["duration_s"] = duration
    return parse_config(data)
