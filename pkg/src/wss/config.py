"""Study configuration: a JSON document checked against an embedded schema."""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .mcpmod import TABLE1_DELTA, TABLE1_DOSES, DoseResponseModel, table1_models
from .study import STRATEGIES, McpModScenario, RegressionScenario

__all__ = [
    "MODES",
    "ConfigError",
    "StudyConfig",
    "load_schema",
    "load_config",
    "validate_document",
    "regression_scenarios",
    "mcpmod_scenarios",
    "candidate_models",
    "default_config",
]

MODES = ("fit", "sim-regression", "sim-mcpmod", "contrasts", "med")
CONFIG_SCHEMA_ID = "wss/config/1"


class ConfigError(ValueError):
    """Unreadable or invalid configuration."""


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """One of the JSON schemas shipped with the package (``config``,
    ``report`` or ``manifest``)."""
    text = resources.files("wss").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_document(doc, name: str) -> None:
    """Raise :class:`ConfigError` if ``doc`` violates schema ``name``."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{name} document invalid at {where}: {e.message}")


def _plain(obj):
    """JSON-normal form (tuples become lists) so that equality survives a
    serialize/parse round trip."""
    return json.loads(json.dumps(obj))


@dataclass(frozen=True)
class StudyConfig:
    mode: str
    seed: int = 42
    replicates: int | None = None
    strategies: tuple = STRATEGIES
    format: str = "csv"
    out: str = "wss-out"
    workers: int | None = None
    keep_records: bool = False
    regression: dict = field(default_factory=dict)
    mcpmod: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    contrasts: dict = field(default_factory=dict)
    med: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        for name in ("regression", "mcpmod", "fit", "contrasts", "med"):
            object.__setattr__(self, name, _plain(dict(getattr(self, name))))
        validate_document(self.to_dict(), "config")

    def to_dict(self) -> dict:
        d = {"schema": CONFIG_SCHEMA_ID}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else copy.deepcopy(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        validate_document(doc, "config")
        kwargs = {k: v for k, v in doc.items() if k != "schema"}
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "StudyConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def replace(self, **changes) -> "StudyConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return StudyConfig.from_dict(d)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form, leaving out the execution
        details (``workers``, ``out``) that cannot change the results."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("workers", "out")}
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path) -> StudyConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    return StudyConfig.from_json(text)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def regression_scenarios(cfg: StudyConfig) -> list[RegressionScenario]:
    """One scenario per (n, censoring rate) combination of the config."""
    block = dict(cfg.regression)
    ns = _as_list(block.pop("n", 20))
    rates = _as_list(block.pop("censor_rate", 0.25))
    if "psi" in block:
        block["psi"] = tuple(block["psi"])
    if cfg.replicates is not None:
        block["replicates"] = cfg.replicates
    try:
        return [RegressionScenario(n=n, censor_rate=c, **block) for n, c in itertools.product(ns, rates)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid regression scenario: {exc}") from None


def mcpmod_scenarios(cfg: StudyConfig) -> list[McpModScenario]:
    """One scenario per (true model, n per dose, censoring rate) combination."""
    block = dict(cfg.mcpmod)
    truths = _as_list(block.pop("true_model", "Emax"))
    ns = _as_list(block.pop("n_per_dose", 10))
    rates = _as_list(block.pop("censor_rate", 0.10))
    if "doses" in block:
        block["doses"] = tuple(block["doses"])
    if cfg.replicates is not None:
        block["replicates"] = cfg.replicates
    block["strategies"] = cfg.strategies
    try:
        return [
            McpModScenario(true_model=t, n_per_dose=n, censor_rate=c, **block)
            for t, n, c in itertools.product(truths, ns, rates)
        ]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid MCP-Mod scenario: {exc}") from None


def candidate_models(block: dict) -> tuple[list[DoseResponseModel], list[float]]:
    """Candidate curves and doses from a ``contrasts``/``med`` block.

    Entries may be family names (the standard guess-based set for the doses)
    or objects with explicit nonlinear parameters.
    """
    doses = [float(d) for d in block.get("doses", TABLE1_DOSES)]
    try:
        standard = table1_models(doses)
    except ValueError as exc:
        raise ConfigError(f"invalid doses: {exc}") from None
    entries = block.get("candidates", list(standard))
    models = []
    for e in entries:
        if isinstance(e, str):
            models.append(standard[e])
            continue
        base = standard[e["family"]]
        try:
            models.append(DoseResponseModel(
                e["family"],
                float(e.get("theta0", base.theta0)),
                float(e.get("theta1", base.theta1)),
                tuple(e.get("nonlinear", base.nonlinear)),
                e.get("scal", base.scal),
            ))
        except ValueError as exc:
            raise ConfigError(f"invalid candidate {e}: {exc}") from None
    return models, doses


def default_config(mode: str) -> StudyConfig:
    """A ready-to-edit configuration for ``mode``."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    extra = {
        "fit": {"fit": {"data": "sample.csv", "sigma": 1.0}},
        "sim-regression": {"regression": {"p": 3, "n": [20, 50], "sigma": 1.0, "censor_rate": 0.25,
                                          "q": 1, "psi": [0.05, 0.10, 0.25, 0.50], "alpha": 0.05},
                           "replicates": 2000},
        "sim-mcpmod": {"mcpmod": {"true_model": "Emax", "n_per_dose": [5, 10, 25], "sigma": 0.5,
                                  "censor_rate": 0.10, "delta": TABLE1_DELTA, "alpha": 0.05,
                                  "doses": list(TABLE1_DOSES)},
                       "replicates": 500},
        "contrasts": {"contrasts": {"doses": list(TABLE1_DOSES), "n_per_dose": 10, "alpha": 0.05}},
        "med": {"med": {"doses": list(TABLE1_DOSES), "delta": TABLE1_DELTA}},
    }[mode]
    return StudyConfig(mode=mode, **extra)
