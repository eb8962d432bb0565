"""Pipeline configuration: one JSON file, per-run flag overrides win.

Relative paths resolve against the config file's directory so fixture
bundles stay relocatable.  Secrets are only ever named indirectly through
environment variables.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .oracles import HttpChatOracle, Oracle, PromptLibrary, ScriptedOracle

logger = logging.getLogger(__name__)


@dataclass
class Params:
    k1: int = 10
    k2: int = 100
    trials: int = 100
    seed: int = 0
    tag_threshold: float = 85.0
    eval_threshold: float = 85.0
    min_descendants: int = 10
    retry_budget: int = 3
    mcq_retry_budget: int = 2
    rank_cap: int = 100
    recurse_after_moderate: bool = False
    normalize_objective: bool = False
    jobs: int = 1
    domain: str = "science"

    def validate(self) -> None:
        if self.k1 < 1 or self.k2 < 1 or self.trials < 1:
            raise ConfigError("k1, k2 and trials must all be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_record(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "trials": self.trials,
            "seed": self.seed,
            "tag_threshold": self.tag_threshold,
            "eval_threshold": self.eval_threshold,
            "min_descendants": self.min_descendants,
            "retry_budget": self.retry_budget,
            "mcq_retry_budget": self.mcq_retry_budget,
            "rank_cap": self.rank_cap,
            "recurse_after_moderate": self.recurse_after_moderate,
            "normalize_objective": self.normalize_objective,
            "jobs": self.jobs,
            "domain": self.domain,
        }


@dataclass
class PipelineConfig:
    base_dir: Path
    paths: dict[str, object] = field(default_factory=dict)
    params: Params = field(default_factory=Params)
    oracle_specs: dict[str, object] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        params_raw = raw.get("params", {})
        known = set(Params.__dataclass_fields__)
        unknown = sorted(set(params_raw) - known)
        if unknown:
            raise ConfigError(f"unknown parameter(s) in config: {', '.join(unknown)}")
        params = Params(**params_raw)
        params.validate()
        cfg = cls(
            base_dir=path.parent.resolve(),
            paths=raw.get("paths", {}),
            params=params,
            oracle_specs=raw.get("oracles", {}),
        )
        return cfg

    # -- paths ------------------------------------------------------------

    def resolve(self, value: str | Path) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config is missing required path {key!r}")
            return None
        return self.resolve(str(value))

    def path_list(self, key: str, required: bool = True) -> list[Path]:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config is missing required path list {key!r}")
            return []
        if isinstance(value, str):
            value = [value]
        return [self.resolve(str(v)) for v in value]

    def out_dir(self, override: str | None = None) -> Path:
        out = Path(override) if override else self.path("out_dir", required=False)
        if out is None:
            raise ConfigError("no output directory configured (paths.out_dir or --out-dir)")
        out.mkdir(parents=True, exist_ok=True)
        return out

    def prompt_library(self) -> PromptLibrary:
        prompts_dir = self.path("prompts_dir", required=False)
        return PromptLibrary(prompts_dir)

    # -- oracles ----------------------------------------------------------

    def _build_oracle(self, spec: dict, default_name: str) -> Oracle:
        kind = spec.get("kind")
        name = spec.get("name", default_name)
        if kind == "scripted":
            fixtures = spec.get("fixtures")
            routes = spec.get("routes")
            return ScriptedOracle.from_files(
                name=name,
                fixtures_path=self.resolve(fixtures) if fixtures else None,
                routes_path=self.resolve(routes) if routes else None,
            )
        if kind == "http":
            try:
                return HttpChatOracle(
                    base_url=spec["base_url"],
                    model=spec["model"],
                    name=name,
                    api_key_env=spec.get("api_key_env"),
                    temperature=float(spec.get("temperature", 0.0)),
                    max_tokens=int(spec.get("max_tokens", 1024)),
                    timeout=float(spec.get("timeout", 60.0)),
                    attempts=int(spec.get("attempts", self.params.retry_budget)),
                )
            except KeyError as exc:
                raise ConfigError(f"http oracle {name!r} is missing field {exc}")
        raise ConfigError(f"oracle {default_name!r} has unknown kind {kind!r}")

    def oracle(self, key: str, required: bool = True) -> Oracle | None:
        spec = self.oracle_specs.get(key)
        if spec is None:
            if required:
                raise ConfigError(f"config is missing oracle {key!r}")
            return None
        if not isinstance(spec, dict):
            raise ConfigError(f"oracle {key!r} must be an object")
        return self._build_oracle(spec, key)

    def oracle_list(self, key: str, required: bool = True) -> list[Oracle]:
        specs = self.oracle_specs.get(key)
        if specs is None:
            if required:
                raise ConfigError(f"config is missing oracle list {key!r}")
            return []
        if isinstance(specs, dict):
            specs = [specs]
        return [
            self._build_oracle(spec, f"{key}[{i}]") for i, spec in enumerate(specs)
        ]

    def model_oracles(self) -> dict[str, Oracle]:
        specs = self.oracle_specs.get("models", {})
        if not isinstance(specs, dict):
            raise ConfigError("oracles.models must map model names to endpoints")
        return {
            name: self._build_oracle(spec, name) for name, spec in sorted(specs.items())
        }
