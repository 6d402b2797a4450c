"""JSON run configuration: named systems, metrics, samplers, solvers and interconnections.

Everything is referenced by name.  Names that are not declared fall back to
the builtins (``pendulum``, ``vanderpol``, ``rotation`` for systems,
``identity`` for metrics), so a command line like ``certify pendulum
identity`` works without any config file.

Example document::

    {
      "seed": 7,
      "systems": {
        "lin12": {"builtin": "linear", "matrix": [[-1, 0], [0, -2]]},
        "osc": {"equations": ["dx0 = x1", "dx1 = -x0 - c*x1"], "params": {"c": 0.3},
                "box": [[-2, 2], [-2, 2]]}
      },
      "metrics": {"scaled": {"kind": "block_scaling", "blocks": [[1, 1.0], [1, 2.0]]},
                  "wobble": {"kind": "storage", "gamma": "0.1*sin(t)", "bound": 0.1}},
      "samplers": {"fine": {"kind": "grid", "points": 201}},
      "solvers": {"long": {"horizon": 500, "step": 0.01}},
      "combine": {"pair": {"kind": "parallel", "a": "pendulum", "b": "pendulum"}}
    }
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from . import systems as _systems
from .combine import CompositeSystem, composite_from_spec
from .errors import ConfigError, WeakonError
from .metrics import (BlockScalingMetric, ConstantMetric, IdentityMetric, MetricTransform,
                      StorageFunction)
from .sampling import Sampler
from .systems import SystemModel
from .flow import SolverConfig

__all__ = ["RunConfig", "load_config", "config_hash"]

_SECTIONS = ("systems", "metrics", "samplers", "solvers", "combine")


def config_hash(doc: Mapping) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class RunConfig:
    doc: dict = field(default_factory=dict)
    seed: int | None = None
    out: str | None = None

    def __post_init__(self):
        if not isinstance(self.doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(self.doc) - set(_SECTIONS) - {"seed", "out"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for sec in _SECTIONS:
            if not isinstance(self.doc.get(sec, {}), dict):
                raise ConfigError(f"'{sec}' must map names to definitions")
        if self.seed is None:
            self.seed = self.doc.get("seed")
        if self.out is None:
            self.out = self.doc.get("out")
        self._cache: dict = {}
        self._validate_refs()

    @property
    def hash(self) -> str:
        return config_hash(self.doc)

    def section(self, name: str) -> dict:
        return self.doc.get(name, {})

    def _validate_refs(self) -> None:
        for name, spec in self.section("combine").items():
            for side in ("a", "b"):
                ref = spec.get(side) if isinstance(spec, dict) else None
                if not isinstance(ref, str):
                    raise ConfigError(f"combine {name!r}: '{side}' must name a system")
                known = (ref in self.section("systems") or ref in self.section("combine")
                         or ref in _systems.BUILTINS)
                if not known or ref == name:
                    raise ConfigError(f"combine {name!r}: unresolved system {ref!r}")
        for name, spec in self.section("metrics").items():
            base = spec.get("base") if isinstance(spec, dict) else None
            if base is not None and base not in self.section("metrics") and base != "identity":
                raise ConfigError(f"metric {name!r}: unresolved base metric {base!r}")
        for name, spec in self.section("samplers").items():
            if isinstance(spec, dict) and spec.get("kind") == "random":
                if spec.get("seed", self.seed) is None:
                    raise ConfigError(f"sampler {name!r} is random but no seed is configured")

    # -- systems -------------------------------------------------------------

    def system(self, ref: str) -> SystemModel:
        key = ("system", ref)
        if key not in self._cache:
            self._cache[key] = self._build_system(ref)
        return self._cache[key]

    def _build_system(self, ref: str) -> SystemModel:
        spec = self.section("systems").get(ref)
        if spec is None:
            if ref in self.section("combine"):
                return self.composite(ref)
            if ref in _systems.BUILTINS and ref != "linear":
                return _systems.builtin(ref)
            raise ConfigError(f"unresolved system {ref!r}")
        if not isinstance(spec, dict):
            raise ConfigError(f"system {ref!r} must be an object")
        try:
            if "builtin" in spec:
                kind = spec["builtin"]
                if kind == "linear":
                    if "matrix" not in spec:
                        raise ConfigError(f"system {ref!r}: linear builtin needs 'matrix'")
                    sysm = _systems.linear(spec["matrix"], spec.get("box"), name=ref)
                else:
                    kw = dict(spec.get("params") or {})
                    if spec.get("box") is not None:
                        kw["box"] = spec["box"]
                    sysm = _systems.builtin(kind, **kw)
            elif "dsl" in spec:
                sysm = _systems.from_dsl(spec["dsl"], ref, spec.get("box"), spec.get("params"))
            elif "equations" in spec:
                sysm = _systems.from_json({**spec, "name": ref})
            else:
                raise ConfigError(f"system {ref!r} needs 'builtin', 'dsl' or 'equations'")
        except TypeError as exc:
            raise ConfigError(f"system {ref!r}: {exc}") from None
        if spec.get("metric") is not None:
            sysm = sysm.with_metric(self.metric(spec["metric"], sysm.n))
        return sysm

    def composite(self, ref: str) -> CompositeSystem:
        spec = self.section("combine").get(ref)
        if spec is None:
            raise ConfigError(f"unresolved interconnection {ref!r}")
        key = ("combine", ref)
        if key not in self._cache:
            self._cache[key] = composite_from_spec({"name": ref, **spec}, self.system)
        return self._cache[key]

    # -- metrics -------------------------------------------------------------

    def metric(self, ref: str | None, n: int) -> MetricTransform | None:
        """Metric for dimension ``n``; storage entries resolve to their base metric."""
        base, _ = self.metric_and_storage(ref, n)
        return base

    def metric_and_storage(self, ref: str | None, n: int):
        if ref is None or (ref == "identity" and ref not in self.section("metrics")):
            return IdentityMetric(n), None
        spec = self.section("metrics").get(ref)
        if spec is None:
            raise ConfigError(f"unresolved metric {ref!r}")
        kind = spec.get("kind")
        if kind == "identity":
            return IdentityMetric(n), None
        if kind == "constant":
            m = ConstantMetric(spec["matrix"])
        elif kind == "block_scaling":
            m = BlockScalingMetric([tuple(b) for b in spec["blocks"]])
        elif kind == "storage":
            base, inner = self.metric_and_storage(spec.get("base"), n)
            if inner is not None:
                raise ConfigError(f"metric {ref!r}: storage functions do not nest")
            return base, self.storage(ref, n)
        else:
            raise ConfigError(f"metric {ref!r}: unknown kind {kind!r}")
        if m.n != n:
            raise ConfigError(f"metric {ref!r} has dimension {m.n}, system has {n}")
        return m, None

    def storage(self, ref: str, n: int) -> StorageFunction:
        spec = self.section("metrics").get(ref)
        if spec is None or spec.get("kind") != "storage":
            raise ConfigError(f"{ref!r} is not a storage metric")
        if "gamma" not in spec:
            raise ConfigError(f"storage metric {ref!r} needs 'gamma'")
        return StorageFunction.from_dsl(spec["gamma"], n, spec.get("bound"), spec.get("params"))

    # -- samplers and solvers ------------------------------------------------

    def sampler(self, ref: str | None, system: SystemModel) -> Sampler | None:
        if ref is None:
            return None
        spec = self.section("samplers").get(ref)
        if spec is None:
            raise ConfigError(f"unresolved sampler {ref!r}")
        spec = dict(spec)
        kind = spec.pop("kind", "grid")
        box = spec.pop("box", None)
        box = system.box if box is None else box
        if kind == "random":
            spec.setdefault("seed", self.seed)
        try:
            return Sampler(kind, box, **spec)
        except TypeError as exc:
            raise ConfigError(f"sampler {ref!r}: {exc}") from None

    def solver(self, ref: str | None, **overrides) -> SolverConfig:
        spec = {}
        if ref is not None:
            if ref not in self.section("solvers"):
                raise ConfigError(f"unresolved solver {ref!r}")
            spec = dict(self.section("solvers")[ref])
        allowed = {f.name for f in fields(SolverConfig)}
        bad = set(spec) - allowed
        if bad:
            raise ConfigError(f"solver {ref!r}: unknown fields {sorted(bad)}")
        spec.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig(**spec)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    try:
        return RunConfig(doc)
    except WeakonError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None

