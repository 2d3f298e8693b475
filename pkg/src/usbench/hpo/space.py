"""Search-space description: typed parameters with optional conditional activation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Float:
    low: float
    high: float
    log: bool = False

    def sample(self, rng) -> float:
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def contains(self, value) -> bool:
        return isinstance(value, (int, float)) and self.low <= value <= self.high

    def problems(self) -> list[str]:
        out = []
        if not self.low < self.high:
            out.append(f"low {self.low} must be < high {self.high}")
        if self.log and self.low <= 0:
            out.append(f"log scale needs low > 0, got {self.low}")
        return out


@dataclass(frozen=True)
class Integer:
    low: int
    high: int

    def sample(self, rng) -> int:
        return int(rng.integers(self.low, self.high + 1))

    def contains(self, value) -> bool:
        return float(value).is_integer() and self.low <= value <= self.high

    def problems(self) -> list[str]:
        return [] if self.low < self.high else [f"low {self.low} must be < high {self.high}"]


@dataclass(frozen=True)
class Categorical:
    choices: tuple

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))

    def sample(self, rng):
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, value) -> bool:
        return value in self.choices

    def index(self, value) -> int:
        return self.choices.index(value)

    def problems(self) -> list[str]:
        out = []
        if not self.choices:
            out.append("choices must be non-empty")
        elif len(set(map(repr, self.choices))) != len(self.choices):
            out.append(f"duplicate choices in {list(self.choices)}")
        return out


Distribution = Union[Float, Integer, Categorical]


@dataclass(frozen=True)
class Condition:
    """Activate a parameter only when categorical ``parent`` takes one of ``values``."""

    parent: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


class SearchSpace:
    def __init__(self, params: dict, conditions: Optional[dict] = None):
        self.params = dict(params)
        self.conditions = dict(conditions or {})
        problems = self.problems()
        if problems:
            raise ConfigError("invalid search space: " + "; ".join(problems))
        self.order = self._topological_order()

    def problems(self) -> list[str]:
        out = []
        for name, dist in self.params.items():
            out += [f"{name}: {p}" for p in dist.problems()]
        for child, cond in self.conditions.items():
            if child not in self.params:
                out.append(f"condition on unknown parameter {child!r}")
            parent = self.params.get(cond.parent)
            if parent is None:
                out.append(f"{child}: unknown parent {cond.parent!r}")
            elif not isinstance(parent, Categorical):
                out.append(f"{child}: parent {cond.parent!r} must be categorical")
            elif any(v not in parent.choices for v in cond.values):
                out.append(f"{child}: activating values {list(cond.values)} not all in parent choices")
        if not out:
            try:
                self._topological_order()
            except ConfigError as exc:
                out.append(str(exc))
        return out

    def _topological_order(self) -> list[str]:
        order, state = [], {}

        def visit(name, path):
            if state.get(name) == "done":
                return
            if state.get(name) == "active":
                raise ConfigError("conditional parameters form a cycle: " + " -> ".join(path + [name]))
            state[name] = "active"
            cond = self.conditions.get(name)
            if cond is not None:
                visit(cond.parent, path + [name])
            state[name] = "done"
            order.append(name)

        for name in self.params:
            visit(name, [])
        return order

    def __iter__(self):
        return iter(self.order)

    def __getitem__(self, name) -> Distribution:
        return self.params[name]

    def is_active(self, name: str, config: dict) -> bool:
        cond = self.conditions.get(name)
        if cond is None:
            return True
        return cond.parent in config and config[cond.parent] in cond.values

    def active(self, config: dict) -> list[str]:
        return [n for n in self.order if n in config]

    def sample_uniform(self, rng) -> dict:
        """Independent uniform draw (log-uniform for log floats) of every active parameter."""
        config = {}
        for name in self.order:
            if self.is_active(name, config):
                config[name] = self.params[name].sample(rng)
        return config

    # --- (de)serialisation ---

    def to_dict(self) -> dict:
        out = {}
        for name in self.params:
            dist = self.params[name]
            if isinstance(dist, Float):
                entry = {"type": "float", "low": dist.low, "high": dist.high, "log": dist.log}
            elif isinstance(dist, Integer):
                entry = {"type": "int", "low": dist.low, "high": dist.high}
            else:
                entry = {"type": "categorical", "choices": list(dist.choices)}
            cond = self.conditions.get(name)
            if cond is not None:
                entry["condition"] = {"parent": cond.parent, "values": list(cond.values)}
            out[name] = entry
        return {"params": out}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        params, conditions, problems = {}, {}, []
        for name, entry in d.get("params", {}).items():
            kind = entry.get("type")
            try:
                if kind == "float":
                    params[name] = Float(float(entry["low"]), float(entry["high"]), bool(entry.get("log", False)))
                elif kind in ("int", "integer"):
                    params[name] = Integer(int(entry["low"]), int(entry["high"]))
                elif kind == "categorical":
                    params[name] = Categorical(tuple(entry["choices"]))
                else:
                    problems.append(f"{name}: unknown type {kind!r}")
                    continue
            except KeyError as exc:
                problems.append(f"{name}: missing field {exc.args[0]!r}")
                continue
            if "condition" in entry:
                c = entry["condition"]
                conditions[name] = Condition(c["parent"], tuple(c["values"]))
        if problems:
            raise ConfigError("invalid search space: " + "; ".join(problems))
        return cls(params, conditions)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SearchSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))


def to_python(value) -> Any:
    """Strip numpy scalar types so configs serialise cleanly."""
    if isinstance(value, np.generic):
        return value.item()
    return value
