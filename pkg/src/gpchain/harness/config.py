"""Experiment configuration: a TOML file with strictly validated sections.

Every accepted key is listed in SCHEMA below; anything else is a ConfigError
naming the offending field path (for example ``grid.n``).
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ..errors import ConfigError

KINDS = ("soliton-table", "spectrum", "evolve", "modulate", "track",
         "chain-stability", "monotonicity", "momentum-transfer")
CHAIN_KINDS = ("chain-stability", "monotonicity", "momentum-transfer")

_num = (int, float)

# section -> key -> (accepted types, default); default REQUIRED marks mandatory keys
REQUIRED = object()
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"n": (int, REQUIRED), "length": (_num, REQUIRED)},
    "chain": {"speeds": (list, REQUIRED), "positions": (list, REQUIRED)},
    "perturbation": {"type": (str, "none"), "seed": (int, 0), "xnorm": (_num, 0.0),
                     "k_frac": (_num, 0.125), "base_n": (int, None)},
    "solver": {"t_end": (_num, 1.0), "dt_cfl_factor": (_num, 0.4), "output_interval": (_num, 0.5),
               "output_stride": (int, None), "dealias": (bool, True), "guard_threshold": (_num, 1.0 - 1e-3),
               "dt": (_num, None), "direction": (str, "forward")},
    "weights": {"tau": (_num, None), "l1": (_num, None)},
    "spectrum": {"speed": (_num, REQUIRED), "operators": (list, ["L", "H"]), "n_eig": (int, 24),
                 "coercivity": (bool, True)},
    "table": {"speeds": (list, [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4])},
    "modulate": {"snapshot": (str, None), "n_solitons": (int, None), "solver": (str, "newton")},
    "track": {"trajectory": (str, REQUIRED), "n_solitons": (int, None)},
    "output": {"dir": (str, "out"), "snapshots": (bool, False)},
    "assertions": {"enabled": (bool, True), "bound_factor": (_num, 20.0)},
}

NEEDS = {
    "soliton-table": (),
    "spectrum": ("grid", "spectrum"),
    "evolve": ("grid",),
    "modulate": (),
    "track": ("track",),
    "chain-stability": ("grid", "chain"),
    "monotonicity": ("grid", "chain"),
    "momentum-transfer": ("grid", "chain"),
}


@dataclass
class ExperimentConfig:
    kind: str
    sections: dict = field(default_factory=dict)
    source: Optional[Path] = None

    def get(self, section: str, key: str, default: Any = None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section: str) -> bool:
        return section in self.sections and self.sections[section].get("_present", False)

    def section(self, name: str) -> dict:
        return {k: v for k, v in self.sections.get(name, {}).items() if k != "_present"}

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in self.sections:
            if self.has(name):
                out[name] = self.section(name)
        return out


def _check_type(path: str, value, types) -> Any:
    if types is _num or types == (int, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {type(value).__name__}")
        return float(value)
    if types is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
    if types is bool and not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {type(value).__name__}")
    if types is str and not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {type(value).__name__}")
    if types is list and not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {type(value).__name__}")
    return value


def _num_list(path: str, values) -> list:
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}[{i}]", "expected a number")
        out.append(float(v))
    return out


def validate(raw: dict, source: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a table")
    if "kind" not in raw:
        raise ConfigError("kind", "missing required field")
    kind = raw["kind"]
    if kind not in KINDS:
        raise ConfigError("kind", f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    sections = {}
    for name, body in raw.items():
        if name == "kind":
            continue
        if name not in SCHEMA:
            raise ConfigError(name, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(name, "expected a table")
        for key in body:
            if key not in SCHEMA[name]:
                raise ConfigError(f"{name}.{key}", "unknown key")
    for name in NEEDS[kind]:
        if name not in raw:
            # report the first mandatory key of a missing section
            first = next((k for k, (_, d) in SCHEMA[name].items() if d is REQUIRED), None)
            raise ConfigError(f"{name}.{first}" if first else name, "missing required field")
    for name, keys in SCHEMA.items():
        body = raw.get(name, {})
        present = name in raw
        vals = {"_present": present}
        for key, (types, default) in keys.items():
            path = f"{name}.{key}"
            if key in body:
                vals[key] = _check_type(path, body[key], types)
            elif default is REQUIRED:
                if present:
                    raise ConfigError(path, "missing required field")
                vals[key] = None
            else:
                vals[key] = default
        sections[name] = vals
    cfg = ExperimentConfig(kind, sections, source)
    _semantic_checks(cfg)
    return cfg


def _semantic_checks(cfg: ExperimentConfig) -> None:
    s = cfg.sections
    if cfg.has("grid"):
        n = s["grid"]["n"]
        if n < 16 or n & (n - 1):
            raise ConfigError("grid.n", "must be a power of two >= 16")
        if not s["grid"]["length"] > 0:
            raise ConfigError("grid.length", "must be positive")
    if cfg.has("chain"):
        sp = _num_list("chain.speeds", s["chain"]["speeds"])
        pos = _num_list("chain.positions", s["chain"]["positions"])
        if not sp:
            raise ConfigError("chain.speeds", "must not be empty")
        if len(sp) != len(pos):
            raise ConfigError("chain.positions", "must have one entry per speed")
        for i, c in enumerate(sp):
            if c == 0 or abs(c) >= 2 ** 0.5:
                raise ConfigError(f"chain.speeds[{i}]", "speed must satisfy 0 < |c| < sqrt(2)")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ConfigError("chain.positions", "must be strictly increasing")
        s["chain"]["speeds"], s["chain"]["positions"] = sp, pos
        direction = s["solver"]["direction"]
        if cfg.kind in ("monotonicity", "momentum-transfer") and len(sp) > 1:
            inc = all(b > a for a, b in zip(sp, sp[1:]))
            dec = all(b < a for a, b in zip(sp, sp[1:]))
            if direction == "forward" and not inc:
                raise ConfigError("chain.speeds", "must be strictly increasing for a forward run")
            if direction == "backward" and not dec:
                raise ConfigError("chain.speeds", "must be strictly decreasing for a backward run")
    pt = s["perturbation"]["type"]
    if pt not in ("none", "smooth-random"):
        raise ConfigError("perturbation.type", "must be 'none' or 'smooth-random'")
    if s["perturbation"]["xnorm"] < 0:
        raise ConfigError("perturbation.xnorm", "must be non-negative")
    sv = s["solver"]
    if sv["direction"] not in ("forward", "backward"):
        raise ConfigError("solver.direction", "must be 'forward' or 'backward'")
    if not 0 < sv["dt_cfl_factor"] <= 1:
        raise ConfigError("solver.dt_cfl_factor", "must lie in (0, 1]")
    if not sv["guard_threshold"] < 1:
        raise ConfigError("solver.guard_threshold", "must be below 1")
    if sv["t_end"] < 0:
        raise ConfigError("solver.t_end", "must be non-negative")
    if sv["output_interval"] is not None and not sv["output_interval"] > 0:
        raise ConfigError("solver.output_interval", "must be positive")
    if cfg.kind == "soliton-table":
        sp = _num_list("table.speeds", s["table"]["speeds"])
        for i, c in enumerate(sp):
            if c == 0 or abs(c) >= 2 ** 0.5:
                raise ConfigError(f"table.speeds[{i}]", "speed must satisfy 0 < |c| < sqrt(2)")
        s["table"]["speeds"] = sp
    if cfg.kind == "spectrum":
        c = s["spectrum"]["speed"]
        if c == 0 or abs(c) >= 2 ** 0.5:
            raise ConfigError("spectrum.speed", "speed must satisfy 0 < |c| < sqrt(2)")
        for i, op in enumerate(s["spectrum"]["operators"]):
            if op not in ("L", "H"):
                raise ConfigError(f"spectrum.operators[{i}]", "must be 'L' or 'H'")
    if cfg.kind == "modulate":
        if s["modulate"]["snapshot"] is None and not cfg.has("chain"):
            raise ConfigError("modulate.snapshot", "give a snapshot file or a [chain] section")
        if s["modulate"]["solver"] not in ("newton", "contraction"):
            raise ConfigError("modulate.solver", "must be 'newton' or 'contraction'")
        if cfg.has("chain") and not cfg.has("grid") and s["modulate"]["snapshot"] is None:
            raise ConfigError("grid.n", "missing required field")


def parse_config_text(text: str, fmt: str = "toml") -> dict:
    if fmt == "json":
        return json.loads(text)
    return tomllib.loads(text)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError("<file>", f"cannot read {path}: {err}") from err
    try:
        raw = parse_config_text(text, "json" if path.suffix == ".json" else "toml")
    except (ValueError, tomllib.TOMLDecodeError) as err:
        raise ConfigError("<file>", f"cannot parse {path}: {err}") from err
    return validate(raw, path)
