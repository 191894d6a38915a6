"""Run configuration: flat ``section.key = value`` text.

Values are numbers, words, whitespace-separated number lists, or ``@path``
references to per-node sidecar files whose lines read ``nodeindex v1 v2 ...``
(nodes not listed get zeros). Relative paths resolve against the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MATERIAL_KEYS = ("alpha", "beta", "gamma", "delta", "lambda", "mu", "nu", "kappa", "epsilon")

KNOWN = {
    "material": set(MATERIAL_KEYS) | {"rho"},
    "mesh": {"path"},
    "scenario": {"kind", "variant", "body_force", "f", "Psi", "F0", "phi", "friction", "g"},
    "solver": {"direct_threshold"},
    "vi": {"tol", "max_iter", "rho", "solver"},
    "output": {"dir", "dtn_cache"},
    "sensitivity": {"dg", "dF0", "dphi", "scales"},
}

# number of values per node for scenario data fields
FIELD_WIDTH = {"body_force": 6, "f": 6, "Psi": 6, "F0": 1, "phi": 3, "friction": 1, "g": 1, "dg": 1, "dF0": 1, "dphi": 3}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict
    base: Path = field(default_factory=Path.cwd)
    lines: dict = field(default_factory=dict)

    def has(self, key: str) -> bool:
        return key in self.values

    def raw(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"missing key {key}")
        return self.values[key]

    def get_float(self, key: str, default=None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing key {key}")
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"line {self.lines.get(key)}: {key} must be a number, got {self.values[key]!r}") from None

    def get_int(self, key: str, default=None) -> int:
        v = self.get_float(key, default)
        if v != int(v):
            raise ConfigError(f"line {self.lines.get(key)}: {key} must be an integer")
        return int(v)

    def get_str(self, key: str, default=None) -> str:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing key {key}")
            return default
        return self.values[key]

    def path(self, key: str, default=None) -> Path | None:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing key {key}")
            return None if default is False else Path(default)
        p = Path(self.values[key])
        return p if p.is_absolute() else self.base / p

    def node_field(self, key: str, n_nodes: int) -> np.ndarray | None:
        """Per-node array (n_nodes, width) from a constant list or a sidecar file."""
        if key not in self.values:
            return None
        width = FIELD_WIDTH[key.split(".")[-1]]
        text = self.values[key]
        if text.startswith("@"):
            return _read_sidecar(self._resolve(text[1:]), width, n_nodes)
        try:
            vals = np.array([float(t) for t in text.split()])
        except ValueError:
            raise ConfigError(f"line {self.lines.get(key)}: {key} must be {width} number(s) or @file") from None
        if vals.size != width:
            raise ConfigError(f"line {self.lines.get(key)}: {key} needs {width} value(s), got {vals.size}")
        return np.tile(vals, (n_nodes, 1))

    def _resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q


def _read_sidecar(path: Path, width: int, n_nodes: int) -> np.ndarray:
    if not path.exists():
        raise ConfigError(f"sidecar file {path} not found")
    out = np.zeros((n_nodes, width))
    seen = set()
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        s = raw.split("#", 1)[0].split()
        if not s:
            continue
        if len(s) != width + 1:
            raise ConfigError(f"{path}:{ln}: expected node index and {width} value(s)")
        try:
            i = int(s[0])
            vals = [float(t) for t in s[1:]]
        except ValueError:
            raise ConfigError(f"{path}:{ln}: malformed number") from None
        if not 0 <= i < n_nodes:
            raise ConfigError(f"{path}:{ln}: node index {i} outside 0..{n_nodes - 1}")
        if i in seen:
            raise ConfigError(f"{path}:{ln}: node {i} listed twice")
        seen.add(i)
        out[i] = vals
    return out


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    values, lines = {}, {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"line {ln}: expected 'section.key = value'")
        key, val = (t.strip() for t in s.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {ln}: key {key!r} has no section")
        sec, name = key.split(".", 1)
        if sec not in KNOWN:
            raise ConfigError(f"line {ln}: unknown section {sec!r}")
        if name not in KNOWN[sec]:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        if not val:
            raise ConfigError(f"line {ln}: empty value for {key!r}")
        values[key] = val
        lines[key] = ln
    return RunConfig(values, base or Path.cwd(), lines)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), path.parent.resolve())


def material_from(cfg: RunConfig):
    from .material import MaterialParams

    kw = {("lam" if k == "lambda" else k): cfg.get_float(f"material.{k}") for k in MATERIAL_KEYS}
    kw["rho"] = cfg.get_float("material.rho", 1.0)
    return MaterialParams(**kw)
