"""Flat ``key = value`` experiment configs with dotted sections.

Grammar (one statement per line)::

    line     := blank | comment | entry
    comment  := '#' any*
    entry    := key ws* '=' ws* value [ws* comment]
    key      := ident ('.' ident)*
    ident    := [A-Za-z_][A-Za-z0-9_]*
    value    := any non-empty text up to an unquoted '#'

Vectors are comma-separated.  Repeated keys are an error, as are keys not in
:data:`DEFAULTS`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")

# key -> default (None: required or derived)
DEFAULTS: dict[str, str | None] = {
    "model.name": "double-well-32",
    "model.csv": None,
    "model.labels": None,
    "model.height": None,
    "model.width": None,
    "model.tilt": None,
    "model.coupling": None,
    "model.field": None,
    "rho": "uniform",
    "kernel.proposal": "default",
    "awh.N": "2000",
    "awh.N_I": "50",
    "awh.seed": "0",
    "awh.update_mode": "log",
    "awh.theta0": "zeros",
    "awh.x0": "0",
    "awh.lambda0": "0",
    "awh.report_anchored": "true",
    "box.bound": "auto",
    "box.lower": None,
    "box.upper": None,
    "observables": "",
    "targets": "mid",
    "output.dir": None,
    "oracle": "on",
    "diagnose.samples": "100",
    "diagnose.seed": "0",
    "diagnose.jensen_instances": "1000",
    "ode.h_step": "0.01",
    "ode.t_end": "200",
    "ode.theta0": "awh",
    "ode.record_every": "10",
    "ode.v_threshold": "1e-6",
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


@dataclass
class Config:
    """Parsed entries plus the line each came from."""

    values: dict[str, str] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)
    source: str = "<config>"

    def raw(self, key: str) -> str | None:
        if key in self.values:
            return self.values[key]
        return DEFAULTS[key]

    def fail(self, key: str, message: str):
        raise ConfigError(message, self.lines.get(key), key)

    def get_str(self, key: str) -> str | None:
        return self.raw(key)

    def get_int(self, key: str) -> int:
        v = self.raw(key)
        try:
            return int(v)
        except (TypeError, ValueError):
            self.fail(key, f"expected an integer, got {v!r}")

    def get_float(self, key: str) -> float:
        v = self.raw(key)
        try:
            return float(v)
        except (TypeError, ValueError):
            self.fail(key, f"expected a number, got {v!r}")

    def get_bool(self, key: str) -> bool:
        v = (self.raw(key) or "").lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        self.fail(key, f"expected on/off, got {v!r}")

    def get_vector(self, key: str) -> list[float] | None:
        v = self.raw(key)
        if v is None:
            return None
        try:
            return [float(t) for t in v.split(",")]
        except ValueError:
            self.fail(key, f"expected comma-separated numbers, got {v!r}")

    def set(self, key: str, value: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        self.values[key] = value

    def resolved(self) -> dict[str, str]:
        out = {k: v for k, v in DEFAULTS.items() if v is not None}
        out.update(self.values)
        return dict(sorted(out.items()))

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.resolved().items())


def parse(text: str, source: str = "<config>") -> Config:
    cfg = Config(source=source)
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"malformed key {key!r}", lineno)
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        if key in cfg.values:
            raise ConfigError(f"duplicate key (first on line {cfg.lines[key]})", lineno, key)
        cfg.values[key] = value
        cfg.lines[key] = lineno
    return cfg


def load(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse(text, str(path))
