"""Run configuration: one ``key = value`` file with sections.

Every key has a type and a default; parsing validates types and names the
offending ``section.key``.  ``dumps`` writes every key in schema order, so
``loads(dumps(loads(text)))`` equals ``loads(text)``.
"""
from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from pathlib import Path

from .experiments import ConfigError, ExperimentConfig


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _floats(s: str) -> tuple[float, ...]:
    out = []
    for v in s.replace(",", " ").split():
        if "/" in v:
            a, b = v.split("/")
            out.append(float(a) / float(b))
        else:
            out.append(float(v))
    return tuple(out)


def _points(s: str) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(c) for c in p.split(",")) for p in s.split(";") if p.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_PARSERS = {"int": int, "float": float, "str": str.strip, "bool": _bool, "ints": _ints, "floats": _floats, "points": _points}


def _fmt(kind: str, value) -> str:
    if kind in ("ints", "floats"):
        return " ".join(repr(v) for v in value)
    if kind == "points":
        return "; ".join(",".join(str(c) for c in p) for p in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "seed": ("int", 0),
        "threads": ("int", 1),
        "route": ("str", "loops"),
        "replicas": ("int", 1000),
        "out": ("str", "out"),
    },
    "lattice": {
        "d": ("int", 7),
        "box_radius": ("int", 8),
        "K_max": ("int", 512),
    },
    "estimate": {
        "experiments": ("str", "pi1"),
        "r_grid": ("ints", (2, 3, 4)),
        "x_list": ("points", ()),
        "beta": ("float", 8.0),
        "extra_betas": ("floats", ()),
        "chemical_mode": ("str", "point"),
        "kappa": ("float", 0.5),
        "M_grid": ("floats", (1.0, 2.0, 4.0)),
        "pool_orbit": ("bool", True),
    },
    "werner": {
        "r": ("int", 3),
        "beta": ("float", 8.0),
        "b_grid": ("floats", (1.0, 4.0 / 3.0, 2.0)),
    },
    "sample": {
        "kind": ("str", "field"),
        "replica": ("int", 0),
    },
    "chains": {
        "instances": ("int", 1000),
    },
}

EXPERIMENTS = ("pi1", "two_point", "local_connectivity", "chemical", "intrinsic_one_arm")


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        kind, _ = SCHEMA[section][key]
        self.values[section][key] = _PARSERS[kind](value) if isinstance(value, str) else value

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def experiment(self) -> ExperimentConfig:
        run, lat, est = self["run"], self["lattice"], self["estimate"]
        cfg = ExperimentConfig(
            d=lat["d"], route=run["route"], box_radius=lat["box_radius"], replicas=run["replicas"],
            seed=run["seed"], threads=run["threads"], K_max=lat["K_max"], r_grid=est["r_grid"],
            x_list=est["x_list"], beta=est["beta"], b_grid=self["werner"]["b_grid"], kappa=est["kappa"],
            M_grid=est["M_grid"], pool_orbit=est["pool_orbit"],
        )
        return cfg.validate()

    def experiments(self) -> list[str]:
        names = [n.strip() for n in str(self["estimate"]["experiments"]).split(",") if n.strip()]
        for n in names:
            if n not in EXPERIMENTS:
                raise ConfigError("estimate.experiments", f"unknown experiment {n!r}; choose from {EXPERIMENTS}")
        return names

    def as_json(self) -> str:
        return json.dumps(self.values, sort_keys=True)


def defaults() -> RunConfig:
    return RunConfig({s: {k: v for k, (_, v) in keys.items()} for s, keys in SCHEMA.items()})


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from exc
    cfg = defaults()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section; expected one of {sorted(SCHEMA)}")
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            kind, _ = SCHEMA[section][key]
            try:
                cfg.values[section][key] = _PARSERS[kind](raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", f"expected {kind}: {exc}") from exc
    return cfg


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return loads(text)


def dumps(cfg: RunConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (kind, _) in keys.items():
            lines.append(f"{key} = {_fmt(kind, cfg.values[section][key])}")
        lines.append("")
    return "\n".join(lines)
