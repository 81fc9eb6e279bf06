"""Run configuration: flat key=value text files with sections.

The format is deliberately plain (configparser INI) so that config
snapshots embedded in run manifests diff cleanly.  Every key is listed
in a schema; unknown keys and malformed values are errors reported per
field, never warnings.
"""

from __future__ import annotations

import configparser
import dataclasses
import math

from .mollifier import PROFILES

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_overrides",
           "snapshot"]


class ConfigError(ValueError):
    """Validation failure; ``problems`` holds one message per field."""

    def __init__(self, problems):
        self.problems = tuple(problems)
        super().__init__("\n".join(self.problems))


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Resolved configuration shared by all subcommands.

    Zeros in ``dt`` and ``dt_path`` mean "derive from epsilon" at the
    point of use (epsilon^2 / 2 for the field solver, epsilon^2 / 4 for
    the path integrator).
    """

    master_seed: int = 1234
    out_dir: str = "out"
    profile: str = "bump"
    r_phi: float = 1.0
    resolution: int = 256
    theta: float = 0.0
    epsilon: float = 0.05
    epsilons: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125)
    grid_n: int = 128
    grid_l: float = 3.2
    dt: float = 0.0
    s: float = 0.0
    t: float = 0.25
    sigma: float = 0.5
    n: int = 2
    m_max: int = 4
    n_paths: int = 20000
    dt_path: float = 0.0
    n_samples: int = 10000
    batch: int = 50
    j_ts: tuple[float, ...] = (0.25, 0.5, 1.0)
    r_values: tuple[float, ...] = (0.5, 2.0, 10.0)
    scaling_ts: tuple[float, ...] = (0.25, 0.5, 1.0)


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    value = float(raw.strip())
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def _parse_str(raw: str) -> str:
    value = raw.strip()
    if not value:
        raise ValueError("empty")
    return value


def _parse_floats(raw: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(_parse_float(p) for p in parts)


def _power_of_two(v) -> bool:
    return v >= 4 and (v & (v - 1)) == 0


# (section, key) -> (attribute, parser, predicate, requirement text)
_SCHEMA = {
    ("run", "master_seed"): ("master_seed", _parse_int,
                             lambda v: v >= 0, "a nonnegative integer"),
    ("run", "out_dir"): ("out_dir", _parse_str, lambda v: True, "a path"),
    ("mollifier", "profile"): ("profile", _parse_str,
                               lambda v: v in PROFILES,
                               f"one of {sorted(PROFILES)}"),
    ("mollifier", "r_phi"): ("r_phi", _parse_float,
                             lambda v: v > 0, "positive"),
    ("mollifier", "resolution"): ("resolution", _parse_int,
                                  lambda v: v >= 16, "an integer >= 16"),
    ("coupling", "theta"): ("theta", _parse_float,
                            lambda v: True, "a finite number"),
    ("coupling", "epsilon"): ("epsilon", _parse_float,
                              lambda v: 0 < v < 1, "in (0, 1)"),
    ("coupling", "epsilons"): ("epsilons", _parse_floats,
                               lambda v: all(0 < e < 1 for e in v),
                               "a list of values in (0, 1)"),
    ("grid", "n"): ("grid_n", _parse_int, _power_of_two,
                    "a power of two >= 4"),
    ("grid", "l"): ("grid_l", _parse_float, lambda v: v > 0, "positive"),
    ("grid", "dt"): ("dt", _parse_float, lambda v: v >= 0,
                     "nonnegative (0 derives it from epsilon)"),
    ("times", "s"): ("s", _parse_float, lambda v: v >= 0, "nonnegative"),
    ("times", "t"): ("t", _parse_float, lambda v: v > 0, "positive"),
    ("tests", "sigma"): ("sigma", _parse_float, lambda v: v > 0,
                         "positive"),
    ("moment", "n"): ("n", _parse_int, lambda v: 1 <= v <= 4, "in 1..4"),
    ("moment", "m_max"): ("m_max", _parse_int, lambda v: 1 <= v <= 6,
                          "in 1..6"),
    ("fk", "n_paths"): ("n_paths", _parse_int, lambda v: v >= 1000,
                        "an integer >= 1000 (the error-bar floor)"),
    ("fk", "dt_path"): ("dt_path", _parse_float, lambda v: v >= 0,
                        "nonnegative (0 derives it from epsilon)"),
    ("spde", "n_samples"): ("n_samples", _parse_int, lambda v: v >= 8,
                            "an integer >= 8"),
    ("spde", "batch"): ("batch", _parse_int, lambda v: v >= 1,
                        "a positive integer"),
    ("jfun", "t_values"): ("j_ts", _parse_floats,
                           lambda v: all(t > 0 for t in v),
                           "a list of positive times"),
    ("scaling", "r_values"): ("r_values", _parse_floats,
                              lambda v: all(r > 0 for r in v),
                              "a list of positive ratios"),
    ("scaling", "t_values"): ("scaling_ts", _parse_floats,
                              lambda v: all(t > 0 for t in v),
                              "a list of positive times"),
}


def parse_overrides(pairs) -> dict[tuple[str, str], str]:
    """Turn ``section.key=value`` strings into a raw-value map."""
    out = {}
    problems = []
    for item in pairs:
        head, sep, value = item.partition("=")
        dotted = head.strip()
        if not sep or "." not in dotted:
            problems.append(f"override {item!r}: expected section.key=value")
            continue
        section, key = dotted.split(".", 1)
        out[(section.strip(), key.strip())] = value.strip()
    if problems:
        raise ConfigError(problems)
    return out


def _read_file(path) -> dict[tuple[str, str], str]:
    parser = configparser.ConfigParser(
        default_section="<none>", interpolation=None, strict=True)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigError([f"config {path}: {exc.strerror}"]) from exc
    except configparser.Error as exc:
        raise ConfigError([f"config {path}: {exc}"]) from exc
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            raw[(section, key)] = value
    return raw


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a validated RunConfig from an optional file plus overrides.

    Later sources win: schema defaults, then the file, then overrides.
    All problems are collected before raising so a bad file is reported
    in one pass.
    """

    raw = _read_file(path) if path is not None else {}
    raw.update(parse_overrides(overrides)
               if not isinstance(overrides, dict) else overrides)
    problems = []
    values = {}
    for (section, key), rawval in sorted(raw.items()):
        entry = _SCHEMA.get((section, key))
        if entry is None:
            problems.append(f"[{section}] {key}: unknown key")
            continue
        attr, parse, check, requirement = entry
        try:
            value = parse(rawval)
        except ValueError:
            problems.append(f"[{section}] {key}: {rawval!r} is not "
                            f"{requirement}")
            continue
        if not check(value):
            problems.append(f"[{section}] {key}: {rawval!r} is not "
                            f"{requirement}")
            continue
        values[attr] = value
    if problems:
        raise ConfigError(problems)
    cfg = RunConfig(**values)
    cross = _cross_checks(cfg)
    if cross:
        raise ConfigError(cross)
    return cfg


def _cross_checks(cfg: RunConfig):
    problems = []
    if cfg.t <= cfg.s:
        problems.append("[times] t: must exceed [times] s")
    h = cfg.grid_l / cfg.grid_n
    if h > cfg.epsilon / 2:
        problems.append(
            f"[grid] n: cell size {h:g} exceeds epsilon/2 = "
            f"{cfg.epsilon / 2:g}; refine the grid or raise epsilon")
    return problems


_ATTR_TO_KEY = {attr: (section, key)
                for (section, key), (attr, *_rest) in _SCHEMA.items()}


def snapshot(cfg: RunConfig) -> dict[str, str]:
    """Canonical flat text form of every key, for run manifests."""
    out = {}
    for field in dataclasses.fields(cfg):
        section, key = _ATTR_TO_KEY[field.name]
        value = getattr(cfg, field.name)
        if isinstance(value, tuple):
            text = ",".join(repr(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        out[f"{section}.{key}"] = text
    return dict(sorted(out.items()))
