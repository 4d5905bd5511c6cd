"""TOML run configuration with per-key validation."""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError

# table -> key -> (types, validator or None)
_NUM = (int, float)
SCHEMA = {
    "model": {
        "kind": ((str,), None),
        "theta": (_NUM, lambda v: v > 0),
        "sigma": (_NUM, lambda v: v > 0),
        "sigma0": (_NUM, None),
        "amplitude": (_NUM, lambda v: 0 <= v < 1),
        "d": ((int,), lambda v: v >= 1),
        "A": ((list,), None),
        "box": ((list,), lambda v: len(v) == 2 and float(v[0]) < float(v[1])),
    },
    "simulate": {
        "dt": (_NUM, lambda v: v > 0),
        "horizon": (_NUM, lambda v: v > 0),
        "burn_in": (_NUM, lambda v: v >= 0),
        "seed": ((int,), lambda v: v >= 0),
        "record_stride": ((int,), lambda v: v >= 1),
        "replications": ((int,), lambda v: v >= 1),
    },
    "mollifier": {
        "base": ((str,), lambda v: v in ("triangle_product", "epanechnikov_product")),
        "eps": (_NUM, lambda v: v > 0),
    },
    "rates": {
        "t": ((list,), lambda v: len(v) >= 4 and all(isinstance(x, _NUM) and x > 0 for x in v)),
        "reps": ((int,), lambda v: v >= 2),
        "w2": ((str,), lambda v: v in ("auto", "quantile_1d", "exact_lp", "entropic")),
        "n_ref": ((int,), lambda v: v >= 2),
        "reg": (_NUM, lambda v: v > 0),
    },
    "output": {
        "dir": ((str,), None),
        "plot": ((bool,), None),
    },
}


def validate(cfg: dict) -> dict:
    """Reject unknown tables/keys and ill-typed values; errors carry the key path."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a table")
    for table, entries in cfg.items():
        if table not in SCHEMA:
            raise ConfigError("unknown table", key=table)
        if not isinstance(entries, dict):
            raise ConfigError("must be a table", key=table)
        for key, value in entries.items():
            path = f"{table}.{key}"
            if key not in SCHEMA[table]:
                raise ConfigError("unknown key", key=path)
            types, check = SCHEMA[table][key]
            if isinstance(value, bool) and bool not in types:
                raise ConfigError(f"expected {'/'.join(t.__name__ for t in types)}, got bool", key=path)
            if not isinstance(value, types):
                raise ConfigError(f"expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}",
                                  key=path)
            try:
                ok = check is None or check(value)
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise ConfigError(f"invalid value {value!r}", key=path)
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {str(path)!r}: {exc}") from None
    return validate(cfg)
