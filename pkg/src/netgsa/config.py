from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .diffnet import NULL_STRATEGIES, normalize_method
from .errors import DataError


@dataclass
class RunConfig:
    """Settings shared by the NetGSA pipeline, back-testing and the CLI."""

    ni_method: str = "GL-BIC-AT"
    splits: int = 50
    tau: float = 5.0
    level: float = 0.05
    null: str = "fisher"
    seed: int = 0
    min_set_size: int = 5
    shapiro: bool = False
    shapiro_level: float = 0.01
    threads: int = 1
    normalize: bool = True
    classic: bool = False
    bic_patience: int | None = 5

    def __post_init__(self):
        self.ni_method = normalize_method(self.ni_method)
        if self.splits < 1:
            raise DataError("splits must be >= 1")
        if not self.tau > 0:
            raise DataError("tau must be positive")
        if not 0 < self.level < 1:
            raise DataError("level must lie in (0, 1)")
        if self.null not in NULL_STRATEGIES:
            raise DataError(f"null strategy must be one of {NULL_STRATEGIES}")
        if not 0 < self.shapiro_level < 1:
            raise DataError("shapiro_level must lie in (0, 1)")
        if self.min_set_size < 1:
            raise DataError("min_set_size must be >= 1")
        if self.threads < 1:
            raise DataError("threads must be >= 1")


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    kind = types[name]
    if "bool" in kind:
        try:
            return _BOOL[raw.strip().lower()]
        except KeyError:
            raise DataError(f"config key {name}: expected a boolean, got {raw!r}") from None
    if raw.strip().lower() in ("", "none"):
        return None
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw.strip()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use underscores."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, val)
    return out


def default_threads() -> int:
    raw = os.environ.get("NETGSA_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise DataError(f"NETGSA_THREADS must be an integer, got {raw!r}") from None
    return 1
