"""Run configuration: a JSON object with the keys below, plus CLI overrides.

Top-level keys (defaults in brackets)::

    mode            "single" | "sequential" | "xgyro"        (required)
    dims            [nc, nv, nt]                              (required)
    total_ranks     int                                       (required)
    n_t             int   [1]
    k               int   [1; forced to 1 for mode=single]
    steps           int   [10]
    alpha, beta     float [1e-6, 1e9]   alpha-beta cost model
    element_width   int   [8]           bytes per element in memory reports
    collision_eps   float [0.05]        shared by all members unless overridden
    collision_seed  int   [seed]
    dt              float [0.05]
    seed            int   [0]           base seed for defaults
    members         list of {drive, init_seed[, collision_eps, collision_seed, dt]}
                    [member i: drive = 1 - 0.5 * i / k, init_seed = seed + 1 + i]
    format          "table" | "json" | "csv"  ["table"]
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

from .fabric import CostParams
from .grid import (
    Dims,
    EnsembleSpec,
    LayoutError,
    SimParams,
    ensemble_coll_layout,
    plan_grid,
    validate_ensemble,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "MODES", "FORMATS"]

MODES = ("single", "sequential", "xgyro")
FORMATS = ("table", "json", "csv")
_MEMBER_KEYS = ("drive", "init_seed", "collision_eps", "collision_seed", "dt")
_KEYS = (
    "mode", "dims", "total_ranks", "n_t", "k", "steps", "alpha", "beta",
    "element_width", "collision_eps", "collision_seed", "dt", "seed",
    "members", "format",
)
_U64 = 2**64


class ConfigError(ValueError):
    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


@dataclass(frozen=True)
class MemberConfig:
    drive: float
    init_seed: int
    collision_eps: float
    collision_seed: int
    dt: float


@dataclass(frozen=True)
class RunConfig:
    mode: str
    dims: Dims
    total_ranks: int
    n_t: int
    k: int
    steps: int
    alpha: float
    beta: float
    element_width: int
    collision_eps: float
    collision_seed: int
    dt: float
    seed: int
    members: tuple[MemberConfig, ...]
    format: str

    @property
    def cost(self) -> CostParams:
        return CostParams(self.alpha, self.beta)

    def sim_params(self) -> list[SimParams]:
        return [
            SimParams(self.dims, m.collision_eps, m.collision_seed, m.drive,
                      m.init_seed, m.dt)
            for m in self.members
        ]

    def ensemble(self) -> EnsembleSpec:
        return EnsembleSpec(tuple(self.sim_params()), self.total_ranks)

    def echo(self) -> dict[str, Any]:
        out = asdict(self)
        out["dims"] = list(self.dims.shape)
        out["members"] = [asdict(m) for m in self.members]
        return out


def _int(key: str, value: Any, lo: int = 0, hi: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(key, f"expected integer, got {type(value).__name__}")
    if value < lo or (hi is not None and value >= hi):
        bound = f">= {lo}" if hi is None else f"in [{lo}, {hi})"
        raise ConfigError(key, f"must be {bound}, got {value}")
    return value


def _float(key: str, value: Any) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(key, f"expected number, got {type(value).__name__}")
    return float(value)


def _choice(key: str, value: Any, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise ConfigError(key, f"must be one of {list(choices)}, got {value!r}")
    return value


def load_file(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be an object")
    return data


def parse_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Load, merge and fully validate a run configuration."""
    raw: dict[str, Any] = load_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value

    for key in raw:
        if key not in _KEYS:
            raise ConfigError(key, "unknown key")
    for key in ("mode", "dims", "total_ranks"):
        if key not in raw:
            raise ConfigError(key, "required key missing")

    mode = _choice("mode", raw["mode"], MODES)
    fmt = _choice("format", raw.get("format", "table"), FORMATS)

    dims_raw = raw["dims"]
    if not isinstance(dims_raw, list) or len(dims_raw) != 3:
        raise ConfigError("dims", "expected a list [nc, nv, nt]")
    dims = Dims(*(_int(f"dims[{i}]", v, lo=1) for i, v in enumerate(dims_raw)))

    total_ranks = _int("total_ranks", raw["total_ranks"], lo=1)
    n_t = _int("n_t", raw.get("n_t", 1), lo=1)
    k = 1 if mode == "single" else _int("k", raw.get("k", 1), lo=1)
    steps = _int("steps", raw.get("steps", 10), lo=0)
    alpha = _float("alpha", raw.get("alpha", 1e-6))
    beta = _float("beta", raw.get("beta", 1e9))
    if alpha < 0:
        raise ConfigError("alpha", "must be >= 0")
    if not beta > 0:
        raise ConfigError("beta", "must be > 0")
    element_width = _int("element_width", raw.get("element_width", 8), lo=1)
    seed = _int("seed", raw.get("seed", 0), hi=_U64)
    eps = _float("collision_eps", raw.get("collision_eps", 0.05))
    cseed = _int("collision_seed", raw.get("collision_seed", seed), hi=_U64)
    dt = _float("dt", raw.get("dt", 0.05))

    if total_ranks % k:
        raise ConfigError("k", "k must divide total_ranks")

    members_raw = raw.get("members")
    if members_raw is None:
        members_raw = [
            {"drive": 1.0 - 0.5 * i / k, "init_seed": (seed + 1 + i) % _U64}
            for i in range(k)
        ]
    if not isinstance(members_raw, list):
        raise ConfigError("members", "expected a list of objects")
    if len(members_raw) != k:
        raise ConfigError("members", f"expected k={k} entries, got {len(members_raw)}")

    members = []
    for i, m in enumerate(members_raw):
        where = f"members[{i}]"
        if not isinstance(m, dict):
            raise ConfigError(where, "expected an object")
        for key in m:
            if key not in _MEMBER_KEYS:
                raise ConfigError(f"{where}.{key}", "unknown key")
        member = MemberConfig(
            drive=_float(f"{where}.drive", m.get("drive", 1.0)),
            init_seed=_int(f"{where}.init_seed", m.get("init_seed", seed + 1 + i), hi=_U64),
            collision_eps=_float(f"{where}.collision_eps", m.get("collision_eps", eps)),
            collision_seed=_int(f"{where}.collision_seed",
                                m.get("collision_seed", cseed), hi=_U64),
            dt=_float(f"{where}.dt", m.get("dt", dt)),
        )
        if not 0.0 <= member.collision_eps < 1.0:
            raise ConfigError(f"{where}.collision_eps", "must be in [0, 1)")
        if not member.dt > 0.0:
            raise ConfigError(f"{where}.dt", "must be > 0")
        members.append(member)

    cfg = RunConfig(mode, dims, total_ranks, n_t, k, steps, alpha, beta,
                    element_width, eps, cseed, dt, seed, tuple(members), fmt)
    _check_layout(cfg)
    if mode == "xgyro":
        violations = validate_ensemble(cfg.ensemble())
        if violations:
            detail = "; ".join(
                f"{v.field} differs across members {list(v.members)}" for v in violations
            )
            raise ConfigError("members", f"ensemble members must share cmat inputs: {detail}")
    return cfg


def _check_layout(cfg: RunConfig) -> None:
    try:
        if cfg.mode == "xgyro":
            ensemble_coll_layout(cfg.dims, cfg.total_ranks, cfg.n_t, cfg.k)
        else:
            plan_grid(cfg.dims, cfg.total_ranks, cfg.n_t)
    except LayoutError as exc:
        raise ConfigError("dims", f"invalid rank grid: {exc}") from None
