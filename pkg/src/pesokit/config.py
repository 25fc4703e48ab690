"""JSON run configuration: parsing, validation, and construction of runs.

A run file has four blocks plus a few scalars::

    {
      "problem":   {"kind": "quadratic", "a": 10, "n": 16, "r_ones": 4},
      "method":    {"kind": "peso_lora_r", "K": 200, "r": 3, "gamma": 2.0,
                    "smoothing": true, "tau1": 0.9, "tau2": 0.9, "alignment": true},
      "optimizer": {"name": "adamw", "lr": 0.01, "schedule": "constant"},
      "noise":     {"C": 0.0},
      "seed": 0, "total_steps": 5000, "output": "trace.csv"
    }

Unknown keys anywhere are rejected. A ``sweep`` block maps dotted keys
(``"method.K"``) to value lists for the ``sweep`` command.
"""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .errors import ParameterError
from .optim import LrSchedule
from .problems import NoiseModel, Objective, mlp_objective, quadratic_objective
from .runners import RUNNERS, PesoConfig, RunResult
from .subspace import SmoothingConfig


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` is the dotted path at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


_PROBLEM_KEYS = {
    "quadratic": {"kind", "a", "n", "r_ones"},
    "mlp": {"kind", "sizes", "n_samples", "data_seed", "label_noise"},
}
_METHOD_KEYS = {
    "kind",
    "K",
    "r",
    "gamma",
    "exploration",
    "coordinates",
    "smoothing",
    "tau1",
    "tau2",
    "alignment",
    "beta2_min",
    "warmup_window",
    "max_restarts",
    "restart_schedule",
    "eta0",
    "galore_adam",
}
_OPTIMIZER_KEYS = {"name", "lr", "beta1", "beta2", "eps", "weight_decay", "schedule", "warmup_ratio"}
_NOISE_KEYS = {"C"}
_TOP_KEYS = {"problem", "method", "optimizer", "noise", "seed", "total_steps", "output", "record_wall_time", "sweep"}


def _reject_unknown(block: dict, allowed: set, where: str) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


def _get(block: dict, key: str, where: str, kind, default=None, required: bool = False):
    if key not in block:
        if required:
            raise ConfigError(f"{where}.{key}", "missing required key")
        return default
    value = block[key]
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"{where}.{key}", f"expected {kind.__name__}, got {value!r}")
    return value


def _block(doc: dict, name: str, required: bool = True) -> dict:
    if name not in doc:
        if required:
            raise ConfigError(name, "missing block")
        return {}
    block = doc[name]
    if not isinstance(block, dict):
        raise ConfigError(name, "must be an object")
    return block


@dataclass(frozen=True)
class RunSpec:
    """A validated run: what to optimize, how, and where to write."""

    problem: dict
    method: str
    objective: Objective
    config: PesoConfig
    output: Optional[str]
    raw: dict

    def run(self) -> RunResult:
        return RUNNERS[self.method](self.objective, self.config)


def _objective(block: dict) -> tuple[Objective, dict]:
    """The objective plus its fully defaulted description (used to decide
    whether two runs share a problem)."""
    kind = _get(block, "kind", "problem", str, required=True)
    if kind not in _PROBLEM_KEYS:
        raise ConfigError("problem.kind", f"unknown problem {kind!r}; expected one of {sorted(_PROBLEM_KEYS)}")
    _reject_unknown(block, _PROBLEM_KEYS[kind], "problem")
    try:
        if kind == "quadratic":
            a = _get(block, "a", "problem", float, 10.0)
            n = _get(block, "n", "problem", int, 16)
            ones = _get(block, "r_ones", "problem", int, 4)
            if ones < 1:
                raise ConfigError("problem.r_ones", "must be >= 1")
            return quadratic_objective(a, n, ones - 1), {"kind": kind, "a": a, "n": n, "r_ones": ones}
        norm = {
            "kind": kind,
            "sizes": list(_get(block, "sizes", "problem", list, [8, 6, 3])),
            "n_samples": _get(block, "n_samples", "problem", int, 64),
            "data_seed": _get(block, "data_seed", "problem", int, 0),
            "label_noise": _get(block, "label_noise", "problem", float, 0.01),
        }
        return mlp_objective(norm["sizes"], norm["n_samples"], norm["data_seed"], norm["label_noise"]), norm
    except ParameterError as exc:
        raise ConfigError("problem", str(exc)) from None


def parse_config(doc: Any, seed_override: Optional[int] = None) -> RunSpec:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "")
    problem = _block(doc, "problem")
    method = _block(doc, "method")
    optimizer = _block(doc, "optimizer")
    noise = _block(doc, "noise", required=False)
    _reject_unknown(method, _METHOD_KEYS, "method")
    _reject_unknown(optimizer, _OPTIMIZER_KEYS, "optimizer")
    _reject_unknown(noise, _NOISE_KEYS, "noise")

    objective, problem_norm = _objective(problem)
    kind = _get(method, "kind", "method", str, required=True)
    if kind not in RUNNERS:
        raise ConfigError("method.kind", f"unknown method {kind!r}; expected one of {sorted(RUNNERS)}")

    seed = _get(doc, "seed", "", int, 0) if seed_override is None else int(seed_override)
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    total = _get(doc, "total_steps", "", int, 1000)
    if total < 1:
        raise ConfigError("total_steps", "must be >= 1")

    K = _get(method, "K", "method", int, 1)
    if K < 1:
        raise ConfigError("method.K", f"must be a positive integer, got {K}")
    r = _get(method, "r", "method", int, 3)
    if not 1 <= r <= min(objective.shape):
        raise ConfigError("method.r", f"must lie in [1, {min(objective.shape)}], got {r}")
    gamma = _get(method, "gamma", "method", float, 1.0)
    if not gamma > 0:
        raise ConfigError("method.gamma", "must be positive")

    smoothing = None
    if _get(method, "smoothing", "method", bool, False):
        taus = {}
        for name in ("tau1", "tau2"):
            taus[name] = _get(method, name, "method", float, 0.9)
            if not 0.0 <= taus[name] <= 1.0:
                raise ConfigError(f"method.{name}", f"must lie in [0, 1], got {taus[name]}")
        smoothing = SmoothingConfig(**taus)

    def schedule(block, where, kind_key, lr_key, default_lr):
        lr = _get(block, lr_key, where, float, default_lr)
        kind_ = _get(block, kind_key, where, str, "constant")
        try:
            return LrSchedule(kind_, lr, _get(optimizer, "warmup_ratio", "optimizer", float, 0.0), total)
        except ParameterError as exc:
            raise ConfigError(f"{where}.{kind_key}", str(exc)) from None

    lr = schedule(optimizer, "optimizer", "schedule", "lr", 1e-2)
    restart_lr = None
    if "restart_schedule" in method or "eta0" in method:
        restart_lr = schedule(method, "method", "restart_schedule", "eta0", 1.0 / gamma)

    c = _get(noise, "C", "noise", float, 0.0)
    if c < 0:
        raise ConfigError("noise.C", "must be >= 0")

    fields = dict(
        total_steps=total,
        frequency=K,
        rank=r,
        gamma=gamma,
        optimizer=_get(optimizer, "name", "optimizer", str, "adamw"),
        coordinates=_get(method, "coordinates", "method", str, "factors"),
        lr=lr,
        restart_lr=restart_lr,
        beta1=_get(optimizer, "beta1", "optimizer", float, 0.9),
        beta2=_get(optimizer, "beta2", "optimizer", float, 0.999),
        eps=_get(optimizer, "eps", "optimizer", float, 1e-8),
        weight_decay=_get(optimizer, "weight_decay", "optimizer", float, 0.0),
        smoothing=smoothing,
        alignment=_get(method, "alignment", "method", bool, False),
        beta2_min=_get(method, "beta2_min", "method", float, 0.95),
        warmup_window=_get(method, "warmup_window", "method", int, None),
        noise=NoiseModel(c, seed) if c > 0 else None,
        seed=seed,
        max_restarts=_get(method, "max_restarts", "method", int, None),
        galore_adam=_get(method, "galore_adam", "method", bool, False),
        record_wall_time=_get(doc, "record_wall_time", "", bool, False),
    )
    if "exploration" in method:
        fields["exploration"] = _get(method, "exploration", "method", str)
    try:
        config = PesoConfig(**fields)
    except ParameterError as exc:
        raise ConfigError(f"method.{kind}", str(exc)) from None
    output = _get(doc, "output", "", str, None)
    return RunSpec(problem_norm, kind, objective, config, output, doc)


def load_config(path, seed_override: Optional[int] = None) -> RunSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(doc, seed_override)


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"sweep.{key}", "path runs through a non-object")
    node[parts[-1]] = value


def expand_sweep(doc: dict) -> list[tuple[dict, dict]]:
    """Cartesian grid over ``doc["sweep"]``; returns ``(cell, config_doc)`` pairs
    in row-major order of the declared keys."""
    grid = doc.get("sweep")
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep", "sweep needs a non-empty object of key -> value list")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"sweep.{k}", "must be a non-empty list")
    base = {k: v for k, v in doc.items() if k != "sweep"}
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cell = dict(zip(keys, values))
        cfg = copy.deepcopy(base)
        for k, v in cell.items():
            _set_dotted(cfg, k, v)
        cells.append((cell, cfg))
    return cells
