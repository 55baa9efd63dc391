"""Strict JSON run configuration: every key is checked before any work starts."""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, dataclass, field, fields

from npsa.datagen import KernelSpec
from npsa.models import ModelConfig
from npsa.training import TrainConfig

EXPERIMENTS = ("regression1d", "sim2real")
EVAL_KERNELS = ("rbf", "matern", "periodic")


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class RegressionData:
    train_kernel: KernelSpec = field(default_factory=lambda: KernelSpec("RBF", 3.0, 3.0))
    noise: KernelSpec | None = field(
        default_factory=lambda: KernelSpec("Periodic", 1.0, 1.0, 30.0, 2.0 * math.pi))


@dataclass
class LVData:
    theta: tuple = (0.01, 0.5, 1.0, 0.01)
    t_max: float = 30.0
    n_grid: int = 100
    pool_size: int = 160
    pool_seed: int = 0
    hare_lynx: str | None = None


@dataclass
class EvalConfig:
    kernels: tuple = EVAL_KERNELS
    noisy: bool = False
    n_tasks: int = 200
    seed: int = 1234


@dataclass
class RunConfig:
    experiment: str
    model: ModelConfig
    train: TrainConfig
    data: RegressionData | LVData
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self):
        def plain(obj):
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
            if isinstance(obj, tuple):
                return list(obj)
            return obj
        return plain(self)


def _type_ok(value, kind):
    if kind is bool:
        return isinstance(value, bool)
    if kind is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind is str:
        return isinstance(value, str)
    return True


_KINDS = {"int": int, "float": float, "bool": bool, "str": str}


def _build(cls, raw, path, required=(), nested=None):
    """Instantiate dataclass ``cls`` from ``raw`` with per-field type checks."""
    nested = nested or {}
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in raw:
            raise ConfigError(f"{path}.{key}", "required field is missing")
    kwargs = {}
    for key, value in raw.items():
        fpath = f"{path}.{key}"
        if key in nested:
            kwargs[key] = nested[key](value, fpath)
            continue
        ftype = names[key].type if isinstance(names[key].type, str) else names[key].type.__name__
        base = ftype.split("|")[0].strip()
        optional = "None" in ftype
        if value is None and optional:
            kwargs[key] = None
            continue
        if base in _KINDS and not _type_ok(value, _KINDS[base]):
            raise ConfigError(fpath, f"expected {base}, got {type(value).__name__}")
        if base == "tuple":
            if not isinstance(value, list):
                raise ConfigError(fpath, "expected a list")
            value = tuple(value)
        kwargs[key] = float(value) if base == "float" else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _kernel(value, path):
    if value is None:
        return None
    return _build(KernelSpec, value, path, required=("family",))


def _theta(value, path):
    if (not isinstance(value, list) or len(value) != 4
            or not all(_type_ok(v, float) and v > 0 for v in value)):
        raise ConfigError(path, "expected four positive numbers")
    return tuple(float(v) for v in value)


def _kernels(value, path):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of kernel names")
    for i, v in enumerate(value):
        if v not in EVAL_KERNELS:
            raise ConfigError(f"{path}[{i}]", f"unknown kernel {v!r}; choose from {EVAL_KERNELS}")
    return tuple(value)


def parse_run_config(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$", "expected a JSON object")
    allowed = {"experiment", "model", "train", "data", "eval"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"$.{key}", "unknown key")
    for key in ("experiment", "model", "train"):
        if key not in raw:
            raise ConfigError(f"$.{key}", "required field is missing")
    exp = raw["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError("$.experiment", f"expected one of {EXPERIMENTS}, got {exp!r}")
    model = _build(ModelConfig, raw["model"], "$.model", required=("family",))
    train = _build(TrainConfig, raw["train"], "$.train", required=("steps",))
    if exp == "regression1d":
        data = _build(RegressionData, raw.get("data", {}), "$.data",
                      nested={"train_kernel": _kernel, "noise": _kernel})
        if (model.d_x, model.d_y) != (1, 1):
            raise ConfigError("$.model", "regression1d needs d_x = d_y = 1")
    else:
        data = _build(LVData, raw.get("data", {}), "$.data", nested={"theta": _theta})
        if (model.d_x, model.d_y) != (1, 2):
            raise ConfigError("$.model", "sim2real needs d_x = 1, d_y = 2")
    ev = _build(EvalConfig, raw.get("eval", {}), "$.eval", nested={"kernels": _kernels})
    if ev.n_tasks < 1:
        raise ConfigError("$.eval.n_tasks", "must be >= 1")
    return RunConfig(exp, model, train, data, ev)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_run_config(raw)


def dump_run_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
