"""Run configuration: a flat JSON object whose missing keys take the defaults below.

Keys::

    w                  odd cube side (default 21)
    bins               histogram bins (21)
    soft               soft histogram binning (true)
    var_eps            variance floor for flat series (1e-10)
    lambda             functional-similarity weight (0.01)
    gamma              smoothness weight (0.01)
    learning_rate      Adam step size (1e-4)
    iterations         Adam iterations (300)
    beta1, beta2       Adam moment decays (0.9, 0.999)
    adam_eps           Adam denominator floor (1e-8)
    seed               unsigned integer (0)
    grad_mode          "analytic" or "finite_difference"
    downsample_factor  structural-to-functional grid ratio (3)
"""

import json
from dataclasses import asdict, dataclass, fields

from ..funcconn import FCConfig
from ..objective import LossWeights, OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    w: int = 21
    bins: int = 21
    soft: bool = True
    var_eps: float = 1e-10
    lam: float = 0.01
    gamma: float = 0.01
    learning_rate: float = 1e-4
    iterations: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_mode: str = "analytic"
    downsample_factor: int = 3

    def __post_init__(self):
        if int(self.downsample_factor) != self.downsample_factor or self.downsample_factor < 1:
            raise ConfigError(f"downsample_factor must be an integer >= 1, got {self.downsample_factor!r}")
        try:
            self.fc_config()
            self.loss_weights()
            self.optimizer_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fc_config(self) -> FCConfig:
        return FCConfig(w=self.w, bins=self.bins, soft=self.soft, var_eps=self.var_eps)

    def loss_weights(self) -> LossWeights:
        return LossWeights(lam=self.lam, gamma=self.gamma)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            seed=self.seed,
            grad_mode=self.grad_mode,
        )

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# "lambda" is a Python keyword, stored as ``lam``
_KEY_TO_FIELD = {f.name: f.name for f in fields(RunConfig)}
_KEY_TO_FIELD["lambda"] = _KEY_TO_FIELD.pop("lam")

_TYPES = {
    "w": int, "bins": int, "iterations": int, "seed": int, "downsample_factor": int,
    "soft": bool, "grad_mode": str,
}


def _coerce(key, value):
    want = _TYPES.get(key, float)
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if want is int:
        if value != int(value):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def config_from_dict(d) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(_KEY_TO_FIELD))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {_KEY_TO_FIELD[k]: _coerce(k, v) for k, v in d.items()}
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        return RunConfig()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(d)
