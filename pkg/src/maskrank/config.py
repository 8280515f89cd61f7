"""Dataclass configs with strict JSON (de)serialization.

Unknown keys are rejected and every numeric field is range-checked on
construction, so a config that loads is a config the modules accept.
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .errors import FormatError, ParameterError

MODES = ("baseline-bg-embedding", "bg-aware", "bg-aware+rank", "bg-aware+rank+pseudo")
UNSEEN_LABELS = ("gt", "pseudo", "none")


def _positive(name: str, x: float) -> None:
    if not (isinstance(x, (int, float)) and math.isfinite(x) and x > 0):
        raise ParameterError(f"{name} must be a positive finite number, got {x!r}")


def _nonneg(name: str, x: float) -> None:
    if not (isinstance(x, (int, float)) and math.isfinite(x) and x >= 0):
        raise ParameterError(f"{name} must be a non-negative finite number, got {x!r}")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 2.0  # class
    beta: float = 5.0  # mask
    gamma: float = 1.0  # rank
    lambda_: float = 0.6  # matched CE vs background KL
    temperature: float = 0.1
    bg_reduce: str = "sum"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            _nonneg(name, getattr(self, name))
        if not (0.0 <= self.lambda_ <= 1.0):
            raise ParameterError(f"lambda must lie in [0, 1], got {self.lambda_!r}")
        _positive("temperature", self.temperature)
        if self.bg_reduce not in ("sum", "mean"):
            raise ParameterError(f"bg_reduce must be 'sum' or 'mean', got {self.bg_reduce!r}")


@dataclass(frozen=True)
class MaskLossConfig:
    focal_weight: float = 20.0
    dice_weight: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float | None = 0.25  # None: no class balancing
    dice_eps: float = 1.0

    def __post_init__(self):
        _nonneg("focal_weight", self.focal_weight)
        _nonneg("dice_weight", self.dice_weight)
        _nonneg("focal_gamma", self.focal_gamma)
        _nonneg("dice_eps", self.dice_eps)
        if self.focal_alpha is not None and not (0.0 < self.focal_alpha <= 1.0):
            raise ParameterError(f"focal_alpha must lie in (0, 1], got {self.focal_alpha!r}")

    def kwargs(self) -> dict:
        return asdict(self)


def _toy_weights() -> LossWeights:
    # 16-d toy cosines are compressed; a softer temperature than the library default
    return LossWeights(temperature=0.2)


@dataclass(frozen=True)
class TrainConfig:
    """Toy training setup.

    Defaults are the tuned toy regime used by the ablation scripts, except
    ``num_queries`` which keeps the 100 queries of the full model (the
    ablations shrink it to 16).
    """

    weights: LossWeights = field(default_factory=_toy_weights)
    mask: MaskLossConfig = field(default_factory=MaskLossConfig)
    mode: str = "bg-aware+rank"
    unseen_labels: str = "gt"  # image-level unseen labels for the rank loss
    num_queries: int = 100
    dim: int = 16
    height: int = 8
    width: int = 8
    num_classes: int = 10
    num_unseen: int = 3
    regions_per_scene: int = 3
    feature_noise: float = 0.1
    correlated_pair: tuple[int, int] | None = (0, 7)  # (seen, unseen)
    correlated_cos: float = 0.85
    num_train_scenes: int = 64
    num_eval_scenes: int = 20
    batch_size: int = 8
    learning_rate: float = 0.5
    steps: int = 300
    seed: int = 0
    optimizer: str = "sgd"
    weight_decay: float = 1e-4  # adamw only
    matching: str = "separate"  # or "combined": one matching on class + mask cost
    bg_embedding_weight: float = 1.0  # baseline mode: CE weight of unmatched -> background
    query_scale: float = 8.0  # initial query norm, in units of sqrt(dim)
    head_init: str = "identity"  # "identity" (pretrained-like) or "random"
    head_noise: float = 0.3
    mask_scale: float = 5.0
    inference_temperature: float | None = None  # None: reuse weights.temperature
    pseudo_threshold: float = 0.99
    logit_scale: float = 100.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.unseen_labels not in UNSEEN_LABELS:
            raise ParameterError(f"unseen_labels must be one of {UNSEEN_LABELS}")
        for name in ("num_queries", "dim", "height", "width", "num_classes", "batch_size",
                     "regions_per_scene", "num_train_scenes", "num_eval_scenes"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ParameterError(f"steps must be a non-negative integer, got {self.steps!r}")
        if not (0 <= self.num_unseen < self.num_classes):
            raise ParameterError("num_unseen must satisfy 0 <= num_unseen < num_classes")
        if self.regions_per_scene > self.height * self.width:
            raise ParameterError("more regions than pixels")
        _nonneg("feature_noise", self.feature_noise)
        _nonneg("learning_rate", self.learning_rate)
        _nonneg("weight_decay", self.weight_decay)
        _positive("logit_scale", self.logit_scale)
        if not (0.0 <= self.pseudo_threshold < 1.0):
            raise ParameterError("pseudo_threshold must lie in [0, 1)")
        if self.inference_temperature is not None:
            _positive("inference_temperature", self.inference_temperature)
        if self.optimizer not in ("sgd", "adamw"):
            raise ParameterError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")
        if self.matching not in ("combined", "separate"):
            raise ParameterError(f"matching must be 'combined' or 'separate'")
        _nonneg("bg_embedding_weight", self.bg_embedding_weight)
        _positive("query_scale", self.query_scale)
        _positive("mask_scale", self.mask_scale)
        _nonneg("head_noise", self.head_noise)
        if self.head_init not in ("random", "identity"):
            raise ParameterError(f"head_init must be 'random' or 'identity'")
        if not (0.0 < self.correlated_cos < 1.0):
            raise ParameterError("correlated_cos must lie in (0, 1)")
        if self.correlated_pair is not None:
            s, u = self.correlated_pair
            if not (0 <= s < self.num_seen <= u < self.num_classes):
                raise ParameterError(
                    f"correlated_pair {self.correlated_pair} must be (seen, unseen) indices"
                )

    @property
    def num_seen(self) -> int:
        return self.num_classes - self.num_unseen

    @property
    def effective_unseen_labels(self) -> str:
        return "pseudo" if self.mode == "bg-aware+rank+pseudo" else self.unseen_labels

    @property
    def eval_temperature(self) -> float:
        return self.inference_temperature or self.weights.temperature


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs: training config plus evaluation knobs and paths."""

    train: TrainConfig = field(default_factory=TrainConfig)
    ignore_index: int = 255
    threads: int | None = None
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ParameterError("threads must be a positive integer")


_NESTED = {"weights": LossWeights, "mask": MaskLossConfig, "train": TrainConfig}
_TUPLES = {"correlated_pair"}


def _field_default(cls, name: str):
    f = next(f for f in fields(cls) if f.name == name)
    if f.default_factory is not MISSING:
        return f.default_factory()
    return f.default


def from_dict(cls, data: dict[str, Any], base=None):
    """Build ``cls`` from a JSON-like dict, rejecting unknown keys.

    Nested sections are applied on top of the field's own default, so a
    partial ``{"weights": {"lambda": 0.5}}`` keeps the other default weights.
    """
    if not isinstance(data, dict):
        raise FormatError(f"{cls.__name__}: expected a JSON object")
    names = {f.name for f in fields(cls)}
    # "lambda" is a keyword in Python; accept it in JSON
    data = {("lambda_" if k == "lambda" else k): v for k, v in data.items()}
    unknown = sorted(set(data) - names)
    if unknown:
        raise FormatError(f"{cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        if k in _NESTED and isinstance(v, dict):
            v = from_dict(_NESTED[k], v, base=_field_default(cls, k))
        elif k in _TUPLES and v is not None:
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs) if base is None else replace(base, **kwargs)


def to_dict(cfg) -> dict[str, Any]:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out["lambda" if f.name == "lambda_" else f.name] = v
    return out


def load_config(path, cls=TrainConfig):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(cls, data)


def save_config(cfg, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
