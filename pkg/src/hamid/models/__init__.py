"""Built-in probabilistic models and their JSON configuration schema."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .base import Model, ModelDims, as_vector
from .linear import LinearSsm, LinearSsmConfig, kalman_loglik
from .mri import MriConfig, MriModel, mri_forward, rician_mean
from .nonlinear import NonlinearSsm, NonlinearSsmConfig

__all__ = [
    "Model",
    "ModelDims",
    "LinearSsm",
    "LinearSsmConfig",
    "NonlinearSsm",
    "NonlinearSsmConfig",
    "MriModel",
    "MriConfig",
    "kalman_loglik",
    "mri_forward",
    "rician_mean",
    "model_from_dict",
    "as_vector",
]

_MODEL_TYPES = {
    "linear_ssm": (LinearSsm, LinearSsmConfig),
    "nonlinear_ssm": (NonlinearSsm, NonlinearSsmConfig),
    "mri": (MriModel, MriConfig),
}


def model_from_dict(spec: dict) -> Model:
    """Build a model from a parsed JSON object {"type": ..., <config fields>}.

    Matrix-valued fields are row-major nested arrays; field names match the
    config dataclasses exactly.
    """
    if not isinstance(spec, dict):
        raise ConfigError("model section must be an object", field="model")
    kind = spec.get("type")
    if kind not in _MODEL_TYPES:
        raise ConfigError(
            f"model.type must be one of {sorted(_MODEL_TYPES)}, got {kind!r}",
            field="model.type",
        )
    cls, cfg_cls = _MODEL_TYPES[kind]
    fields = {k: v for k, v in spec.items() if k != "type"}
    allowed = set(cfg_cls.__dataclass_fields__)
    unknown = set(fields) - allowed
    if unknown:
        raise ConfigError(
            f"unknown model fields for {kind}: {sorted(unknown)}",
            field=f"model.{sorted(unknown)[0]}",
        )
    array_fields = {
        "A", "B", "C", "D", "Sigma_w", "Sigma_v", "x0_mean", "x0_cov", "x_init",
    }
    coerced = {}
    for k, v in fields.items():
        if k == "free_param_index_set":
            coerced[k] = tuple(tuple(int(i) for i in pair) for pair in v)
        elif k in array_fields:
            coerced[k] = np.asarray(v, dtype=float)
        else:
            coerced[k] = v
    try:
        return cls(cfg_cls(**coerced))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {kind} configuration: {exc}", field="model") from exc
