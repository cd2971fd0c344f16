"""Decision head: sigmoid over a single dense layer on the aggregated features."""

from __future__ import annotations

import numpy as np

from .autodiff import ParamStore, Tensor, _sigmoid_np, dense_forward, pick, sigmoid, xavier_init


def init_classifier(feature_dim: int, seed) -> ParamStore:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParamStore()
    store.add("w", xavier_init((1, feature_dim), rng))
    store.add("b", np.zeros(1))
    return store


def classify(feature, params: ParamStore) -> Tensor:
    """Differentiable class-1 probability for a D-vector of features."""
    x = feature if isinstance(feature, Tensor) else Tensor(np.asarray(feature, dtype=np.float64))
    if x.data.ndim != 1:
        raise ValueError(f"classify expects a feature vector, got shape {x.data.shape}")
    return pick(sigmoid(dense_forward(x, params["w"], params["b"])), 0)


def classify_value(feature: np.ndarray, params: ParamStore) -> float:
    """Probability only, no tape; bit-identical to classify(...)'s forward."""
    return float(classify(feature, params).data)


def predict_class(probability: float) -> int:
    """Class decision; ties at exactly 0.5 resolve to class 1."""
    return int(probability >= 0.5)
