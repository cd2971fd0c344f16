"""Configurable convolutional feature extractor.

Maps a (C, T) trial to a (D, T') feature sequence through a shared temporal
filter bank, a spatial convolution that collapses the channel axis, strided
average pooling, and optional extra temporal blocks.  The kernel/stride
chain also yields, for every feature step, the exact input interval it
depends on, which is what aligns agent decisions back to raw timepoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ParamStore,
    Tensor,
    activation,
    add_bias_rows,
    avg_pool1d,
    conv1d_forward,
    temporal_conv,
    xavier_init,
)


@dataclass(frozen=True)
class EmbeddingConfig:
    temporal_filters: int = 40
    temporal_length: int = 13
    spatial_filters: int = 40
    activation: str = "square"
    pool_stride: int = 5
    # extra temporal blocks: (filters, kernel_length, stride) each
    blocks: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        if self.temporal_filters < 1 or self.temporal_length < 1:
            raise ValueError("temporal filter bank needs >= 1 filter of length >= 1")
        if self.spatial_filters < 1:
            raise ValueError("spatial_filters must be >= 1")
        if self.pool_stride < 1:
            raise ValueError("pool_stride must be >= 1")
        for blk in self.blocks:
            if len(blk) != 3 or min(blk) < 1:
                raise ValueError(f"bad block spec {blk!r}; expected (filters, length, stride)")

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1][0] if self.blocks else self.spatial_filters


PRESETS = {
    # temporal + spatial + square, strided pooling; D=40, T'=47 on a 20x250 input
    "shallow": EmbeddingConfig(),
    # deeper stack of eLU temporal blocks
    "deep": EmbeddingConfig(temporal_filters=25, temporal_length=10, spatial_filters=25,
                            activation="elu", pool_stride=3,
                            blocks=((25, 10, 1), (25, 10, 1), (25, 10, 1))),
    # small-footprint variant for desk-scale corpora
    "compact": EmbeddingConfig(temporal_filters=16, temporal_length=9, spatial_filters=16,
                               activation="square", pool_stride=5),
}


def embedding_config(preset_or_cfg) -> EmbeddingConfig:
    if isinstance(preset_or_cfg, EmbeddingConfig):
        return preset_or_cfg
    try:
        return PRESETS[preset_or_cfg]
    except KeyError:
        raise ValueError(f"unknown embedding preset {preset_or_cfg!r}; "
                         f"expected one of {sorted(PRESETS)}")


@dataclass
class FeatureSequence:
    """(D, T') features plus the input interval each step covers."""

    features: Tensor
    input_length: int
    receptive_field_map: tuple[tuple[int, int], ...]

    @property
    def data(self) -> np.ndarray:
        return self.features.data

    @property
    def n_steps(self) -> int:
        return self.features.data.shape[1]


def layer_chain(cfg: EmbeddingConfig) -> list[tuple[int, int]]:
    """(kernel, stride) pairs along the time axis, in forward order."""
    chain = [(cfg.temporal_length, 1), (1, 1)]  # temporal bank, spatial collapse
    if cfg.pool_stride > 1:
        chain.append((cfg.pool_stride, cfg.pool_stride))
    for _, k, s in cfg.blocks:
        chain.append((k, s))
    return chain


def output_steps(cfg: EmbeddingConfig, n_timepoints: int) -> int:
    length = n_timepoints
    for k, s in layer_chain(cfg):
        if length < k:
            raise ValueError(f"input too short: length {length} < kernel {k} in the "
                             f"embedding chain")
        length = (length - k) // s + 1
    if length < 2:
        raise ValueError(f"embedding config yields T'={length} < 2 steps on "
                         f"T={n_timepoints} input")
    return length


def receptive_fields(cfg: EmbeddingConfig, n_timepoints: int) -> tuple[tuple[int, int], ...]:
    """Per feature step, the half-open [start, end) input interval it covers."""
    steps = output_steps(cfg, n_timepoints)
    span, stride = 1, 1
    for k, s in layer_chain(cfg):
        span += (k - 1) * stride
        stride *= s
    return tuple((i * stride, i * stride + span) for i in range(steps))


def init_embedding(cfg: EmbeddingConfig, n_channels: int, seed) -> ParamStore:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParamStore()
    store.add("temporal.w", xavier_init((cfg.temporal_filters, cfg.temporal_length), rng))
    spatial_in = n_channels * cfg.temporal_filters
    store.add("spatial.w", xavier_init((cfg.spatial_filters, spatial_in, 1), rng))
    store.add("spatial.b", np.zeros(cfg.spatial_filters))
    prev = cfg.spatial_filters
    for i, (filters, k, _) in enumerate(cfg.blocks):
        store.add(f"block{i}.w", xavier_init((filters, prev, k), rng))
        store.add(f"block{i}.b", np.zeros(filters))
        prev = filters
    return store


def embed(signal, params: ParamStore, cfg: EmbeddingConfig) -> FeatureSequence:
    """Differentiable forward pass producing the feature sequence."""
    x = signal if isinstance(signal, Tensor) else Tensor(np.asarray(signal, dtype=np.float64))
    if x.data.ndim != 2:
        raise ValueError(f"embed expects a (C, T) signal, got shape {x.data.shape}")
    n_timepoints = x.data.shape[1]
    rf_map = receptive_fields(cfg, n_timepoints)  # validates the chain up front

    h = temporal_conv(x, params["temporal.w"])
    h = add_bias_rows(conv1d_forward(h, params["spatial.w"], 1), params["spatial.b"])
    h = activation(h, cfg.activation)
    if cfg.pool_stride > 1:
        h = avg_pool1d(h, cfg.pool_stride)
    for i, (_, _, stride) in enumerate(cfg.blocks):
        h = add_bias_rows(conv1d_forward(h, params[f"block{i}.w"], stride),
                          params[f"block{i}.b"])
        h = activation(h, cfg.activation)

    assert h.data.shape == (cfg.feature_dim, len(rf_map))
    return FeatureSequence(features=h, input_length=n_timepoints,
                           receptive_field_map=rf_map)


def map_agent_time_to_input(fs: FeatureSequence, step: int) -> tuple[int, int]:
    """Input interval [start, end) covered by the 1-based feature step."""
    if not 1 <= step <= fs.n_steps:
        raise ValueError(f"step {step} out of range 1..{fs.n_steps}")
    return fs.receptive_field_map[step - 1]
