"""Declarative construction of the three modality pathways and shared trunk.

Each modality (image, sound, text) has its own convolutional pathway ending in
a fixed-length bottleneck vector; all pathways share the same fully connected
trunk (two hidden layers, then a softmax output). ``default_paper_spec`` is
the full-scale architecture; ``desk_spec`` narrows filter counts and widths
proportionally so the whole pipeline runs on one CPU core.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

MODALITIES = ("image", "sound", "text")
TAP_NAMES = ("bottleneck", "shared1", "shared2", "softmax")


@dataclass(frozen=True)
class Conv1dSpec:
    kernel: int
    filters: int


@dataclass(frozen=True)
class Pool1dSpec:
    factor: int


@dataclass(frozen=True)
class Conv2dSpec:
    kernel: int
    filters: int
    stride: int = 1


@dataclass(frozen=True)
class Pool2dSpec:
    window: int
    stride: int


@dataclass(frozen=True)
class FlattenSpec:
    pass


@dataclass(frozen=True)
class DenseSpec:
    width: int


LayerSpec = Conv1dSpec | Pool1dSpec | Conv2dSpec | Pool2dSpec | FlattenSpec | DenseSpec


def trace_pathway(input_shape: tuple[int, ...], layers) -> list[tuple[int, ...]]:
    """Shapes (excluding the batch axis) after each layer of a pathway."""
    shapes = [tuple(input_shape)]
    cur = tuple(input_shape)
    for layer in layers:
        if isinstance(layer, Conv1dSpec):
            if len(cur) != 2:
                raise ConfigError(f"conv1d after shape {cur}")
            cur = (layer.filters, cur[1])
        elif isinstance(layer, Pool1dSpec):
            if len(cur) != 2:
                raise ConfigError(f"pool1d after shape {cur}")
            cur = (cur[0], -(-cur[1] // layer.factor))
        elif isinstance(layer, Conv2dSpec):
            if len(cur) != 3:
                raise ConfigError(f"conv2d after shape {cur}")
            cur = (layer.filters,
                   (cur[1] - 1) // layer.stride + 1,
                   (cur[2] - 1) // layer.stride + 1)
        elif isinstance(layer, Pool2dSpec):
            if len(cur) != 3:
                raise ConfigError(f"pool2d after shape {cur}")
            cur = (cur[0],
                   (cur[1] - layer.window) // layer.stride + 1,
                   (cur[2] - layer.window) // layer.stride + 1)
        elif isinstance(layer, FlattenSpec):
            cur = (int(np.prod(cur)),)
        elif isinstance(layer, DenseSpec):
            if len(cur) != 1:
                raise ConfigError(f"dense layer needs a flat input, got shape {cur}")
            cur = (layer.width,)
        else:
            raise ConfigError(f"unknown layer spec {layer!r}")
        if any(n <= 0 for n in cur):
            raise ConfigError(f"layer {layer!r} produced empty shape {cur}")
        shapes.append(cur)
    return shapes


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stacks and dimensions for the three pathways plus shared trunk."""

    vision_input: tuple[int, int, int]
    sound_input: tuple[int, int]
    text_input: tuple[int, int]
    vision_layers: tuple[LayerSpec, ...]
    sound_layers: tuple[LayerSpec, ...]
    text_layers: tuple[LayerSpec, ...]
    shared_widths: tuple[int, ...]
    output_dim: int
    bottleneck_dim: int

    def __post_init__(self):
        if not self.shared_widths or self.output_dim < 1 or self.bottleneck_dim < 1:
            raise ConfigError("shared widths, output_dim and bottleneck_dim must be positive")
        for modality in MODALITIES:
            out = trace_pathway(self.input_shape(modality), self.pathway(modality))[-1]
            if out != (self.bottleneck_dim,):
                raise ConfigError(
                    f"{modality} pathway produces {out}, expected bottleneck "
                    f"({self.bottleneck_dim},)"
                )

    def input_shape(self, modality: str) -> tuple[int, ...]:
        if modality == "image":
            return self.vision_input
        if modality == "sound":
            return self.sound_input
        if modality == "text":
            return self.text_input
        raise ConfigError(f"unknown modality {modality!r}")

    def pathway(self, modality: str) -> tuple[LayerSpec, ...]:
        if modality == "image":
            return self.vision_layers
        if modality == "sound":
            return self.sound_layers
        if modality == "text":
            return self.text_layers
        raise ConfigError(f"unknown modality {modality!r}")


def default_paper_spec() -> NetworkSpec:
    """Full-scale architecture.

    Sound: 257 channels x 500 steps, three 1-D convs (kernels 11/5/3, filters
    128/256/256) each followed by relu and factor-5 max-pooling, giving a
    4 x 256 map that a fully connected layer projects to the 9216 bottleneck.
    Text: 300 x 16, three kernel-3 convs with 300 filters, pooling by 2 after
    the second and third, then a fully connected projection to 9216.
    Vision: Krizhevsky-style stack (ungrouped, no LRN) whose flattened final
    pool is exactly 6*6*256 = 9216 at 227 x 227 input.
    Shared trunk: 4096, 4096, then a 1000-way softmax.
    """
    return NetworkSpec(
        vision_input=(3, 227, 227),
        sound_input=(257, 500),
        text_input=(300, 16),
        vision_layers=(
            Conv2dSpec(11, 96, stride=4),
            Pool2dSpec(3, 2),
            Conv2dSpec(5, 256),
            Pool2dSpec(3, 2),
            Conv2dSpec(3, 384),
            Conv2dSpec(3, 384),
            Conv2dSpec(3, 256),
            Pool2dSpec(3, 2),
            FlattenSpec(),
        ),
        sound_layers=(
            Conv1dSpec(11, 128),
            Pool1dSpec(5),
            Conv1dSpec(5, 256),
            Pool1dSpec(5),
            Conv1dSpec(3, 256),
            Pool1dSpec(5),
            FlattenSpec(),
            DenseSpec(9216),
        ),
        text_layers=(
            Conv1dSpec(3, 300),
            Conv1dSpec(3, 300),
            Pool1dSpec(2),
            Conv1dSpec(3, 300),
            Pool1dSpec(2),
            FlattenSpec(),
            DenseSpec(9216),
        ),
        shared_widths=(4096, 4096),
        output_dim=1000,
        bottleneck_dim=9216,
    )


def _scaled(width: int, scale: float) -> int:
    """Scale a width and round to the nearest multiple of 8 (half up)."""
    scaled = 8 * math.floor(width * scale / 8 + 0.5)
    if scaled <= 0:
        raise ConfigError(f"scale {scale} collapses width {width} to zero")
    return scaled


def desk_spec(scale: float) -> NetworkSpec:
    """Proportionally narrowed spec for CPU-scale experiments.

    scale=1 returns the paper architecture unchanged. For scale<1, sound and
    text keep their topology and pooling factors with filter counts and widths
    scaled (rounded to a multiple of 8), while the vision pathway swaps the
    Krizhevsky stack for a three-conv 32x32 stack: the claims under test
    concern alignment, not ImageNet-scale vision.
    """
    if not 0 < scale <= 1:
        raise ConfigError(f"scale must be in (0, 1], got {scale}")
    if scale == 1:
        return default_paper_spec()
    bottleneck = _scaled(9216, scale)
    return NetworkSpec(
        vision_input=(3, 32, 32),
        sound_input=(257, 500),
        text_input=(300, 16),
        vision_layers=(
            Conv2dSpec(3, _scaled(128, scale)),
            Pool2dSpec(2, 2),
            Conv2dSpec(3, _scaled(256, scale)),
            Pool2dSpec(2, 2),
            Conv2dSpec(3, _scaled(256, scale)),
            Pool2dSpec(2, 2),
            FlattenSpec(),
            DenseSpec(bottleneck),
        ),
        sound_layers=(
            Conv1dSpec(11, _scaled(128, scale)),
            Pool1dSpec(5),
            Conv1dSpec(5, _scaled(256, scale)),
            Pool1dSpec(5),
            Conv1dSpec(3, _scaled(256, scale)),
            Pool1dSpec(5),
            FlattenSpec(),
            DenseSpec(bottleneck),
        ),
        text_layers=(
            Conv1dSpec(3, _scaled(300, scale)),
            Conv1dSpec(3, _scaled(300, scale)),
            Pool1dSpec(2),
            Conv1dSpec(3, _scaled(300, scale)),
            Pool1dSpec(2),
            FlattenSpec(),
            DenseSpec(bottleneck),
        ),
        shared_widths=(_scaled(4096, scale), _scaled(4096, scale)),
        output_dim=_scaled(1000, scale),
        bottleneck_dim=bottleneck,
    )


def parameter_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in a fixed, deterministic order.

    Shared-trunk parameters appear once; every pathway forward reads the same
    tensors, which is what makes the trunk genuinely shared.
    """
    shapes: dict[str, tuple[int, ...]] = {}
    for modality in MODALITIES:
        conv_n = 0
        fc_n = 0
        cur = spec.input_shape(modality)
        for layer, out in zip(spec.pathway(modality),
                              trace_pathway(spec.input_shape(modality),
                                            spec.pathway(modality))[1:]):
            if isinstance(layer, Conv1dSpec):
                conv_n += 1
                shapes[f"{modality}.conv{conv_n}.kernels"] = (layer.filters, cur[0], layer.kernel)
                shapes[f"{modality}.conv{conv_n}.bias"] = (layer.filters,)
            elif isinstance(layer, Conv2dSpec):
                conv_n += 1
                shapes[f"{modality}.conv{conv_n}.kernels"] = (
                    layer.filters, cur[0], layer.kernel, layer.kernel)
                shapes[f"{modality}.conv{conv_n}.bias"] = (layer.filters,)
            elif isinstance(layer, DenseSpec):
                fc_n += 1
                shapes[f"{modality}.fc{fc_n}.weight"] = (cur[0], layer.width)
                shapes[f"{modality}.fc{fc_n}.bias"] = (layer.width,)
            cur = out
    prev = spec.bottleneck_dim
    for i, width in enumerate(spec.shared_widths, start=1):
        shapes[f"shared.fc{i}.weight"] = (prev, width)
        shapes[f"shared.fc{i}.bias"] = (width,)
        prev = width
    shapes["shared.out.weight"] = (prev, spec.output_dim)
    shapes["shared.out.bias"] = (spec.output_dim,)
    return shapes


@dataclass
class ModelParams:
    """Named parameter tensors for one NetworkSpec."""

    spec: NetworkSpec
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def init_params(spec: NetworkSpec, seed: int, sigma: float = 0.01) -> ModelParams:
    """Gaussian white noise weights (std sigma), zero biases, reproducible."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(spec).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, sigma, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(spec=spec, tensors=tensors)


def forward_batch(params: ModelParams, batch: np.ndarray, modality: str,
                  taps=None) -> dict[str, Tensor]:
    """Run one modality pathway plus the shared trunk on a batch.

    batch: (B, *input_shape) for the modality. Returns the bottleneck, both
    shared hidden activations, and the softmax output (requested taps are
    validated but those four are always included).
    """
    spec = params.spec
    expected = spec.input_shape(modality)
    if batch.ndim != len(expected) + 1 or tuple(batch.shape[1:]) != expected:
        raise ShapeError(
            f"{modality} batch has shape {batch.shape}, expected (B, {', '.join(map(str, expected))})"
        )
    if taps is not None:
        unknown = set(taps) - set(TAP_NAMES)
        if unknown:
            raise ConfigError(f"unknown taps {sorted(unknown)}; valid taps are {TAP_NAMES}")

    t = Tensor(np.asarray(batch, dtype=np.float64))
    conv_n = 0
    fc_n = 0
    for layer in spec.pathway(modality):
        if isinstance(layer, Conv1dSpec):
            conv_n += 1
            t = ad.relu(ad.conv1d_same(
                t, params[f"{modality}.conv{conv_n}.kernels"],
                params[f"{modality}.conv{conv_n}.bias"]))
        elif isinstance(layer, Conv2dSpec):
            conv_n += 1
            t = ad.relu(ad.conv2d_same(
                t, params[f"{modality}.conv{conv_n}.kernels"],
                params[f"{modality}.conv{conv_n}.bias"], stride=layer.stride))
        elif isinstance(layer, Pool1dSpec):
            t = ad.maxpool1d(t, layer.factor)
        elif isinstance(layer, Pool2dSpec):
            t = ad.maxpool2d(t, layer.window, layer.stride)
        elif isinstance(layer, FlattenSpec):
            t = ad.reshape(t, (t.shape[0], int(np.prod(t.shape[1:]))))
        elif isinstance(layer, DenseSpec):
            fc_n += 1
            t = ad.relu(ad.fully_connected(
                t, params[f"{modality}.fc{fc_n}.weight"], params[f"{modality}.fc{fc_n}.bias"]))
    bottleneck = t

    hidden = bottleneck
    shared: list[Tensor] = []
    for i in range(1, len(spec.shared_widths) + 1):
        hidden = ad.relu(ad.fully_connected(
            hidden, params[f"shared.fc{i}.weight"], params[f"shared.fc{i}.bias"]))
        shared.append(hidden)
    logits = ad.fully_connected(hidden, params["shared.out.weight"], params["shared.out.bias"])
    probs = ad.softmax(logits)

    return {
        "bottleneck": bottleneck,
        "shared1": shared[0],
        "shared2": shared[-1],
        "softmax": probs,
    }


def forward(params: ModelParams, sample, taps=None) -> dict[str, Tensor]:
    """Single-sample forward; see forward_batch."""
    acts = forward_batch(params, sample.payload[None].astype(np.float64),
                         sample.modality, taps=taps)
    return acts


# -- NetworkSpec JSON serialization ----------------------------------------

_LAYER_TAGS = {
    Conv1dSpec: "conv1d",
    Pool1dSpec: "pool1d",
    Conv2dSpec: "conv2d",
    Pool2dSpec: "pool2d",
    FlattenSpec: "flatten",
    DenseSpec: "dense",
}


def _layer_to_json(layer) -> dict:
    tag = _LAYER_TAGS[type(layer)]
    record = {"type": tag}
    if isinstance(layer, Conv1dSpec):
        record.update(kernel=layer.kernel, filters=layer.filters)
    elif isinstance(layer, Pool1dSpec):
        record.update(factor=layer.factor)
    elif isinstance(layer, Conv2dSpec):
        record.update(kernel=layer.kernel, filters=layer.filters, stride=layer.stride)
    elif isinstance(layer, Pool2dSpec):
        record.update(window=layer.window, stride=layer.stride)
    elif isinstance(layer, DenseSpec):
        record.update(width=layer.width)
    return record


def _layer_from_json(record: dict):
    tag = record.get("type")
    if tag == "conv1d":
        return Conv1dSpec(record["kernel"], record["filters"])
    if tag == "pool1d":
        return Pool1dSpec(record["factor"])
    if tag == "conv2d":
        return Conv2dSpec(record["kernel"], record["filters"], record.get("stride", 1))
    if tag == "pool2d":
        return Pool2dSpec(record["window"], record["stride"])
    if tag == "flatten":
        return FlattenSpec()
    if tag == "dense":
        return DenseSpec(record["width"])
    raise ConfigError(f"unknown layer type {tag!r}")


def spec_to_json(spec: NetworkSpec) -> str:
    doc = {
        "vision_input": list(spec.vision_input),
        "sound_input": list(spec.sound_input),
        "text_input": list(spec.text_input),
        "vision_layers": [_layer_to_json(l) for l in spec.vision_layers],
        "sound_layers": [_layer_to_json(l) for l in spec.sound_layers],
        "text_layers": [_layer_to_json(l) for l in spec.text_layers],
        "shared_widths": list(spec.shared_widths),
        "output_dim": spec.output_dim,
        "bottleneck_dim": spec.bottleneck_dim,
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def spec_from_json(text: str) -> NetworkSpec:
    doc = json.loads(text)
    try:
        return NetworkSpec(
            vision_input=tuple(doc["vision_input"]),
            sound_input=tuple(doc["sound_input"]),
            text_input=tuple(doc["text_input"]),
            vision_layers=tuple(_layer_from_json(r) for r in doc["vision_layers"]),
            sound_layers=tuple(_layer_from_json(r) for r in doc["sound_layers"]),
            text_layers=tuple(_layer_from_json(r) for r in doc["text_layers"]),
            shared_widths=tuple(doc["shared_widths"]),
            output_dim=doc["output_dim"],
            bottleneck_dim=doc["bottleneck_dim"],
        )
    except KeyError as exc:
        raise ConfigError(f"network spec JSON missing field {exc}") from exc
