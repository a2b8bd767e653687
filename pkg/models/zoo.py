"""
Differentiable scorer models.

A model is a chain of layers mapping a C x H x W image to a scalar score. Layers only
hold numpy constants, so a loaded model is immutable and can be shared between
threads; every forward pass records on whatever Graph its input belongs to.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InputError
from tensor_core import Tensor, ops

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class Box:
    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InputError(f"box must be non-empty, got {self.height}x{self.width}")
        if self.top < 0 or self.left < 0:
            raise InputError(f"box origin must be non-negative, got ({self.top}, {self.left})")

    @property
    def area(self) -> int:
        return self.height * self.width

    def slices(self):
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)

    def fits(self, height: int, width: int) -> bool:
        return self.top + self.height <= height and self.left + self.width <= width

    def contains(self, row: int, col: int) -> bool:
        return self.top <= row < self.top + self.height and self.left <= col < self.left + self.width

    def indicator(self, height: int, width: int) -> np.ndarray:
        mask = np.zeros((height, width), dtype=np.float32)
        mask[self.slices()] = 1.0
        return mask

    def to_list(self):
        return [self.top, self.left, self.height, self.width]


# --- layers ----------------------------------------------------------------

class Layer:
    kind = "layer"

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def params(self) -> dict:
        """JSON-serialisable parameters (weights are handled by the loader)."""
        return {}

    def weights(self) -> Optional[np.ndarray]:
        return None


class Conv2dLayer(Layer):
    kind = "conv2d"

    def __init__(self, weight: np.ndarray, padding: str = "zero"):
        weight = np.asarray(weight, dtype=np.float32)
        if weight.ndim != 4:
            raise InputError(f"conv2d weight must be Cout x Cin x kh x kw, got {weight.shape}")
        self.weight = weight
        self.padding = padding

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.weight.shape[1]:
            raise InputError(f"conv2d expects {self.weight.shape[1]} input channels, got {shape}")
        return (self.weight.shape[0],) + tuple(shape[1:])

    def forward(self, x):
        return ops.conv2d(x, Tensor(self.weight), padding=self.padding)

    def params(self):
        return {"padding": self.padding}

    def weights(self):
        return self.weight


class ReluLayer(Layer):
    kind = "relu"

    def forward(self, x):
        return ops.relu(x)


class MeanPoolLayer(Layer):
    """Global average over the spatial extents: C x H x W -> C."""
    kind = "mean-pool"

    def output_shape(self, shape):
        if len(shape) != 3:
            raise InputError(f"mean-pool expects C x H x W, got {shape}")
        return (shape[0],)

    def forward(self, x):
        return ops.mean(x, axis=(1, 2))


class LinearLayer(Layer):
    kind = "linear"

    def __init__(self, weight: np.ndarray):
        weight = np.asarray(weight, dtype=np.float32)
        if weight.ndim != 2:
            raise InputError(f"linear weight must be 2-D, got {weight.shape}")
        self.weight = weight

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.weight.shape[1]:
            raise InputError(f"linear expects {self.weight.shape[1]} inputs, got shape {shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        flat = x if x.ndim == 1 else ops.reshape(x, (x.size,))
        return ops.matmul(Tensor(self.weight), flat)

    def weights(self):
        return self.weight


class PlantedBoxLayer(Layer):
    """w * mean of every channel inside the box."""
    kind = "planted-box"

    def __init__(self, box: Box, weight: float = 1.0):
        self.box = box
        self.weight = float(weight)

    def output_shape(self, shape):
        if len(shape) != 3 or not self.box.fits(*shape[1:]):
            raise InputError(f"box {self.box.to_list()} does not fit input {shape}")
        return ()

    def forward(self, x):
        rows, cols = self.box.slices()
        return ops.scale(ops.mean(ops.crop(x, (slice(None), rows, cols))), self.weight)

    def params(self):
        return {"box": self.box.to_list(), "weight": self.weight}


class PlantedChannelsLayer(Layer):
    """Sum over k in S of the spatial mean of channel k; other channels are never read."""
    kind = "planted-channels"

    def __init__(self, channels: Sequence[int]):
        channels = sorted(set(int(k) for k in channels))
        if not channels:
            raise InputError("planted channel set must be non-empty")
        self.channels = channels

    def output_shape(self, shape):
        if len(shape) != 3 or min(self.channels) < 0 or max(self.channels) >= shape[0]:
            raise InputError(f"channels {self.channels} out of range for activation {shape}")
        return ()

    def forward(self, x):
        _, height, width = x.shape
        plane = np.arange(height * width).reshape(1, height, width)
        index = np.asarray(self.channels).reshape(-1, 1, 1) * height * width + plane
        return ops.scale(ops.sum(ops.take(x, index)), 1.0 / (height * width))

    def params(self):
        return {"channels": self.channels}


LAYER_KINDS = {cls.kind: cls for cls in (Conv2dLayer, ReluLayer, MeanPoolLayer, LinearLayer,
                                         PlantedBoxLayer, PlantedChannelsLayer)}


# --- models ----------------------------------------------------------------

def chain_shapes(input_shape: Shape, layers: Sequence[Layer]) -> List[Shape]:
    """Shapes after each layer; raises InputError naming the first layer that breaks the chain."""
    shapes = []
    shape = tuple(input_shape)
    for index, layer in enumerate(layers):
        try:
            shape = tuple(layer.output_shape(shape))
        except InputError as err:
            raise InputError(f"layer {index} ({layer.kind}): {err}") from err
        shapes.append(shape)
    return shapes


class LayerModel:
    """Scorer model replaying a layer list; optionally splittable after one layer."""

    def __init__(self, input_shape: Shape, layers: Sequence[Layer], split_after: Optional[int] = None):
        if not layers:
            raise InputError("a model needs at least one layer")
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.shapes = chain_shapes(self.input_shape, self.layers)
        if int(np.prod(self.shapes[-1])) != 1:
            raise InputError(f"model must end in a scalar score, last shape is {self.shapes[-1]}")
        if split_after is not None and not 0 <= split_after < len(self.layers) - 1:
            raise InputError(f"split point {split_after} must lie in [0, {len(self.layers) - 2}]")
        self.split_after = split_after

    def check_input(self, image: Tensor):
        if image.shape != self.input_shape:
            raise InputError(f"model expects input {self.input_shape}, got {image.shape}")

    def run(self, x: Tensor, layers: Sequence[Layer]) -> Tensor:
        for layer in layers:
            x = layer.forward(x)
        return x

    def forward(self, image: Tensor) -> Tensor:
        self.check_input(image)
        return _as_scalar(self.run(image, self.layers))

    __call__ = forward

    @property
    def splittable(self) -> bool:
        return self.split_after is not None

    def split(self) -> "SplitModel":
        if self.split_after is None:
            raise InputError("model declares no split point")
        cut = self.split_after + 1
        return SplitModel(self, self.layers[:cut], self.layers[cut:], self.shapes[self.split_after])


class SplitModel:
    """Phi = tail(head(x)); `head` returns K x H x W activations, `tail` a scalar."""

    def __init__(self, model: LayerModel, head: Sequence[Layer], tail: Sequence[Layer],
                 activation_shape: Shape):
        if len(activation_shape) != 3:
            raise InputError(f"split activations must be K x H x W, got {activation_shape}")
        self.model = model
        self.head_layers = list(head)
        self.tail_layers = list(tail)
        self.activation_shape = tuple(activation_shape)

    @property
    def input_shape(self):
        return self.model.input_shape

    @property
    def channels(self) -> int:
        return self.activation_shape[0]

    def head(self, image: Tensor) -> Tensor:
        self.model.check_input(image)
        return self.model.run(image, self.head_layers)

    def tail(self, activation: Tensor) -> Tensor:
        if activation.shape != self.activation_shape:
            raise InputError(f"tail expects {self.activation_shape}, got {activation.shape}")
        return _as_scalar(self.model.run(activation, self.tail_layers))

    def forward(self, image: Tensor) -> Tensor:
        return self.tail(self.head(image))

    __call__ = forward


def _as_scalar(value: Tensor) -> Tensor:
    return value if value.ndim == 0 else ops.reshape(value, ())


# --- zoo -------------------------------------------------------------------

def planted_region_model(box: Box, weight: float = 1.0, input_shape: Shape = (3, 64, 64)) -> LayerModel:
    return LayerModel(input_shape, [PlantedBoxLayer(box, weight)])


def seeded_conv_weights(out_channels: int, in_channels: int, size: int = 3, seed: int = 0) -> np.ndarray:
    # non-negative so a positive image keeps every activation alive through the relu
    rng = np.random.default_rng(seed)
    weight = np.abs(rng.normal(0.0, 1.0, size=(out_channels, in_channels, size, size)))
    return (weight / (in_channels * size * size)).astype(np.float32)


def planted_channel_model(channels: Sequence[int], n_channels: int = 16, seed: int = 0,
                          input_shape: Shape = (3, 16, 16)) -> LayerModel:
    conv = Conv2dLayer(seeded_conv_weights(n_channels, input_shape[0], seed=seed))
    layers = [conv, ReluLayer(), PlantedChannelsLayer(channels)]
    logger.debug("planted channel model: S=%s of K=%d", sorted(channels), n_channels)
    return LayerModel(input_shape, layers, split_after=1)


def additive_channel_model(n_channels: int = 8, seed: int = 0, input_shape: Shape = (3, 16, 16)) -> LayerModel:
    """Conv + relu head, mean-pool + positive linear readout: every channel adds to the score."""
    rng = np.random.default_rng(seed + 1)
    readout = rng.uniform(0.5, 1.5, size=(1, n_channels)).astype(np.float32)
    layers = [Conv2dLayer(seeded_conv_weights(n_channels, input_shape[0], seed=seed)), ReluLayer(),
              MeanPoolLayer(), LinearLayer(readout)]
    return LayerModel(input_shape, layers, split_after=1)
