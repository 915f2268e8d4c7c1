"""Layer descriptors binding kernels to named parameters.

Layers hold no arrays. Parameters live in a ``ParameterStore`` and are looked
up by ``"<layer name>.<role>"`` at call time, so the same layer objects serve
training, checkpoint loading and aux-head stripping.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from . import kernels as K


class Layer:
    kind = "layer"
    roles: tuple[str, ...] = ()

    def __init__(self, name: str):
        self.name = name

    def param_name(self, role: str) -> str:
        return f"{self.name}.{role}"

    @property
    def param_names(self) -> list[str]:
        return [self.param_name(r) for r in self.roles]

    def param_shapes(self, in_shape: tuple) -> dict[str, tuple]:
        return {}

    def fan_in(self, in_shape: tuple) -> int:
        return 0

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, params: Mapping, x: np.ndarray):
        raise NotImplementedError

    def input_grad(self, params: Mapping, cache, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_grads(self, params: Mapping, cache, g: np.ndarray) -> dict[str, np.ndarray]:
        return {}

    def backward(self, params: Mapping, cache, g: np.ndarray, need_input_grad: bool = True):
        gx = self.input_grad(params, cache, g) if need_input_grad else None
        return gx, self.param_grads(params, cache, g)

    def to_spec(self) -> dict:
        return {"type": self.kind}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class Conv2d(Layer):
    kind = "conv"
    roles = ("weight", "bias")

    def __init__(self, name: str, out_channels: int, kernel: int = 3, stride: int = 1, pad: int = 0):
        super().__init__(name)
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad

    def param_shapes(self, in_shape):
        c = in_shape[0]
        return {
            self.param_name("weight"): (self.out_channels, c, self.kernel, self.kernel),
            self.param_name("bias"): (self.out_channels,),
        }

    def fan_in(self, in_shape):
        return in_shape[0] * self.kernel * self.kernel

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise K.ShapeError("conv2d", f"layer {self.name} needs a [C, H, W] input, got {in_shape}")
        c, h, w = in_shape
        if self.kernel > h + 2 * self.pad or self.kernel > w + 2 * self.pad:
            raise K.ShapeError("conv2d", f"layer {self.name}: kernel {self.kernel} exceeds padded input {in_shape}")
        return (
            self.out_channels,
            K.conv_output_size(h, self.kernel, self.stride, self.pad),
            K.conv_output_size(w, self.kernel, self.stride, self.pad),
        )

    def forward(self, params, x):
        return K.conv2d_forward(x, params[self.param_name("weight")], params[self.param_name("bias")],
                                self.stride, self.pad)

    def input_grad(self, params, cache, g):
        return K.conv2d_input_grad(g, cache[1], params[self.param_name("weight")], self.stride, self.pad)

    def param_grads(self, params, cache, g):
        gw, gb = K.conv2d_param_grads(g, cache, params[self.param_name("weight")])
        return {self.param_name("weight"): gw, self.param_name("bias"): gb}

    def to_spec(self):
        return {"type": "conv", "out": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "pad": self.pad}


class Linear(Layer):
    """matmul followed by add_bias; weight is stored ``[out, in]``."""

    kind = "fc"
    roles = ("weight", "bias")

    def __init__(self, name: str, out_features: int):
        super().__init__(name)
        self.out_features = out_features

    def param_shapes(self, in_shape):
        if len(in_shape) != 1:
            raise K.ShapeError("matmul", f"layer {self.name} needs a flat input, got {in_shape}")
        return {
            self.param_name("weight"): (self.out_features, in_shape[0]),
            self.param_name("bias"): (self.out_features,),
        }

    def fan_in(self, in_shape):
        return in_shape[0]

    def output_shape(self, in_shape):
        self.param_shapes(in_shape)
        return (self.out_features,)

    def forward(self, params, x):
        y, cache = K.matmul_forward(x, params[self.param_name("weight")])
        return K.add_bias_forward(y, params[self.param_name("bias")]), cache

    def input_grad(self, params, cache, g):
        return g @ params[self.param_name("weight")]

    def param_grads(self, params, cache, g):
        return {self.param_name("weight"): g.T @ cache, self.param_name("bias"): K.add_bias_backward(g)}

    def to_spec(self):
        return {"type": "fc", "out": self.out_features}


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, params, x):
        y, mask = K.relu_forward(x)
        return y, mask

    def input_grad(self, params, cache, g):
        return K.relu_backward(g, cache)


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, name: str, window: int = 2, stride: int | None = None):
        super().__init__(name)
        self.window = window
        self.stride = window if stride is None else stride

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if self.window > h or self.window > w:
            raise K.ShapeError("maxpool2d", f"layer {self.name}: window {self.window} exceeds input {in_shape}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def forward(self, params, x):
        return K.maxpool2d_forward(x, self.window, self.stride)

    def input_grad(self, params, cache, g):
        return K.maxpool2d_backward(g, cache)

    def to_spec(self):
        return {"type": "maxpool", "window": self.window, "stride": self.stride}


class GlobalAvgPool(Layer):
    kind = "gap"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise K.ShapeError("global_avg_pool", f"layer {self.name} needs a [C, H, W] input, got {in_shape}")
        return (in_shape[0],)

    def forward(self, params, x):
        return K.global_avg_pool_forward(x)

    def input_grad(self, params, cache, g):
        return K.global_avg_pool_backward(g, cache)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x):
        return K.flatten_forward(x)

    def input_grad(self, params, cache, g):
        return K.flatten_backward(g, cache)


LAYER_TYPES = {
    "conv": Conv2d,
    "fc": Linear,
    "relu": ReLU,
    "maxpool": MaxPool2d,
    "gap": GlobalAvgPool,
    "flatten": Flatten,
}


def make_layer(name: str, spec) -> Layer:
    """Build a layer from ``"relu"`` or ``{"type": "conv", "out": 8, ...}``."""
    if isinstance(spec, str):
        spec = {"type": spec}
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {kind!r} for {name}")
    if kind == "conv":
        return Conv2d(name, int(spec["out"]), int(spec.get("kernel", 3)),
                      int(spec.get("stride", 1)), int(spec.get("pad", 0)))
    if kind == "fc":
        return Linear(name, int(spec["out"]))
    if kind == "maxpool":
        window = int(spec.get("window", 2))
        return MaxPool2d(name, window, int(spec.get("stride", window)))
    if spec:
        raise ValueError(f"layer {name}: {kind} takes no options, got {sorted(spec)}")
    return LAYER_TYPES[kind](name)
