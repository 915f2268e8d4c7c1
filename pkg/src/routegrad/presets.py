"""Named desk-scale architectures and their default routings.

``convnet5`` keeps the five-stage layout of a VGG-style trunk at 1/16 width
(4, 8, 16, 32, 16 channels) on 28x28 inputs, with a small auxiliary classifier
(1x1 conv, fc64, fc) after stage 4 and the primary classifier on top. ``mlp6`` is a six-layer
perceptron split into three segments.
"""
from __future__ import annotations

import copy

CONV = {"type": "conv", "kernel": 3, "pad": 1}
POOL = {"type": "maxpool", "window": 2, "stride": 2}


def _conv(out: int) -> dict:
    return dict(CONV, out=out)


def convnet5(num_classes: int = 10, input_shape=(1, 28, 28), aux: bool = True) -> dict:
    heads = [{"id": "primary", "kind": "primary", "attach": 5,
              "layers": ["flatten", {"type": "fc", "out": 64}, "relu", {"type": "fc", "out": num_classes}]}]
    if aux:
        heads.append({"id": "aux", "kind": "auxiliary", "attach": 4, "weight": 0.3,
                      "layers": [{"type": "conv", "out": 16, "kernel": 1}, "relu", "flatten",
                                 {"type": "fc", "out": 64}, "relu", {"type": "fc", "out": num_classes}]})
    return {
        "input_shape": list(input_shape),
        "num_classes": num_classes,
        "segments": [
            [_conv(4), "relu", POOL],             # 28 -> 14
            [_conv(8), "relu", POOL],             # 14 -> 7
            [_conv(16), "relu"],                  # 7
            [_conv(32), "relu", POOL],            # 7 -> 3
            [_conv(16), "relu"],                  # 3
        ],
        "heads": heads,
    }


def mlp6(num_classes: int = 10, input_shape=(1, 28, 28), width: int = 64, aux: bool = True) -> dict:
    fc = {"type": "fc", "out": width}
    heads = [{"id": "primary", "kind": "primary", "attach": 3,
              "layers": [{"type": "fc", "out": num_classes}]}]
    if aux:
        heads.append({"id": "aux", "kind": "auxiliary", "attach": 2, "weight": 0.3,
                      "layers": [{"type": "fc", "out": num_classes}]})
    return {
        "input_shape": list(input_shape),
        "num_classes": num_classes,
        "segments": [
            ["flatten", fc, "relu", fc, "relu"],
            [fc, "relu", fc, "relu"],
            [fc, "relu"],
        ],
        "heads": heads,
    }


PRESETS = {"convnet5": convnet5, "mlp6": mlp6}

# low segment per head under relay routing; attach points come from the preset
DEFAULT_ROUTING = {
    "convnet5": {"aux": 1, "primary": 4},
    "mlp6": {"aux": 1, "primary": 2},
}


def get_preset(name: str, **kwargs) -> dict:
    try:
        return copy.deepcopy(PRESETS[name](**kwargs))
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
