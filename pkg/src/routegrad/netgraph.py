"""Segmented network graphs with attachable loss heads.

A network is a chain of segments (numbered 1..S from input to output). Loss
heads hang off the output of a segment; exactly one of them is the primary
head and sits on the last segment. Auxiliary heads only exist to shape
training and are skipped entirely in ``infer`` mode.
"""
from __future__ import annotations

import copy
import re
from collections.abc import Mapping
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .layers import Layer, Linear, make_layer

DEFAULT_AUX_WEIGHT = 0.3
_HEAD_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ConfigError(ValueError):
    """An architecture or routing description is invalid."""


class ParameterStore(Mapping):
    """Name -> array map that can record which names were read."""

    def __init__(self, data: dict[str, np.ndarray] | None = None):
        self._data: dict[str, np.ndarray] = dict(data or {})
        self._accessed: set[str] | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        if self._accessed is not None:
            self._accessed.add(name)
        return self._data[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._data[name] = value

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def raw(self) -> dict[str, np.ndarray]:
        """Underlying dict; reads through it are not tracked."""
        return self._data

    @contextmanager
    def track_access(self):
        accessed: set[str] = set()
        previous, self._accessed = self._accessed, accessed
        try:
            yield accessed
        finally:
            self._accessed = previous


@dataclass
class Segment:
    id: int
    layers: list[Layer]


@dataclass
class LossHead:
    head_id: str
    kind: str  # "primary" | "auxiliary"
    attach: int
    layers: list[Layer]
    weight: float = 1.0

    @property
    def is_primary(self) -> bool:
        return self.kind == "primary"


@dataclass
class NetworkGraph:
    input_shape: tuple
    num_classes: int
    segments: list[Segment]
    heads: list[LossHead]
    params: ParameterStore
    owner: dict[str, str]
    arch: dict
    dtype: np.dtype = np.dtype(np.float32)

    @property
    def num_segments(self) -> int:
        return len(self.segments)

    @property
    def primary(self) -> LossHead:
        return next(h for h in self.heads if h.is_primary)

    def head(self, head_id: str) -> LossHead:
        for h in self.heads:
            if h.head_id == head_id:
                return h
        raise KeyError(head_id)

    def heads_at(self, segment_id: int) -> list[LossHead]:
        return [h for h in self.heads if h.attach == segment_id]

    def segment_of(self, name: str) -> int | None:
        """Segment id owning a trunk parameter, or None for head-branch parameters."""
        bucket = self.owner[name]
        return int(bucket[3:]) if bucket.startswith("seg") else None

    def weight_layers(self) -> list[Layer]:
        """Weight-bearing layers in trunk order, then head branches."""
        out = [layer for seg in self.segments for layer in seg.layers if layer.roles]
        for h in self.heads:
            out.extend(layer for layer in h.layers if layer.roles)
        return out

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.params.raw().values()))

    def signature(self) -> tuple:
        return tuple((name, a.shape) for name, a in self.params.raw().items())


@dataclass
class ForwardTrace:
    mode: str
    signature: tuple
    segment_caches: list[list] = field(default_factory=list)
    head_caches: dict[str, list] = field(default_factory=dict)
    loss_caches: dict[str, tuple] = field(default_factory=dict)
    losses: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    logits: np.ndarray | None = None

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)

    @property
    def total_loss(self) -> float:
        return float(sum(self.weights[h] * loss for h, loss in self.losses.items()))


def _segment_layers(entry) -> list:
    if isinstance(entry, Mapping):
        return list(entry["layers"])
    return list(entry)


def build_network(arch: Mapping, seed: int = 0, dtype=np.float32) -> NetworkGraph:
    """Build and He-initialise a network from a declarative description.

    ``arch`` keys: ``input_shape``, ``num_classes``, ``segments`` (a list of
    layer lists) and ``heads`` (each with ``id``, ``kind``, ``attach``,
    ``layers`` and optionally ``weight``). Conv/fc weights are drawn from
    N(0, 2 / fan_in); biases start at zero.
    """
    arch = copy.deepcopy(dict(arch))
    dtype = np.dtype(dtype)
    if not arch.get("segments"):
        raise ConfigError("architecture must declare at least one segment")
    input_shape = tuple(int(d) for d in arch["input_shape"])
    num_classes = int(arch["num_classes"])
    n_seg = len(arch["segments"])

    shapes: dict[str, tuple] = {}
    fan_ins: dict[str, int] = {}
    owner: dict[str, str] = {}

    def place(layer: Layer, in_shape: tuple, bucket: str) -> tuple:
        for name, shape in layer.param_shapes(in_shape).items():
            if name in owner:
                raise ConfigError(f"parameter {name} declared twice")
            shapes[name] = shape
            owner[name] = bucket
            if name.endswith(".weight"):
                fan_ins[name] = layer.fan_in(in_shape)
        return layer.output_shape(in_shape)

    segments = []
    seg_out_shapes = {}
    shape = input_shape
    for i, entry in enumerate(arch["segments"], start=1):
        layers = [make_layer(f"seg{i}.{j}", spec) for j, spec in enumerate(_segment_layers(entry))]
        if not layers:
            raise ConfigError(f"segment {i} has no layers")
        for layer in layers:
            shape = place(layer, shape, f"seg{i}")
        seg_out_shapes[i] = shape
        segments.append(Segment(i, layers))

    heads = []
    seen_ids = set()
    for spec in arch.get("heads", []):
        head_id = str(spec["id"])
        if not _HEAD_ID.match(head_id) or head_id.startswith("seg"):
            raise ConfigError(f"invalid head id {head_id!r}")
        if head_id in seen_ids:
            raise ConfigError(f"duplicate head id {head_id!r}")
        seen_ids.add(head_id)
        kind = spec.get("kind", "auxiliary")
        if kind not in ("primary", "auxiliary"):
            raise ConfigError(f"head {head_id}: unknown kind {kind!r}")
        attach = int(spec["attach"])
        if attach not in seg_out_shapes:
            raise ConfigError(f"head {head_id} attached to unknown segment {attach}")
        default_w = 1.0 if kind == "primary" else DEFAULT_AUX_WEIGHT
        weight = float(spec.get("weight", default_w))
        if weight <= 0:
            raise ConfigError(f"head {head_id}: loss weight must be > 0, got {weight}")
        layers = [make_layer(f"{head_id}.{j}", ls) for j, ls in enumerate(spec["layers"])]
        if not layers or not isinstance(layers[-1], Linear):
            raise ConfigError(f"head {head_id} must end in an fc classifier")
        hshape = seg_out_shapes[attach]
        for layer in layers:
            hshape = place(layer, hshape, f"head:{head_id}")
        if hshape != (num_classes,):
            raise ConfigError(f"head {head_id} produces {hshape}, expected ({num_classes},)")
        heads.append(LossHead(head_id, kind, attach, layers, weight))

    primaries = [h for h in heads if h.is_primary]
    if len(primaries) != 1:
        raise ConfigError(f"need exactly one primary head, found {len(primaries)}")
    if primaries[0].attach != n_seg:
        raise ConfigError(f"primary head must attach to the last segment ({n_seg}), not {primaries[0].attach}")
    if primaries[0].weight != 1.0:
        raise ConfigError("primary head loss weight must be 1.0")

    rng = np.random.default_rng(seed)
    data = {}
    for name, shp in shapes.items():
        if name.endswith(".weight"):
            std = np.sqrt(2.0 / fan_ins[name])
            data[name] = (rng.standard_normal(shp) * std).astype(dtype)
        else:
            data[name] = np.zeros(shp, dtype=dtype)

    graph = NetworkGraph(input_shape, num_classes, segments, heads, ParameterStore(data), owner, arch, dtype)
    _check_partition(graph)
    return graph


def _check_partition(graph: NetworkGraph) -> None:
    declared = [n for seg in graph.segments for layer in seg.layers for n in layer.param_names]
    declared += [n for h in graph.heads for layer in h.layers for n in layer.param_names]
    assert len(declared) == len(set(declared)), "parameter claimed by two layers"
    assert set(declared) == set(graph.params), "parameter store does not match layers"


def _run_layers(layers, params, x, caches):
    for layer in layers:
        x, cache = layer.forward(params, x)
        if caches is not None:
            caches.append(cache)
    return x


def forward(graph: NetworkGraph, batch: np.ndarray, labels=None, mode: str = "train") -> ForwardTrace:
    """Propagate a batch through the trunk and the heads live in ``mode``.

    ``train`` evaluates every head and keeps the caches backward needs;
    ``infer`` evaluates only the primary head and keeps no caches.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    batch = np.asarray(batch)
    if batch.shape[1:] != graph.input_shape:
        raise K.ShapeError("forward", f"batch shape {batch.shape[1:]} does not match input {graph.input_shape}")
    train = mode == "train"
    if train and labels is None:
        raise ValueError("train mode needs labels")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= graph.num_classes):
            raise IndexError(f"labels must lie in [0, {graph.num_classes})")

    live = graph.heads if train else [graph.primary]
    trace = ForwardTrace(mode=mode, signature=graph.signature(),
                         weights={h.head_id: h.weight for h in live})
    params = graph.params
    x = batch.astype(graph.dtype, copy=False)
    for seg in graph.segments:
        caches = [] if train else None
        x = _run_layers(seg.layers, params, x, caches)
        trace.segment_caches.append(caches)
        for head in live:
            if head.attach != seg.id:
                continue
            hcaches = [] if train else None
            logits = _run_layers(head.layers, params, x, hcaches)
            trace.head_caches[head.head_id] = hcaches
            if head.is_primary:
                trace.logits = logits
            if labels is not None:
                loss, lcache = K.softmax_xent_forward(logits, labels)
                trace.losses[head.head_id] = loss
                if train:
                    trace.loss_caches[head.head_id] = lcache
    return trace


def predict(graph: NetworkGraph, batch: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    """Primary-head logits for ``batch``, evaluated in chunks."""
    out = [forward(graph, batch[i:i + batch_size], mode="infer").logits
           for i in range(0, len(batch), batch_size)]
    return np.concatenate(out, axis=0)


def strip_aux_heads(graph: NetworkGraph) -> NetworkGraph:
    """Copy of ``graph`` keeping only the trunk and the primary head."""
    primary = graph.primary
    arch = copy.deepcopy(graph.arch)
    arch["heads"] = [h for h in arch.get("heads", []) if str(h["id"]) == primary.head_id]
    keep = {n: a.copy() for n, a in graph.params.raw().items() if not graph.owner[n].startswith("head:")
            or graph.owner[n] == f"head:{primary.head_id}"}
    owner = {n: graph.owner[n] for n in keep}
    return NetworkGraph(graph.input_shape, graph.num_classes, graph.segments, [primary],
                        ParameterStore(keep), owner, arch, graph.dtype)
