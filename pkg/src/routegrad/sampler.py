"""Mini-batch index samplers.

``ClassAwareSampler`` walks a shuffled class list; for every class it visits
it takes the next image from that class's own shuffled list. Either list is
reshuffled when its cursor runs off the end, so after any multiple of C draws
every class has been drawn equally often.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netgraph import ConfigError


@dataclass
class SamplerState:
    class_list: np.ndarray
    class_cursor: int
    per_class: dict[int, np.ndarray]
    per_class_cursor: dict[int, int]
    rng: np.random.Generator


def init_sampler(labels, seed: int, num_classes: int | None = None) -> SamplerState:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ConfigError("labels must be a non-empty 1-d array")
    counts = np.bincount(labels, minlength=num_classes or 0)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ConfigError(f"classes with no images: {empty.tolist()}")
    rng = np.random.default_rng(seed)
    classes = np.arange(len(counts))
    class_list = rng.permutation(classes)
    per_class = {}
    for c in classes:
        per_class[int(c)] = rng.permutation(np.flatnonzero(labels == c))
    return SamplerState(class_list, 0, per_class, {c: 0 for c in per_class}, rng)


def next_batch(state: SamplerState, batch_size: int) -> np.ndarray:
    out = np.empty(batch_size, dtype=np.int64)
    for i in range(batch_size):
        if state.class_cursor == len(state.class_list):
            state.class_list = state.rng.permutation(state.class_list)
            state.class_cursor = 0
        c = int(state.class_list[state.class_cursor])
        state.class_cursor += 1
        images = state.per_class[c]
        cur = state.per_class_cursor[c]
        if cur == len(images):
            images = state.per_class[c] = state.rng.permutation(images)
            cur = 0
        out[i] = images[cur]
        state.per_class_cursor[c] = cur + 1
    return out


class ClassAwareSampler:
    def __init__(self, labels, seed: int, num_classes: int | None = None):
        self.state = init_sampler(labels, seed, num_classes)

    def next_batch(self, batch_size: int) -> np.ndarray:
        return next_batch(self.state, batch_size)


class ShuffleSampler:
    """Plain epoch-wise shuffling over all images."""

    def __init__(self, labels, seed: int):
        self.n = len(labels)
        self.rng = np.random.default_rng(seed)
        self.order = self.rng.permutation(self.n)
        self.cursor = 0

    def next_batch(self, batch_size: int) -> np.ndarray:
        out = []
        need = batch_size
        while need:
            if self.cursor == self.n:
                self.order = self.rng.permutation(self.n)
                self.cursor = 0
            take = self.order[self.cursor:self.cursor + need]
            self.cursor += len(take)
            need -= len(take)
            out.append(take)
        return np.concatenate(out).astype(np.int64)


def make_sampler(mode: str, labels, seed: int, num_classes: int | None = None):
    if mode == "class_aware":
        return ClassAwareSampler(labels, seed, num_classes)
    if mode == "shuffle":
        return ShuffleSampler(labels, seed)
    raise ConfigError(f"unknown sampler mode {mode!r}; expected 'shuffle' or 'class_aware'")
