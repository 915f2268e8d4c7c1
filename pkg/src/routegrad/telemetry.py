"""Per-layer gradient magnitude statistics.

Magnitude is the mean absolute value over a layer's weight tensor (biases
are not included). ``rel_mag`` is the gradient magnitude divided by the
weight magnitude; an all-zero weight tensor reports 0 and warns.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_HEADER = ("iteration", "layer", "avg_grad_mag", "avg_weight_mag", "rel_mag")


class TelemetryError(ValueError):
    pass


@dataclass(frozen=True)
class GradStatRow:
    iteration: int
    layer: str
    avg_grad_mag: float
    avg_weight_mag: float
    rel_mag: float


def layer_stats(grad: np.ndarray, weight: np.ndarray, iteration: int, layer: str) -> GradStatRow:
    if not np.all(np.isfinite(grad)):
        raise TelemetryError(f"non-finite gradient in layer {layer} at iteration {iteration}")
    g = float(np.mean(np.abs(grad), dtype=np.float64))
    w = float(np.mean(np.abs(weight), dtype=np.float64))
    if w == 0.0:
        warnings.warn(f"layer {layer}: all-zero weights, relative magnitude reported as 0")
        rel = 0.0
    else:
        rel = g / w
    return GradStatRow(iteration, layer, g, w, rel)


def record_grad_stats(grads, graph_or_params, iteration: int, layers=None) -> list[GradStatRow]:
    """One row per weight-bearing layer, in trunk order then head branches.

    ``graph_or_params`` is a NetworkGraph, or a plain name -> array mapping
    together with an explicit ``layers`` list of layer names.
    """
    fused = getattr(grads, "fused", grads)
    if layers is None:
        layers = [layer.name for layer in graph_or_params.weight_layers()]
        params = graph_or_params.params.raw()
    else:
        params = graph_or_params
    return [layer_stats(fused[f"{name}.weight"], params[f"{name}.weight"], iteration, name) for name in layers]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_stats_csv(rows, path, append: bool = False) -> None:
    rows = list(rows)
    if not rows:
        raise TelemetryError("no gradient statistics to write")
    path = Path(path)
    write_header = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if write_header:
            w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.iteration, r.layer, _fmt(r.avg_grad_mag), _fmt(r.avg_weight_mag), _fmt(r.rel_mag)])


def read_stats_csv(path) -> list[GradStatRow]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        return [GradStatRow(int(r["iteration"]), r["layer"], float(r["avg_grad_mag"]),
                            float(r["avg_weight_mag"]), float(r["rel_mag"])) for r in reader]


def stability_violations(rows, tail_fraction: float = 0.5, factor: float = 100.0) -> dict[str, list[int]]:
    """Iterations in the last ``tail_fraction`` of the run whose rel_mag leaves
    [median / factor, median * factor], keyed by layer."""
    by_layer: dict[str, list[GradStatRow]] = {}
    for r in rows:
        by_layer.setdefault(r.layer, []).append(r)
    last_iter = max(r.iteration for r in rows)
    first_iter = min(r.iteration for r in rows)
    cutoff = first_iter + (1.0 - tail_fraction) * (last_iter - first_iter)
    out = {}
    for layer, lrows in by_layer.items():
        tail = [r for r in lrows if r.iteration >= cutoff]
        if not tail:
            continue
        med = float(np.median([r.rel_mag for r in tail]))
        bad = [r.iteration for r in tail if not (med / factor <= r.rel_mag <= med * factor)]
        out[layer] = bad
    return out


def nonfinite_rows(rows) -> list[GradStatRow]:
    return [r for r in rows if not all(math.isfinite(v) for v in (r.avg_grad_mag, r.avg_weight_mag, r.rel_mag))]
