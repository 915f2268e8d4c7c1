"""Routed backward passes.

Each loss head ``h`` owns a contiguous span of trunk segments
``[low, attach]``. Its gradient starts at the head's loss, scaled by the
head's loss weight, and flows down the trunk until the boundary below
``low``, where it is cut (a stop-gradient on that head's flow only; the
forward pass is untouched). Where spans overlap, parameter gradients are the
sum of the covering heads' contributions.

``backward_relay`` computes this in one joint pass. Flows that share a
``low`` segment have identical futures, so they are merged into a single
group on arrival; parameter gradients are taken once per layer from the
summed upstream of all live groups, and only activation gradients are kept
per group. ``oracle_relay_grads`` is the literal per-head definition and is
used to check the joint pass.
"""
from __future__ import annotations

import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .netgraph import ConfigError, ForwardTrace, NetworkGraph

MODES = ("standard", "multiloss_standard", "relay")


class RoutingError(ConfigError):
    """Routing spec is inconsistent with the graph; carries the report."""

    def __init__(self, message: str, report: "ValidationReport | None" = None):
        super().__init__(message)
        self.report = report


class TraceMismatchError(ValueError):
    """The forward trace was not produced by this graph in train mode."""


class RoutingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HeadRoute:
    head_id: str
    low: int
    attach: int
    weight: float


@dataclass
class RoutingSpec:
    routes: list[HeadRoute]
    allow_uncovered: bool = False

    def route(self, head_id: str) -> HeadRoute:
        for r in self.routes:
            if r.head_id == head_id:
                return r
        raise KeyError(head_id)

    @property
    def head_ids(self) -> list[str]:
        return [r.head_id for r in self.routes]

    @classmethod
    def from_graph(cls, graph: NetworkGraph, lows: Mapping[str, int] | None = None,
                   weights: Mapping[str, float] | None = None, heads=None,
                   allow_uncovered: bool = False) -> "RoutingSpec":
        """Routes for ``heads`` (default: all) taking attach points from the graph.

        Missing ``lows`` default to 1 and missing ``weights`` to the head's own weight.
        """
        lows = dict(lows or {})
        weights = dict(weights or {})
        chosen = [graph.head(h) for h in heads] if heads is not None else list(graph.heads)
        routes = [HeadRoute(h.head_id, int(lows.get(h.head_id, 1)), h.attach,
                            float(weights.get(h.head_id, h.weight))) for h in chosen]
        return cls(routes, allow_uncovered)

    @classmethod
    def standard(cls, graph: NetworkGraph) -> "RoutingSpec":
        return cls.from_graph(graph, heads=[graph.primary.head_id])

    @classmethod
    def multiloss(cls, graph: NetworkGraph, weights: Mapping[str, float] | None = None) -> "RoutingSpec":
        return cls.from_graph(graph, weights=weights)

    def to_rows(self) -> list[tuple]:
        return [(r.head_id, r.low, r.attach, r.weight) for r in self.routes]


@dataclass
class ValidationReport:
    rows: list[tuple]
    coverage: dict[int, list[str]]
    overlap: list[int]
    uncovered: list[int]
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.errors

    def to_text(self) -> str:
        lines = ["head        low  attach  weight"]
        for head_id, low, attach, weight in self.rows:
            lines.append(f"{head_id:<10} {low:>4} {attach:>7}  {weight:g}")
        lines.append("coverage:")
        for seg in sorted(self.coverage):
            lines.append(f"  segment {seg}: {','.join(self.coverage[seg]) or '-'}")
        lines.append(f"overlap: {_fmt_set(self.overlap)}")
        lines.append(f"uncovered: {_fmt_set(self.uncovered)}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        lines.extend(f"error: {e}" for e in self.errors)
        lines.append("status: " + ("valid" if self.valid else "INVALID"))
        return "\n".join(lines)


def _fmt_set(items) -> str:
    return "{" + ",".join(str(i) for i in items) + "}"


def validate_routing(spec: RoutingSpec, graph: NetworkGraph, allow_uncovered: bool | None = None) -> ValidationReport:
    """Check a routing spec against a graph.

    Returns the report when valid; raises ``RoutingError`` (carrying the
    report) otherwise. A missing overlap between heads is only a warning.
    """
    if allow_uncovered is None:
        allow_uncovered = spec.allow_uncovered
    n_seg = graph.num_segments
    errors: list[str] = []
    warns: list[str] = []
    known = {h.head_id: h for h in graph.heads}
    coverage: dict[int, list[str]] = {s: [] for s in range(1, n_seg + 1)}
    seen = set()
    for r in spec.routes:
        if r.head_id in seen:
            errors.append(f"head {r.head_id} routed twice")
        seen.add(r.head_id)
        head = known.get(r.head_id)
        if head is None:
            errors.append(f"unknown head {r.head_id}")
            continue
        if not (1 <= r.low <= n_seg) or not (1 <= r.attach <= n_seg):
            errors.append(f"head {r.head_id} references unknown segment (span [{r.low},{r.attach}], graph has 1..{n_seg})")
            continue
        if r.attach != head.attach:
            errors.append(f"head {r.head_id} attach {r.attach} does not match graph attach {head.attach}")
            continue
        if r.low > r.attach:
            errors.append(f"head {r.head_id} low segment {r.low} above attach segment {r.attach}")
            continue
        if r.weight <= 0:
            errors.append(f"head {r.head_id} weight must be > 0, got {r.weight}")
        for s in range(r.low, r.attach + 1):
            coverage[s].append(r.head_id)
    if graph.primary.head_id not in seen:
        errors.append(f"primary head {graph.primary.head_id} is not routed")
    overlap = [s for s, hs in coverage.items() if len(hs) >= 2]
    uncovered = [s for s, hs in coverage.items() if not hs]
    if uncovered and not allow_uncovered and not errors:
        errors.append(f"uncovered segments {_fmt_set(uncovered)}")
    if len(spec.routes) >= 2 and not overlap and not errors:
        warns.append("no two heads overlap; gradient flows never meet")
    report = ValidationReport(spec.to_rows(), coverage, overlap, uncovered, errors, warns)
    for w in warns:
        warnings.warn(w, RoutingWarning, stacklevel=2)
    if errors:
        raise RoutingError("; ".join(errors), report)
    return report


@dataclass
class GradientSet:
    fused: dict[str, np.ndarray]
    per_head: dict[str, dict[str, np.ndarray]] | None = None
    stats: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fused[name]


def _check_trace(graph: NetworkGraph, trace: ForwardTrace, head_ids) -> None:
    if trace.mode != "train":
        raise TraceMismatchError("backward needs a train-mode trace")
    if trace.signature != graph.signature():
        raise TraceMismatchError("trace was produced by a different graph")
    missing = [h for h in head_ids if h not in trace.loss_caches]
    if missing:
        raise TraceMismatchError(f"trace has no loss for heads {missing}")


def _add_into(acc: dict, grads: dict, scale: float | None = None) -> None:
    for name, g in grads.items():
        if scale is not None:
            g = g * scale
        if name in acc:
            acc[name] = acc[name] + g
        else:
            acc[name] = g


def _complete(graph: NetworkGraph, grads: dict) -> dict[str, np.ndarray]:
    return {name: grads[name] if name in grads else np.zeros_like(a)
            for name, a in graph.params.raw().items()}


def _branch_backward(graph, trace, head, g):
    """Backprop through a head branch; returns (grad at attach point, param grads)."""
    params = graph.params
    caches = trace.head_caches[head.head_id]
    pgrads = {}
    for layer, cache in zip(reversed(head.layers), reversed(caches)):
        g, pg = layer.backward(params, cache, g)
        pgrads.update(pg)
    return g, pgrads


def backward_relay(graph: NetworkGraph, trace: ForwardTrace, spec: RoutingSpec,
                   audit: bool = False) -> GradientSet:
    """Joint routed backward pass.

    With ``audit=True`` flows are kept per head (never merged) and the
    unweighted per-head gradients are returned in ``per_head``; ``fused`` is
    then their weighted sum.
    """
    _check_trace(graph, trace, spec.head_ids)
    params = graph.params
    routes = {r.head_id: r for r in spec.routes}
    stats = {"input_grads": 0, "param_grads": 0}

    fused: dict[str, np.ndarray] = {}
    per_head = {h: {} for h in routes} if audit else None

    # group key -> [low segment, gradient, member heads]
    arrivals: dict[int, list] = {}
    for head_id, r in routes.items():
        head = graph.head(head_id)
        scale = 1.0 if audit else r.weight
        g = K.softmax_xent_backward(trace.loss_caches[head_id], scale)
        g, pg = _branch_backward(graph, trace, head, g)
        stats["input_grads"] += len(head.layers)
        if audit:
            per_head[head_id].update(pg)
        else:
            _add_into(fused, pg)
        arrivals.setdefault(r.attach, []).append((head_id, r.low, g))

    groups: dict = {}
    for seg in reversed(graph.segments):
        s = seg.id
        for head_id, low, g in arrivals.get(s, ()):
            key = head_id if audit else low
            if key in groups:
                groups[key][1] = groups[key][1] + g
            else:
                groups[key] = [low, g]
        if not groups:
            continue
        caches = trace.segment_caches[s - 1]
        n_layers = len(seg.layers)
        for j in range(n_layers - 1, -1, -1):
            layer, cache = seg.layers[j], caches[j]
            if layer.roles:
                if audit:
                    for key, (_, g) in groups.items():
                        per_head[key].update(layer.param_grads(params, cache, g))
                        stats["param_grads"] += 1
                else:
                    gs = [g for _, g in groups.values()]
                    total = gs[0]
                    for g in gs[1:]:
                        total = total + g
                    fused.update(layer.param_grads(params, cache, total))
                    stats["param_grads"] += 1
            bottom = j == 0
            for key in list(groups):
                low, g = groups[key]
                if bottom and low >= s:
                    del groups[key]
                    continue
                groups[key][1] = layer.input_grad(params, cache, g)
                stats["input_grads"] += 1

    if audit:
        per_head = {h: _complete(graph, pg) for h, pg in per_head.items()}
        for head_id, r in routes.items():
            _add_into(fused, per_head[head_id], r.weight)
    return GradientSet(_complete(graph, fused), per_head, stats)


def oracle_relay_grads(graph: NetworkGraph, trace: ForwardTrace, spec: RoutingSpec) -> GradientSet:
    """Literal routed semantics: one full backward per head, cut below its low segment.

    The cut multiplies that head's activation gradient by zero and keeps going,
    so lower segments see an explicit zero flow rather than being skipped.
    """
    _check_trace(graph, trace, spec.head_ids)
    params = graph.params
    per_head = {}
    stats = {"input_grads": 0, "param_grads": 0}
    for r in spec.routes:
        head = graph.head(r.head_id)
        grads: dict[str, np.ndarray] = {}
        g = K.softmax_xent_backward(trace.loss_caches[r.head_id], 1.0)
        for layer, cache in zip(reversed(head.layers), reversed(trace.head_caches[r.head_id])):
            g, pg = layer.backward(params, cache, g)
            grads.update(pg)
            stats["input_grads"] += 1
        for s in range(r.attach, 0, -1):
            seg = graph.segments[s - 1]
            for layer, cache in zip(reversed(seg.layers), reversed(trace.segment_caches[s - 1])):
                g, pg = layer.backward(params, cache, g)
                grads.update(pg)
                stats["input_grads"] += 1
                stats["param_grads"] += bool(layer.roles)
            if s == r.low:
                g = np.zeros_like(g)
        per_head[r.head_id] = _complete(graph, grads)

    fused = {name: np.zeros_like(a) for name, a in params.raw().items()}
    for r in spec.routes:
        for name, g in per_head[r.head_id].items():
            fused[name] = fused[name] + r.weight * g
    return GradientSet(fused, per_head, stats)


def backward_standard(graph: NetworkGraph, trace: ForwardTrace) -> GradientSet:
    """Plain reverse-mode over the primary loss; auxiliary heads contribute nothing."""
    primary = graph.primary
    _check_trace(graph, trace, [primary.head_id])
    params = graph.params
    grads: dict[str, np.ndarray] = {}
    g = K.softmax_xent_backward(trace.loss_caches[primary.head_id], 1.0)
    g, pg = _branch_backward(graph, trace, primary, g)
    grads.update(pg)
    for seg in reversed(graph.segments):
        caches = trace.segment_caches[seg.id - 1]
        for j in range(len(seg.layers) - 1, -1, -1):
            layer = seg.layers[j]
            last = seg.id == 1 and j == 0
            if layer.roles:
                grads.update(layer.param_grads(params, caches[j], g))
            if not last:
                g = layer.input_grad(params, caches[j], g)
    return GradientSet(_complete(graph, grads))


def backward_multiloss(graph: NetworkGraph, trace: ForwardTrace,
                       weights: Mapping[str, float] | None = None, audit: bool = False) -> GradientSet:
    """Every head's gradient reaches the lowest layer (all spans start at segment 1).

    Written as the textbook deep-supervision pass: each head's weighted flow is
    added to the trunk gradient at its attach point and one walk runs down to
    segment 1. It shares no routing code with ``backward_relay``, which makes it
    an independent reference for relay with all lows at 1. ``audit=True`` needs
    per-head results and delegates to the relay pass.
    """
    spec = RoutingSpec.multiloss(graph, weights)
    if audit:
        return backward_relay(graph, trace, spec, audit=True)
    _check_trace(graph, trace, spec.head_ids)
    params = graph.params
    grads: dict[str, np.ndarray] = {}
    inject: dict[int, np.ndarray] = {}
    for r in spec.routes:
        head = graph.head(r.head_id)
        g = K.softmax_xent_backward(trace.loss_caches[r.head_id], r.weight)
        g, pg = _branch_backward(graph, trace, head, g)
        grads.update(pg)
        inject[head.attach] = g if head.attach not in inject else inject[head.attach] + g
    g = None
    for seg in reversed(graph.segments):
        if seg.id in inject:
            g = inject[seg.id] if g is None else g + inject[seg.id]
        if g is None:
            continue
        caches = trace.segment_caches[seg.id - 1]
        for j in range(len(seg.layers) - 1, -1, -1):
            layer = seg.layers[j]
            if layer.roles:
                grads.update(layer.param_grads(params, caches[j], g))
            if not (seg.id == 1 and j == 0):
                g = layer.input_grad(params, caches[j], g)
    return GradientSet(_complete(graph, grads))


def backward(graph: NetworkGraph, trace: ForwardTrace, mode: str, spec: RoutingSpec | None = None,
             audit: bool = False) -> GradientSet:
    if mode == "standard":
        return backward_standard(graph, trace)
    if mode == "multiloss_standard":
        weights = {r.head_id: r.weight for r in spec.routes} if spec is not None else None
        return backward_multiloss(graph, trace, weights, audit=audit)
    if mode == "relay":
        if spec is None:
            raise RoutingError("relay mode needs a routing spec")
        return backward_relay(graph, trace, spec, audit=audit)
    raise ValueError(f"unknown backward mode {mode!r}; expected one of {MODES}")
