"""Training and evaluation loops driven by a RunConfig."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import telemetry
from .checkpoint import load_into, save_checkpoint
from .config import RunConfig
from .dataio import Dataset, augment, load_cifar_bin, load_idx, subtract_mean
from .gradrouter import backward, validate_routing
from .netgraph import ConfigError, NetworkGraph, forward, predict, strip_aux_heads
from .optim import LrSchedule, SgdState, schedule_step, sgd_step
from .sampler import make_sampler

log = logging.getLogger(__name__)

METRICS_HEADER = ("iteration", "mode", "head", "train_loss", "val_top1_err", "val_top5_err", "lr")


class NumericError(RuntimeError):
    def __init__(self, iteration: int, detail: str):
        super().__init__(f"iteration {iteration}: {detail}")
        self.iteration = iteration


@dataclass
class TrainResult:
    graph: NetworkGraph
    metrics: list[tuple]
    top1_err: float
    top5_err: float
    checkpoint: Path | None
    metrics_path: Path | None
    telemetry_path: Path | None
    iterations: int


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    dtype = cfg.np_dtype
    if d.format == "idx":
        if not all([d.train_images, d.train_labels, d.test_images, d.test_labels]):
            raise ConfigError("idx data needs train/test image and label paths")
        train = load_idx(d.train_images, d.train_labels, dtype)
        test = load_idx(d.test_images, d.test_labels, dtype)
    elif d.format == "cifar":
        if not d.train_files or not d.test_files:
            raise ConfigError("cifar data needs train_files and test_files")
        train = load_cifar_bin(d.train_files, dtype)
        test = load_cifar_bin(d.test_files, dtype)
    else:
        raise ConfigError(f"unknown data format {d.format!r}")
    train = train.subset(d.limit_train)
    test = test.subset(d.limit_test)
    if d.mean_subtract:
        train, test = subtract_mean(train, test)
    return train, test


def topk_errors(logits: np.ndarray, labels: np.ndarray, ks=(1, 5)) -> dict[int, float]:
    order = np.argsort(-logits, axis=1, kind="stable")
    out = {}
    for k in ks:
        hit = (order[:, :min(k, logits.shape[1])] == labels[:, None]).any(axis=1)
        out[k] = float(1.0 - hit.mean())
    return out


def evaluate(graph: NetworkGraph, data: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """(top-1 error, top-5 error) of the primary head."""
    errs = topk_errors(predict(graph, data.images, batch_size), data.labels)
    return errs[1], errs[5]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def train(cfg: RunConfig, out_dir=None, datasets: tuple[Dataset, Dataset] | None = None,
          mode: str | None = None) -> TrainResult:
    """Run one training job. ``mode`` overrides ``cfg.mode`` (used by compare)."""
    mode = mode or cfg.mode
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_set, test_set = datasets if datasets is not None else load_datasets(cfg)

    graph = cfg.build_graph()
    spec = cfg.routing_spec(graph, mode)
    validate_routing(spec, graph)

    sampler = make_sampler(cfg.sampler, train_set.labels, cfg.seed, graph.num_classes)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    opt = SgdState(cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay)
    s = cfg.schedule
    sched = LrSchedule(s.kind, s.drop_factor, s.patience, s.min_delta, list(s.milestones))

    iters_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = cfg.iterations if cfg.iterations is not None else cfg.epochs * iters_per_epoch
    eval_every = cfg.eval_every or iters_per_epoch
    head_ids = [h.head_id for h in graph.heads]

    metrics: list[tuple] = []
    loss_sums = {h: 0.0 for h in head_ids}
    loss_count = 0
    stat_rows: list[telemetry.GradStatRow] = []
    top1 = top5 = float("nan")

    for it in range(1, total + 1):
        idx = sampler.next_batch(cfg.batch_size)
        x = train_set.images[idx]
        if cfg.augment.hflip or cfg.augment.crop_pad:
            x = augment(x, aug_rng, cfg.augment.hflip, cfg.augment.crop_pad)
        trace = forward(graph, x, train_set.labels[idx], "train")
        for h, loss in trace.losses.items():
            if not math.isfinite(loss):
                raise NumericError(it, f"non-finite loss {loss} on head {h}")
            loss_sums[h] += loss
        loss_count += 1
        grads = backward(graph, trace, mode, spec)
        if cfg.telemetry_stride and it % cfg.telemetry_stride == 0:
            try:
                stat_rows.extend(telemetry.record_grad_stats(grads, graph, it))
            except telemetry.TelemetryError as exc:
                raise NumericError(it, str(exc)) from None
        sgd_step(graph.params, grads, opt)
        schedule_step(sched, None, opt, it)

        if it % eval_every == 0 or it == total:
            top1, top5 = evaluate(graph, test_set)
            for h in head_ids:
                metrics.append((it, mode, h, loss_sums[h] / loss_count, top1, top5, opt.lr))
            log.info("iter %d mode %s loss %s top1 %.4f lr %g", it, mode,
                     {h: round(loss_sums[h] / loss_count, 4) for h in head_ids}, top1, opt.lr)
            loss_sums = {h: 0.0 for h in head_ids}
            loss_count = 0
            if sched.kind == "plateau":
                schedule_step(sched, top1, opt)

    ckpt = metrics_path = stats_path = None
    if out is not None:
        ckpt = out / cfg.checkpoint
        save_checkpoint(graph.params, ckpt)
        metrics_path = out / "metrics.csv"
        write_metrics_csv(metrics, metrics_path)
        if stat_rows:
            stats_path = out / "grad_stats.csv"
            telemetry.write_stats_csv(stat_rows, stats_path)
    return TrainResult(graph, metrics, top1, top5, ckpt, metrics_path, stats_path, total)


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for it, mode, head, loss, top1, top5, lr in rows:
            w.writerow([it, mode, head, _fmt(loss), _fmt(top1), _fmt(top5), _fmt(lr)])


def eval_checkpoint(cfg: RunConfig, checkpoint, test_set: Dataset | None = None) -> tuple[float, float]:
    """Load ``checkpoint`` into the configured trunk + primary head and evaluate it."""
    if test_set is None:
        test_set = load_datasets(cfg)[1]
    graph = strip_aux_heads(cfg.build_graph())
    load_into(graph, checkpoint)
    return evaluate(graph, test_set)


COMPARE_HEADER = ("mode", "top1_err", "top5_err", "top1_delta", "top5_delta")
COMPARE_MODES = ("standard", "multiloss_standard", "relay")
_LABELS = {"standard": "standard BP", "multiloss_standard": "multi-loss + standard BP", "relay": "Relay BP"}


def compare_rows(errors: dict[str, tuple[float, float]]) -> list[tuple]:
    """Rows of (mode, top1 %, top5 %, top1 delta, top5 delta); deltas are
    improvements over standard, computed from the rounded percentages."""
    pct = {m: (round(100 * e1, 2), round(100 * e5, 2)) for m, (e1, e5) in errors.items()}
    base1, base5 = pct["standard"]
    rows = []
    for m in COMPARE_MODES:
        t1, t5 = pct[m]
        rows.append((m, t1, t5, round(base1 - t1, 2), round(base5 - t5, 2)))
    return rows


def format_compare_table(rows) -> str:
    lines = [f"{'method':<26}{'top-1 err.':>16}{'top-5 err.':>16}"]
    for m, t1, t5, d1, d5 in rows:
        lines.append(f"{_LABELS[m]:<26}{f'{t1:.2f} ({d1:.2f})':>16}{f'{t5:.2f} ({d5:.2f})':>16}")
    return "\n".join(lines)


def write_compare_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for m, t1, t5, d1, d5 in rows:
            w.writerow([m, f"{t1:.2f}", f"{t5:.2f}", f"{d1:.2f}", f"{d5:.2f}"])


def compare(cfg: RunConfig, out_dir, datasets=None) -> list[tuple]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets = datasets if datasets is not None else load_datasets(cfg)
    errors = {}
    for m in COMPARE_MODES:
        res = train(cfg, out / m, datasets, mode=m)
        errors[m] = (res.top1_err, res.top5_err)
    rows = compare_rows(errors)
    write_compare_csv(rows, out / "compare.csv")
    (out / "compare.txt").write_text(format_compare_table(rows) + "\n", encoding="utf-8")
    return rows
