"""Training loop, evaluation metrics and variant comparison."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..anchors import NonFiniteSaliencyError, budget
from ..autodiff import Adam, NonFiniteGradientError, cosine_lr, no_grad, precision
from .config import ConfigError, TrainConfig
from .model import Model
from .synth import Dataset

log = logging.getLogger(__name__)

THREADS_ENV = "DYWAVE_THREADS"


class TrainingDiverged(FloatingPointError):
    """A loss or gradient went non-finite; carries where it happened."""

    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"non-finite {detail} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


def worker_threads() -> int:
    """Parallelism cap from DYWAVE_THREADS (default: CPU count)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV}: expected a positive integer, got {raw!r}")
    return n


@contextmanager
def thread_limit(n: int | None = None) -> Iterator[int]:
    """Cap BLAS/OpenMP pools; n=1 is the strict single-threaded mode."""
    n = worker_threads() if n is None else n
    with threadpool_limits(limits=n):
        yield n


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def macro_f1(y_true, y_pred, classes: int) -> float:
    """Unweighted class mean of per-class F1; a class absent from both
    labels and predictions scores 0, like a missed class."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    scores = []
    for c in range(classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class TokenStats:
    mean: float
    median: float
    max: int
    budget: int | None

    @classmethod
    def of(cls, counts, cap: int | None) -> "TokenStats":
        counts = np.asarray(counts)
        return cls(float(counts.mean()), float(np.median(counts)), int(counts.max()), cap)


@dataclass
class Metrics:
    variant: str
    accuracy: float
    macro_f1: float
    tokens: TokenStats
    curves: dict[str, list[float]] = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_dict(self, with_timing: bool = True) -> dict:
        """JSON form. Without timing the document is a pure function of
        config and seeds, so seeded reruns compare byte-for-byte."""
        out = {
            "variant": self.variant,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "tokens": vars(self.tokens).copy(),
            "curves": {k: list(v) for k, v in self.curves.items()},
        }
        if with_timing:
            out["wall_clock"] = self.wall_clock
        return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    curves: dict[str, list[float]]
    wall_clock: float


def _batches(n: int, size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i : i + size] for i in range(0, n, size)]


def train(
    cfg: TrainConfig,
    data: Dataset,
    model: Model | None = None,
    on_epoch: Callable[[int, dict[str, float]], None] | None = None,
) -> TrainResult:
    """Minimise task + lambda * reconstruction loss with Adam and a per-epoch
    cosine schedule. The no_recon variant still reports the reconstruction
    loss but leaves it out of the gradient."""
    cfg.validate()
    if len(data) == 0:
        raise ValueError("training set is empty")
    start = time.perf_counter()
    model = Model(cfg, data.channels, data.classes) if model is None else model
    if model.channels != data.channels or model.classes != data.classes:
        raise ValueError(
            f"model expects {model.channels} channels / {model.classes} classes, "
            f"data has {data.channels} / {data.classes}"
        )
    planes = model.planes(data.x) if cfg.uses_anchors else None
    params = model.parameters()
    opt = Adam(params, cfg.lr_max)
    rng = np.random.default_rng([cfg.seed, 100])
    weight = cfg.effective_lambda
    names = ("loss", "task_loss", "rec_loss", "accuracy", "mean_tokens", "lr")
    curves: dict[str, list[float]] = {k: [] for k in names}

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
        opt.set_lr(lr)
        sums = dict.fromkeys(("loss", "task_loss", "rec_loss", "correct", "tokens"), 0.0)
        for b, idx in enumerate(_batches(len(data), cfg.batch_size, rng)):
            pb = planes[idx] if planes is not None else None
            try:
                out = model(data.x[idx], pb, data.y[idx])
            except NonFiniteSaliencyError:
                raise TrainingDiverged(epoch, b, "saliency") from None
            with precision(cfg.precision):
                loss = out.task if out.rec is None or weight == 0 else out.task + out.rec * weight
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, b, f"loss ({value})")
            opt.zero_grad()
            loss.backward()
            try:
                opt.step()
            except NonFiniteGradientError:
                raise TrainingDiverged(epoch, b, "gradient") from None
            n = len(idx)
            sums["loss"] += value * n
            sums["task_loss"] += out.task.item() * n
            sums["rec_loss"] += (out.rec.item() if out.rec is not None else 0.0) * n
            sums["correct"] += float(np.sum(out.logits.data.argmax(axis=1) == data.y[idx]))
            sums["tokens"] += float(out.batch.counts.sum())
        total = len(data)
        row = {
            "loss": sums["loss"] / total,
            "task_loss": sums["task_loss"] / total,
            "rec_loss": sums["rec_loss"] / total,
            "accuracy": sums["correct"] / total,
            "mean_tokens": sums["tokens"] / total,
            "lr": lr,
        }
        for k in names:
            curves[k].append(float(row[k]))
        log.info("epoch %d/%d loss %.4f acc %.3f tokens %.1f", epoch + 1, cfg.epochs, row["loss"], row["accuracy"], row["mean_tokens"])
        if on_epoch is not None:
            on_epoch(epoch, row)
    return TrainResult(model, curves, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class Predictions:
    labels: np.ndarray
    counts: np.ndarray
    anchors: list[np.ndarray]


def predict(model: Model, x: np.ndarray, batch_size: int | None = None, tau: float | None = None) -> Predictions:
    """Deterministic batched inference; no graph is recorded."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != model.channels:
        raise ValueError(f"expected signals of shape (N, {model.channels}, L), got {x.shape}")
    size = batch_size or model.cfg.batch_size
    labels, counts, anchors = [], [], []
    with no_grad(), precision(model.cfg.precision):
        for idx in _batches(len(x), size, None):
            batch = model.tokenize(x[idx], tau=tau)
            logits = model.backbone(batch.tokens, batch.mask)
            labels.append(logits.data.argmax(axis=1))
            counts.append(batch.counts)
            anchors.extend(batch.anchors)
    return Predictions(np.concatenate(labels), np.concatenate(counts), anchors)


def evaluate(model: Model, data: Dataset, curves: dict[str, list[float]] | None = None) -> Metrics:
    start = time.perf_counter()
    if data.channels != model.channels or data.classes != model.classes:
        raise ValueError(
            f"checkpoint expects {model.channels} channels / {model.classes} classes, "
            f"data has {data.channels} / {data.classes}"
        )
    if len(data) == 0:
        raise ValueError("evaluation set is empty")
    pred = predict(model, data.x)
    cfg = model.cfg
    cap = budget(cfg.tau, data.length) if cfg.uses_anchors else None
    return Metrics(
        variant=cfg.variant,
        accuracy=float(np.mean(pred.labels == data.y)),
        macro_f1=macro_f1(data.y, pred.labels, data.classes),
        tokens=TokenStats.of(pred.counts, cap),
        curves=dict(curves or {}),
        wall_clock=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

@dataclass
class Comparison:
    rows: list[dict]
    metrics: list[Metrics]
    states: list[dict[str, np.ndarray]] = field(default_factory=list)

    def to_dict(self, with_timing: bool = True) -> dict:
        rows = [dict(r) for r in self.rows]
        if not with_timing:
            for r in rows:
                r.pop("wall_clock")
        return {"rows": rows}

    def table(self) -> str:
        head = ("variant", "accuracy", "macro_f1", "mean_tokens", "wall_clock")
        cells = [head] + [
            (r["variant"], f"{r['accuracy']:.4f}", f"{r['macro_f1']:.4f}", f"{r['mean_tokens']:.2f}", f"{r['wall_clock']:.1f}s")
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in cells) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def run_variant(cfg: TrainConfig, train_data: Dataset, test_data: Dataset) -> tuple[Metrics, dict[str, np.ndarray]]:
    start = time.perf_counter()
    result = train(cfg, train_data)
    metrics = evaluate(result.model, test_data, result.curves)
    metrics.wall_clock = time.perf_counter() - start
    return metrics, result.model.state_dict()


def _isolated(args) -> tuple[Metrics, dict[str, np.ndarray]]:
    cfg, train_data, test_data = args
    with thread_limit(1):
        return run_variant(cfg, train_data, test_data)


def compare(configs: Sequence[TrainConfig], train_data: Dataset, test_data: Dataset) -> Comparison:
    """Train and evaluate every config on the same data. With DYWAVE_THREADS
    above 1 the variants run in separate processes."""
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    for cfg in configs:
        cfg.validate()
    workers = min(worker_threads(), len(configs))
    jobs = [(cfg, train_data, test_data) for cfg in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_isolated, jobs))
    else:
        results = [run_variant(*job) for job in jobs]
    metrics = [m for m, _ in results]
    rows = [
        {
            "variant": m.variant,
            "accuracy": m.accuracy,
            "macro_f1": m.macro_f1,
            "mean_tokens": m.tokens.mean,
            "wall_clock": m.wall_clock,
        }
        for m in metrics
    ]
    return Comparison(rows, metrics, [state for _, state in results])
