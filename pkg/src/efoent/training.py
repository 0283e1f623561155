"""Mini-batch training of the query encoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .metrics import EvalReport, mrr_evaluate
from .model import TegaModel
from .templates import QUERY_TYPES


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    warmup: int = 1000
    label_smoothing: float = 0.1
    batch_size: int = 1024
    max_steps: int = 10000
    seed: int = 0
    precision: str = "float32"
    eval_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        for name in ("base_lr", "batch_size", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.warmup < 0 or self.eval_every < 0:
            raise ValueError("warmup and eval_every must be non-negative")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        base = dict(base_lr=1e-3, warmup=100, batch_size=64, max_steps=2000)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    validation: list[tuple[int, dict]] = field(default_factory=list)

    def log_text(self) -> str:
        lines = ["step\tloss\tlr"]
        lines += [f"{i + 1}\t{loss:.6f}\t{lr:.6g}" for i, (loss, lr) in enumerate(zip(self.losses, self.lrs))]
        return "\n".join(lines) + "\n"


def train(
    model: TegaModel,
    samples: Sequence,
    config: TrainConfig,
    valid: Sequence | None = None,
    log_path=None,
    checkpoint_path=None,
    progress=None,
) -> TrainResult:
    """Fit ``model`` to the ``a_id`` answers of ``samples``.

    Batches are drawn from a seeded reshuffle of the data each epoch. When
    ``eval_every`` is set and ``valid`` is given, validation MRR is computed
    at that interval and kept in the result.
    """
    samples = [s for s in samples if s.a_id]
    if not samples:
        raise TrainingError("training set is empty")
    unseen = sorted({s.type_name for s in samples if not QUERY_TYPES[s.type_name].seen})
    if unseen:
        raise TrainingError(f"training data contains unseen query types: {', '.join(unseen)}")
    dtype = np.dtype(config.precision)
    if model.dtype != dtype:
        for t in model.params.values():
            t.data = t.data.astype(dtype)
        model.dtype = dtype
        model.config.dtype = config.precision
        model._pe = model._pe.astype(dtype)

    encoded = model.encode_queries([s.query for s in samples])
    targets = [s.a_id for s in samples]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    model.dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    opt = ad.Adam(model.trainable(), lr=config.base_lr, warmup=config.warmup)
    result = TrainResult()
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    if log:
        log.write("step\tloss\tlr\n")
    order = rng.permutation(len(samples))
    cursor = 0
    try:
        for step in range(1, config.max_steps + 1):
            if cursor + config.batch_size > len(order) and cursor > 0:
                order = rng.permutation(len(samples))
                cursor = 0
            idx = order[cursor:cursor + config.batch_size]
            cursor += len(idx)
            batch = model.collate([encoded[i] for i in idx])
            opt.zero_grad()
            with ad.Tape() as tape:
                logits = model.forward(batch, training=True)
                loss = ad.label_smoothed_cross_entropy(logits, [targets[i] for i in idx], config.label_smoothing)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"loss became {value} at step {step}")
            tape.backward(loss)
            lr = opt.step()
            result.losses.append(value)
            result.lrs.append(lr)
            if log:
                log.write(f"{step}\t{value:.6f}\t{lr:.6g}\n")
            if config.eval_every and valid and step % config.eval_every == 0:
                report = mrr_evaluate(model, valid, name=f"step{step}")
                result.validation.append((step, report.cells))
            if progress is not None:
                progress(step, value)
    finally:
        if log:
            log.close()
    if checkpoint_path:
        model.save(checkpoint_path, {"train": config.to_dict(), "steps": config.max_steps})
    return result


def evaluate(model: TegaModel, samples: Sequence, name: str = "model") -> EvalReport:
    report = mrr_evaluate(model, samples, name=name)
    report.meta["model"] = {"pe_kind": model.config.pe_kind, "pooling": model.config.pooling,
                            "adjacency_mask": model.config.use_adjacency_mask}
    return report


def write_report(report: EvalReport, path) -> None:
    Path(path).write_text(report.dumps(), encoding="utf-8")
