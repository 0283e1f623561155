"""Loss, optimizer and checkpoint container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Tensor, _emit


class TargetError(ValueError):
    pass


def smoothed_targets(targets: Sequence[Sequence[int]], n_classes: int, eps: float, dtype=np.float64) -> np.ndarray:
    """``(1 - eps)`` spread evenly over each answer set plus ``eps / n_classes`` everywhere."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {eps}")
    q = np.full((len(targets), n_classes), eps / n_classes, dtype=dtype)
    for b, answers in enumerate(targets):
        answers = np.unique(np.asarray(answers, dtype=np.int64))
        if answers.size == 0:
            raise TargetError(f"row {b} has an empty answer set")
        q[b, answers] += (1.0 - eps) / answers.size
    return q


def label_smoothed_cross_entropy(logits: Tensor, targets: Sequence[Sequence[int]], eps: float = 0.1) -> Tensor:
    """Mean cross-entropy of ``logits [batch, classes]`` against smoothed answer sets."""
    batch, n = logits.shape
    if len(targets) != batch:
        raise TargetError(f"{len(targets)} target sets for a batch of {batch}")
    q = smoothed_targets(targets, n, eps, logits.dtype)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(q * logp).sum() / batch
    p = np.exp(logp)
    return _emit(np.asarray(loss, dtype=logits.dtype), (logits,), lambda g: (g * (p - q) / batch,))


# ------------------------------------------------------------------ adam ---


@dataclass
class Adam:
    """Adam with a linear learning-rate warmup and a constant rate afterwards."""

    params: Sequence[Tensor]
    lr: float = 1e-4
    warmup: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def effective_lr(self, step: int | None = None) -> float:
        step = self.step_count if step is None else step
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, step / self.warmup)

    def step(self) -> float:
        """Apply one update from the parameters' ``grad``; returns the rate used."""
        self.step_count += 1
        t = self.step_count
        lr = self.effective_lr(t)
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None or not p.requires_grad:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ------------------------------------------------------------ checkpoint ---

MAGIC = b"EFOCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    """Write named arrays as: magic, version, manifest length, JSON manifest, raw little-endian data."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str.lstrip("<>=|"), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": FORMAT_VERSION, "meta": dict(meta or {}), "tensors": entries},
                          sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    manifest = json.loads(data[start:start + mlen])
    base = start + mlen
    out = {}
    for e in manifest["tensors"]:
        dt = np.dtype("<" + e["dtype"]) if e["dtype"][0] in "fiuc" else np.dtype(e["dtype"])
        chunk = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        out[e["name"]] = np.frombuffer(chunk, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
    return out, manifest["meta"]
