"""Sensitivity ranking and column remapping (static and dynamic)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .inference import InferenceMode, MappedNetwork, forward_fn
from .mapping import check_permutation
from .nn import LabeledDataset, Network, backward, evaluate_accuracy, forward

SENSITIVITY_CHUNK = 256


@dataclass
class SensitivityScores:
    """Accumulated |dLoss/dz| per logical column, one vector per layer."""

    layers: list[np.ndarray]
    n_samples: int

    def __add__(self, other: "SensitivityScores") -> "SensitivityScores":
        return SensitivityScores([a + b for a, b in zip(self.layers, other.layers)],
                                 self.n_samples + other.n_samples)


def accumulate_sensitivity(net: Network, x, y) -> SensitivityScores:
    """Per-sample output gradients, summed in magnitude.

    Conv layers average over the cells of each output map before summing
    over samples.
    """
    x = np.asarray(x, dtype=float)
    y = np.atleast_1d(np.asarray(y))
    if len(y) == 0:
        raise ContractError("need at least one sample")
    totals = [np.zeros(s.n_out) for s in net.specs]
    for start in range(0, len(y), SENSITIVITY_CHUNK):
        sl = slice(start, start + SENSITIVITY_CHUNK)
        grads = backward(net, forward(net, x[sl]), y[sl])
        for k, delta in enumerate(grads.outputs):
            per_sample = np.abs(delta).mean(axis=1)  # (N, n_out)
            totals[k] += per_sample.sum(axis=0)
    return SensitivityScores(totals, len(y))


@dataclass
class RankAssignment:
    """``perms[k][j]``: physical column given to logical column j of layer k."""

    perms: list[np.ndarray]
    provenance: str = "naive"
    val_accuracy: float | None = None

    def __post_init__(self):
        self.perms = [check_permutation(p, len(p)) for p in self.perms]

    @classmethod
    def identity(cls, net: Network) -> "RankAssignment":
        return cls([np.arange(s.n_out) for s in net.specs], "naive")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"provenance": self.provenance, "val_accuracy": self.val_accuracy,
                       "layers": [{"layer": k, "pairs": [[int(j), int(p)] for j, p in enumerate(perm)]}
                                  for k, perm in enumerate(self.perms)]}, fh, indent=1)

    @classmethod
    def load(cls, path) -> "RankAssignment":
        with open(path) as fh:
            data = json.load(fh)
        perms = []
        for entry in sorted(data["layers"], key=lambda e: e["layer"]):
            pairs = sorted(entry["pairs"])
            perms.append(np.array([p for _, p in pairs], dtype=np.int64))
        return cls(perms, data["provenance"], data["val_accuracy"])


def evaluate_rank(scores: SensitivityScores, provenance: str = "rank") -> RankAssignment:
    """Most sensitive column goes to physical column 0; ties keep index order."""
    perms = []
    for s in scores.layers:
        s = np.asarray(s, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ContractError("sensitivity scores must be finite")
        order = np.argsort(-s, kind="stable")  # position -> logical
        perm = np.empty_like(order)
        perm[order] = np.arange(order.size)
        perms.append(perm)
    return RankAssignment(perms, provenance)


def srs(net: Network, train: LabeledDataset) -> RankAssignment:
    """One pass over the whole training split, then a single ranking."""
    return evaluate_rank(accumulate_sensitivity(net, train.x, train.y), "srs")


@dataclass
class DrsStep:
    iteration: int
    val_accuracy: float
    writes: int


@dataclass
class DrsResult:
    best: RankAssignment
    trace: list[DrsStep] = field(default_factory=list)
    candidates: list[RankAssignment] = field(default_factory=list, repr=False)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "val_accuracy", "writes"])
            for step in self.trace:
                writer.writerow([step.iteration, repr(step.val_accuracy), step.writes])


def drs(net: Network, train: LabeledDataset, val: LabeledDataset, batch_size: int,
        mapped: MappedNetwork, mode: InferenceMode, keep_candidates: bool = False) -> DrsResult:
    """Mini-batch ranking with validation-selected best assignment.

    Each mini-batch of ``train`` (in order) yields a fresh ranking; the
    crossbars are remapped to it and scored on ``val`` under ``mode``. The
    ranking with the highest validation accuracy wins (first one on ties).
    """
    if batch_size < 1:
        raise ContractError("batch size must be >= 1")
    if len(val) == 0:
        raise ContractError("validation split is empty")
    current = mapped
    best, best_acc = None, 0.0
    result = DrsResult(None)
    for it, start in enumerate(range(0, len(train), batch_size)):
        sl = slice(start, start + batch_size)
        rank = evaluate_rank(accumulate_sensitivity(net, train.x[sl], train.y[sl]), f"drs:{it}")
        current = current.with_assignment(rank.perms)
        acc = evaluate_accuracy(net, val, forward_fn(current, mode))
        rank.val_accuracy = acc
        result.trace.append(DrsStep(it, acc, current.writes))
        if keep_candidates:
            result.candidates.append(rank)
        if best is None or acc > best_acc:
            best, best_acc = rank, acc
    result.best = best
    return result
