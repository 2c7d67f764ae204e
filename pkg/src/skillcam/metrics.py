"""Micro/macro classification measures and multi-run aggregation.

Micro is pooled accuracy (confusion-matrix trace over total). Macro is the
unweighted mean of per-class recall; classes absent from the scored set are
skipped with a warning. Both definitions are isolated here so a different
benchmark convention can be swapped in without touching callers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .data import Skill
from .errors import DomainError
from .training import PredictionRow

log = logging.getLogger(__name__)

N_CLASSES = 3


@dataclass
class ConfusionMatrix:
    """3x3 integer counts; rows are true classes, columns predictions."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (N_CLASSES, N_CLASSES):
            raise DomainError(
                f"confusion matrix must be {N_CLASSES}x{N_CLASSES}, "
                f"got {self.counts.shape}"
            )
        if (self.counts < 0).any():
            raise DomainError("confusion matrix entries must be >= 0")

    @classmethod
    def from_pairs(cls, true_labels, predicted_labels) -> "ConfusionMatrix":
        counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
        for t, p in zip(true_labels, predicted_labels, strict=True):
            counts[int(t), int(p)] += 1
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def micro_accuracy(cm: ConfusionMatrix) -> float:
    """Pooled accuracy: trace / total."""
    if cm.total == 0:
        raise DomainError("cannot score an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def macro_measure(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class recall, skipping absent classes."""
    if cm.total == 0:
        raise DomainError("cannot score an empty confusion matrix")
    recalls = []
    for c in range(N_CLASSES):
        row_sum = int(cm.counts[c].sum())
        if row_sum == 0:
            log.warning(
                "class %s absent from scored trials; skipped in macro measure",
                Skill(c).letter,
            )
            continue
        recalls.append(cm.counts[c, c] / row_sum)
    if not recalls:
        raise DomainError("no class has any scored trials")
    return float(np.mean(recalls))


@dataclass
class TaskSummary:
    task: str
    n_runs: int
    micro_mean: float
    micro_std: float
    macro_mean: float
    macro_std: float


def confusion_from_rows(rows: list[PredictionRow]) -> ConfusionMatrix:
    letters = "NIE"
    return ConfusionMatrix.from_pairs(
        [letters.index(r.true) for r in rows],
        [letters.index(r.predicted) for r in rows],
    )


def aggregate_runs(rows: list[PredictionRow]) -> dict[str, TaskSummary]:
    """Per-task mean +/- stddev of micro/macro across runs (folds pooled).

    The standard deviation uses the population convention: the runs in the
    table are the entire population being reported.
    """
    if not rows:
        raise DomainError("prediction table is empty")
    by_task: dict[str, list[PredictionRow]] = {}
    for r in rows:
        by_task.setdefault(r.task, []).append(r)
    out = {}
    for task, task_rows in sorted(by_task.items()):
        runs = sorted({r.run for r in task_rows})
        micros, macros = [], []
        for run in runs:
            cm = confusion_from_rows([r for r in task_rows if r.run == run])
            micros.append(micro_accuracy(cm))
            macros.append(macro_measure(cm))
        out[task] = TaskSummary(
            task=task,
            n_runs=len(runs),
            micro_mean=float(np.mean(micros)),
            micro_std=float(np.std(micros)),
            macro_mean=float(np.mean(macros)),
            macro_std=float(np.std(macros)),
        )
    return out


def summary_tsv(summaries: dict[str, TaskSummary]) -> str:
    lines = ["task\tmicro\tmacro"]
    for task in sorted(summaries):
        s = summaries[task]
        lines.append(f"{task}\t{s.micro_mean:.4f}\t{s.macro_mean:.4f}")
    return "\n".join(lines) + "\n"


def summary_json(summaries: dict[str, TaskSummary]) -> str:
    return json.dumps(
        {
            task: {
                "runs": s.n_runs,
                "micro_mean": s.micro_mean,
                "micro_std": s.micro_std,
                "macro_mean": s.macro_mean,
                "macro_std": s.macro_std,
            }
            for task, s in sorted(summaries.items())
        }
    )
