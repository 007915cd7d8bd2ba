"""Per-task episodic memory and constraint-matrix construction.

Buffers keep a label-balanced sample of each task's training stream and
are the source of the averaged past-task gradients stacked into the
constraint matrix G.  Eviction is deterministic: within a task the
oldest entry of the most populous label goes first, and when the total
budget is exceeded the largest task sheds entries the same way.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .adapter_model import TinyMlp, backward
from .projector import ConstraintMatrix

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY_PER_TASK = 100
DEFAULT_TOTAL_CAP = 150


@dataclass
class ReplayBuffer:
    """Label-balanced episodic memory, one sub-buffer per task."""

    capacity_per_task: int = DEFAULT_CAPACITY_PER_TASK
    total_cap: int = DEFAULT_TOTAL_CAP
    per_task: dict[int, list[tuple[np.ndarray, int]]] = field(default_factory=dict)

    def tasks(self) -> list[int]:
        return sorted(t for t, items in self.per_task.items() if items)

    def size(self, task: int) -> int:
        return len(self.per_task.get(task, []))

    def total_size(self) -> int:
        return sum(len(v) for v in self.per_task.values())

    def label_counts(self, task: int) -> Counter:
        return Counter(y for _, y in self.per_task.get(task, []))

    def examples(self, task: int) -> tuple[np.ndarray, np.ndarray]:
        items = self.per_task.get(task, [])
        if not items:
            raise ValueError(f"replay buffer for task {task} is empty")
        X = np.stack([x for x, _ in items])
        y = np.array([y for _, y in items], dtype=np.int64)
        return X, y

    def _evict_one(self, task: int):
        """Drop the oldest entry of the most populous label (ties: lowest label)."""
        items = self.per_task[task]
        counts = Counter(y for _, y in items)
        top = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
        for i, (_, y) in enumerate(items):
            if y == top:
                del items[i]
                return

    def _largest_task(self) -> int:
        return max(self.per_task, key=lambda t: (len(self.per_task[t]), -t))

    def to_dict(self) -> dict:
        """JSON-able snapshot of the stored examples (reproducibility audits)."""
        return {
            "capacity_per_task": self.capacity_per_task,
            "total_cap": self.total_cap,
            "per_task": {
                str(t): [{"x": [float(v) for v in x], "y": y} for x, y in items]
                for t, items in sorted(self.per_task.items())
            },
        }

    def insert(self, task: int, X, y):
        """Insert labeled examples in arrival order, keeping per-label counts
        within each task balanced to +/- 1 and enforcing both capacities."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim == 1:
            X = X[None, :]
            y = np.atleast_1d(y)
        if np.any(y < 0):
            raise ValueError("labels must be nonnegative class indices")
        items = self.per_task.setdefault(task, [])
        for xi, yi in zip(X, y):
            items.append((xi.copy(), int(yi)))
            if len(items) > self.capacity_per_task:
                self._evict_one(task)
            while self.total_size() > self.total_cap:
                self._evict_one(self._largest_task())
        return self


def task_gradient(buffer: ReplayBuffer, task: int, model: TinyMlp) -> np.ndarray:
    """Mean adapter gradient over the task's full buffer at the current phi."""
    X, y = buffer.examples(task)
    _, g = backward(model, X, y)
    return g


def build_constraint_matrix(
    buffer: ReplayBuffer,
    model: TinyMlp,
    tasks: list[int],
    normalize: bool = True,
) -> ConstraintMatrix:
    """Stack one averaged-gradient row per past task (current phi).

    Rows are unit-normalized by default; zero-norm rows are dropped with
    a logged warning either way.
    """
    from .adapter_model import adapter_dim

    if not tasks:
        return ConstraintMatrix.empty(adapter_dim(model))
    rows = [task_gradient(buffer, t, model) for t in tasks]
    return ConstraintMatrix.from_rows(np.stack(rows), normalize=normalize)
