"""Server-side combination of client updates and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AggregationError, EvaluationError, ProtocolError
from .model import ParameterVector


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    params: ParameterVector
    num_examples: int
    train_loss: float

    def __post_init__(self):
        if self.num_examples < 1:
            raise ProtocolError("client update must cover at least one example")


@dataclass(frozen=True)
class EvalResult:
    client_id: str
    num_examples: int
    loss: float
    accuracy: float

    def __post_init__(self):
        if self.num_examples < 1:
            raise EvaluationError("evaluation must cover at least one example")
        if not 0.0 <= self.accuracy <= 1.0:
            raise EvaluationError("accuracy must lie in [0, 1]")


def fed_avg(updates: Sequence[ClientUpdate]) -> ParameterVector:
    """Example-count-weighted mean of client parameter vectors.

    Spans and freeze mask are taken from the first update; all updates must
    agree on length (the protocol guarantees identical layouts).

    Computed as base + sum(n_k * (w_k - base)) / sum(n_k) in extended
    precision: coordinates on which all updates agree (frozen layers, or k
    copies of one update) pass through bit-exactly, and the rounding error
    against an exact weighted mean stays far below 1e-12.
    """
    if len(updates) == 0:
        raise AggregationError("fed_avg requires at least one update")
    first = updates[0].params
    length = len(first)
    for u in updates:
        if len(u.params) != length:
            raise ProtocolError(
                f"update from {u.client_id} has {len(u.params)} values, expected {length}"
            )
    base = first.values
    total = float(sum(u.num_examples for u in updates))
    acc = np.zeros(length, dtype=np.longdouble)
    for u in updates:
        delta = u.params.values.astype(np.longdouble) - base.astype(np.longdouble)
        acc += u.num_examples * delta
    merged = base + (acc / total).astype(np.float64)
    return first.with_values(merged)


def weighted_metrics(results: Sequence[EvalResult]) -> tuple[float, float]:
    """Example-count-weighted mean loss and accuracy."""
    if len(results) == 0:
        raise EvaluationError("weighted_metrics requires at least one result")
    n = np.array([r.num_examples for r in results], dtype=np.float64)
    total = n.sum()
    loss = float(np.dot(n, [r.loss for r in results]) / total)
    accuracy = float(np.dot(n, [r.accuracy for r in results]) / total)
    return loss, accuracy
