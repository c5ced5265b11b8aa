"""Ensemble aggregation over base classifiers.

Four aggregation modes over member logits, plus an optional consensus
shortcut: members are ranked by their position in the member list, and
when the first K argmax predictions agree the soft vote of those K is
returned without evaluating the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifiers import BaseClassifier

__all__ = ["AGGREGATION_MODES", "AggregationOutcome", "EnsembleClassifier", "aggregate"]

AGGREGATION_MODES = ("soft", "hard", "softmax_soft", "weighted_soft")


@dataclass(frozen=True)
class AggregationOutcome:
    """Aggregated logits plus the evaluation cost that produced them."""

    logits: np.ndarray
    models_evaluated: int
    consensus_hit: bool


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class EnsembleClassifier(BaseClassifier):
    """Aggregates member classifiers into a single logit vector.

    Modes:
      soft          mean of member logits
      hard          mean of one-hot argmax votes (vote shares)
      softmax_soft  mean of member softmax distributions
      weighted_soft weighted sum of member logits
    With `consensus_k` = K set, members are evaluated in list order and the
    soft vote of the first K is returned whenever their argmaxes agree.
    """

    members: tuple
    mode: str = "soft"
    weights: np.ndarray | None = None
    consensus_k: int | None = None
    class_count: int = field(default=0, init=False)
    dim: int = field(default=0, init=False)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        m = members[0].class_count
        d = members[0].dim
        for member in members:
            if member.class_count != m or member.dim != d:
                raise ValueError("members must share class_count and dim")
        if self.mode not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation mode: {self.mode!r}")
        weights = self.weights
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != (len(members),):
                raise ValueError("weights must have one entry per member")
            if not np.isfinite(weights).all() or (weights < 0).any():
                raise ValueError("weights must be finite and nonnegative")
            if abs(float(weights.sum()) - 1.0) > 1e-9:
                raise ValueError("weights must sum to 1")
        elif self.mode == "weighted_soft":
            weights = np.full(len(members), 1.0 / len(members))
        if self.consensus_k is not None and not 1 <= self.consensus_k <= len(members):
            raise ValueError("consensus_k must lie in [1, member count]")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "class_count", m)
        object.__setattr__(self, "dim", d)

    def member_count(self) -> int:
        return len(self.members)

    def _combine(self, member_logits: np.ndarray) -> np.ndarray:
        # member_logits: (k, b, m); summation runs in member index order.
        if self.mode == "soft":
            return member_logits.mean(axis=0)
        if self.mode == "hard":
            k, b, m = member_logits.shape
            votes = np.zeros((b, m))
            picks = member_logits.argmax(axis=2)  # lowest index wins ties
            for j in range(k):
                votes[np.arange(b), picks[j]] += 1.0
            return votes / k
        if self.mode == "softmax_soft":
            return _softmax(member_logits).mean(axis=0)
        return np.tensordot(self.weights, member_logits, axes=(0, 0))

    def aggregate_batch(self, xs: np.ndarray):
        """Aggregated logits (b, m) plus model evaluations and consensus hits."""
        xs = np.asarray(xs, dtype=np.float64)
        b = len(xs)
        k = len(self.members)
        kc = self.consensus_k
        if kc is None or kc >= k:
            logits = np.stack([member.evaluate_batch(xs) for member in self.members])
            return self._combine(logits), k * b, 0
        head = np.stack([self.members[j].evaluate_batch(xs) for j in range(kc)])
        picks = head.argmax(axis=2)  # (kc, b)
        agree = (picks == picks[0]).all(axis=0)
        out = np.empty((b, self.class_count))
        out[agree] = head[:, agree, :].mean(axis=0)
        hits = int(agree.sum())
        evaluations = kc * b
        rest = ~agree
        if rest.any():
            xs_rest = xs[rest]
            tail = np.stack([self.members[j].evaluate_batch(xs_rest) for j in range(kc, k)])
            full = np.concatenate([head[:, rest, :], tail], axis=0)
            out[rest] = self._combine(full)
            evaluations += (k - kc) * int(rest.sum())
        return out, evaluations, hits

    def aggregate(self, x: np.ndarray) -> AggregationOutcome:
        """Aggregate a single input."""
        logits, evaluations, hits = self.aggregate_batch(np.asarray(x)[None, :])
        return AggregationOutcome(
            logits=logits[0], models_evaluated=evaluations, consensus_hit=bool(hits)
        )

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.aggregate(x).logits

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        return self.aggregate_batch(xs)[0]

    def evaluate_batch_counted(self, xs: np.ndarray):
        return self.aggregate_batch(xs)


def aggregate(ensemble: EnsembleClassifier, x: np.ndarray) -> AggregationOutcome:
    """Function-style alias for EnsembleClassifier.aggregate."""
    return ensemble.aggregate(x)
