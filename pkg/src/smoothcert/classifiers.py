"""Base classifiers and the deterministic Gaussian noise source.

The noise source is counter based: the perturbation for a given
(sample_id, stage_id, index) triple is a pure function of those ids and
the seed, independent of evaluation order, batching, or worker count.
Distinct stages of one certification therefore consume disjoint portions
of the stream by construction.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox

from .bounds import gaussian_quantile

__all__ = [
    "BaseClassifier",
    "LinearGaussianClassifier",
    "TabularClassifier",
    "NoiseSource",
    "counter_stream",
    "sample_perturbation",
    "standard_normals",
    "linear_true_success_prob",
    "load_classifier",
    "classifier_from_spec",
]

# Key-domain words separating independent stream families sharing one seed.
DOMAIN_NOISE = 0
DOMAIN_ORTHANT = 1
DOMAIN_SYNTH = 2

_INV_2_53 = 2.0**-53
_HALF_ULP = 2.0**-54


def counter_stream(seed: int, domain: int, word2: int, word3: int) -> Philox:
    """Philox stream keyed by (seed, domain) at counter block (0, 0, word2, word3).

    Each counter block yields four 64-bit words; `advance(b)` jumps b blocks.
    """
    return Philox(key=[seed, domain], counter=[0, 0, word2, word3])


def _uniforms_from_raw(raw: np.ndarray) -> np.ndarray:
    # Map 64-bit words to doubles strictly inside (0, 1): 53-bit mantissa
    # plus a half-ulp offset keeps the Gaussian quantile finite.
    return (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53 + _HALF_ULP


def standard_normals(stream: Philox, count: int) -> np.ndarray:
    """Draw standard normal variates from a Philox stream via inverse CDF."""
    if count == 0:
        return np.empty(0)
    return gaussian_quantile(_uniforms_from_raw(stream.random_raw(count)))


@dataclass(frozen=True)
class NoiseSource:
    """Deterministic isotropic Gaussian perturbation stream.

    Perturbation `index` for a given (sample_id, stage_id) occupies raw
    words [index*dim, (index+1)*dim) of the Philox stream keyed by
    (seed, DOMAIN_NOISE) at counter (0, 0, stage_id, sample_id). Any batch
    split therefore reproduces identical values.
    """

    seed: int
    sigma: float

    def __post_init__(self):
        if not float(self.sigma) >= 0.0:
            raise ValueError("sigma must be >= 0")
        if self.seed < 0 or self.seed > 2**64 - 1:
            raise ValueError("seed must fit in 64 bits")

    def perturbations(
        self, sample_id: int, stage_id: int, start: int, count: int, dim: int
    ) -> np.ndarray:
        """Return perturbations for indices [start, start+count) as (count, dim)."""
        for name, v in (("sample_id", sample_id), ("stage_id", stage_id), ("start", start)):
            if v < 0:
                raise ValueError(f"{name} must be >= 0")
        if count < 0 or dim < 1:
            raise ValueError("need count >= 0 and dim >= 1")
        if count == 0:
            return np.empty((0, dim))
        if self.sigma == 0.0:
            return np.zeros((count, dim))
        stream = counter_stream(self.seed, DOMAIN_NOISE, stage_id, sample_id)
        word_offset = start * dim
        blocks, within = divmod(word_offset, 4)
        if blocks:
            stream.advance(blocks)
        if within:
            stream.random_raw(within)
        u = _uniforms_from_raw(stream.random_raw(count * dim))
        return (self.sigma * gaussian_quantile(u)).reshape(count, dim)

    def perturbation(self, sample_id: int, stage_id: int, index: int, dim: int) -> np.ndarray:
        """Single perturbation vector for one stream index."""
        return self.perturbations(sample_id, stage_id, index, 1, dim)[0]


def sample_perturbation(
    noise: "NoiseSource", sample_id: int, stage_id: int, index: int, dim: int
) -> np.ndarray:
    """Draw the perturbation at one stream position (function-style alias)."""
    return noise.perturbation(sample_id, stage_id, index, dim)


class BaseClassifier(abc.ABC):
    """Deterministic map from an input vector to a logit vector."""

    class_count: int
    dim: int

    @abc.abstractmethod
    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Logits for a single input, shape (class_count,)."""

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        """Logits for a batch of inputs, shape (len(xs), class_count)."""
        return np.stack([self.evaluate(x) for x in xs])

    def evaluate_batch_counted(self, xs: np.ndarray):
        """Batch logits plus evaluation accounting.

        Returns (logits, model_evaluations, consensus_hits); plain
        classifiers cost one evaluation per input and never hit consensus.
        """
        return self.evaluate_batch(xs), len(xs), 0

    def member_count(self) -> int:
        return 1


@dataclass(frozen=True, eq=False)
class LinearGaussianClassifier(BaseClassifier):
    """Binary linear classifier with an exact smoothed success probability.

    Class 1 wins whenever weight . x + bias > 0. Under isotropic Gaussian
    noise of scale sigma the probability that class 1 wins at x + eps is
    Phi((weight . x + bias) / (sigma * ||weight||)), which makes this the
    analytic oracle used to validate the Monte Carlo certification path.
    """

    weight: np.ndarray
    bias: float = 0.0
    class_count: int = field(default=2, init=False)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weight must be a nonempty vector")
        if not np.linalg.norm(w) > 0.0:
            raise ValueError("weight must have positive norm")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "dim", int(w.size))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        score = float(np.dot(self.weight, x) + self.bias)
        return np.array([0.0, score])

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        scores = np.asarray(xs) @ self.weight + self.bias
        return np.column_stack([np.zeros(len(scores)), scores])

    def true_success_prob(self, x: np.ndarray, sigma: float) -> float:
        """Exact probability that class 1 wins under noise of scale sigma."""
        if not sigma > 0.0:
            raise ValueError("sigma must be positive")
        from .bounds import gaussian_cdf

        margin = float(np.dot(self.weight, x) + self.bias)
        return gaussian_cdf(margin / (sigma * float(np.linalg.norm(self.weight))))


def linear_true_success_prob(clf: LinearGaussianClassifier, x: np.ndarray, sigma: float) -> float:
    """Module-level alias for the linear classifier's analytic oracle."""
    return clf.true_success_prob(x, sigma)


@dataclass(frozen=True, eq=False)
class TabularClassifier(BaseClassifier):
    """Deterministic lookup classifier on a quantized input grid.

    Inputs are floored onto a grid of `cell_size`; the resulting integer
    cell indexes `entries`, falling back to `default_class`. Logits are the
    one-hot vector of the chosen class. With no entries this is the
    constant classifier.
    """

    class_count: int
    dim: int
    cell_size: float = 1.0
    entries: dict = field(default_factory=dict)
    default_class: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.cell_size > 0.0:
            raise ValueError("cell_size must be positive")
        if not 0 <= self.default_class < self.class_count:
            raise ValueError("default_class out of range")
        for cell, label in self.entries.items():
            if len(cell) != self.dim:
                raise ValueError(f"cell {cell} does not match dim {self.dim}")
            if not 0 <= label < self.class_count:
                raise ValueError(f"class {label} out of range for cell {cell}")

    @classmethod
    def constant(cls, class_count: int, label: int, dim: int) -> "TabularClassifier":
        """Classifier that outputs `label` everywhere."""
        return cls(class_count=class_count, dim=dim, default_class=label)

    def _cells(self, xs: np.ndarray) -> np.ndarray:
        return np.floor(np.asarray(xs, dtype=np.float64) / self.cell_size).astype(np.int64)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        cell = tuple(self._cells(x).tolist())
        label = self.entries.get(cell, self.default_class)
        logits = np.zeros(self.class_count)
        logits[label] = 1.0
        return logits

    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        n = len(xs)
        logits = np.zeros((n, self.class_count))
        if not self.entries:
            logits[:, self.default_class] = 1.0
            return logits
        cells = self._cells(xs)
        labels = np.fromiter(
            (self.entries.get(tuple(row), self.default_class) for row in cells.tolist()),
            dtype=np.int64,
            count=n,
        )
        logits[np.arange(n), labels] = 1.0
        return logits


def classifier_from_spec(spec: dict) -> BaseClassifier:
    """Build a classifier from a parsed definition dictionary.

    Supported `type` values: "linear", "tabular", "constant", "ensemble".
    See README for the field-by-field format.
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValueError("classifier definition must be an object with a 'type' field")
    kind = spec["type"]
    if kind == "linear":
        return LinearGaussianClassifier(
            weight=np.asarray(spec["weight"], dtype=np.float64),
            bias=float(spec.get("bias", 0.0)),
        )
    if kind == "tabular":
        entries = {}
        for item in spec.get("entries", []):
            entries[tuple(int(c) for c in item["cell"])] = int(item["class"])
        return TabularClassifier(
            class_count=int(spec["class_count"]),
            dim=int(spec["dim"]),
            cell_size=float(spec.get("cell_size", 1.0)),
            entries=entries,
            default_class=int(spec.get("default_class", 0)),
        )
    if kind == "constant":
        return TabularClassifier.constant(
            class_count=int(spec["class_count"]),
            label=int(spec["class"]),
            dim=int(spec["dim"]),
        )
    if kind == "ensemble":
        from .ensemble import EnsembleClassifier

        members = [classifier_from_spec(m) for m in spec["members"]]
        weights = spec.get("weights")
        return EnsembleClassifier(
            members=members,
            mode=spec.get("mode", "soft"),
            weights=None if weights is None else np.asarray(weights, dtype=np.float64),
            consensus_k=spec.get("consensus_k"),
        )
    raise ValueError(f"unknown classifier type: {kind!r}")


def load_classifier(path) -> BaseClassifier:
    """Load a classifier from a JSON definition file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed classifier file {path}: {exc}") from exc
    return classifier_from_spec(spec)
