"""Concept conditioning vectors and ordered sets of them.

A concept is one scene factor: a 2-D object center, a one-hot attribute
block, its relaxed surrogate, or a free embedding.  Attribute blocks follow
the pseudo one-hot layout: a scene with A binary attributes uses vectors of
dimension 2A, where attribute a's block occupies entries [2a, 2a+1] and a
bit b encodes as [b, 1-b].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

KIND_COORDINATE = "continuous-coordinate"
KIND_ONEHOT = "one-hot-label"
KIND_RELAXED = "relaxed-label"
KIND_EMBEDDING = "embedding"

_KINDS = (KIND_COORDINATE, KIND_ONEHOT, KIND_RELAXED, KIND_EMBEDDING)


@dataclass(frozen=True)
class ConceptVector:
    """A single conditioning vector with its kind and per-entry bounds."""

    values: np.ndarray
    kind: str = KIND_EMBEDDING
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown concept kind {self.kind!r}")
        if values.size == 0:
            raise ParameterError("concept vector must be non-empty")
        if not np.all(np.isfinite(values)):
            raise ParameterError("concept vector contains non-finite entries")
        if self.kind == KIND_COORDINATE:
            if np.any(values < self.lower) or np.any(values > self.upper):
                raise ParameterError(
                    f"coordinate entries outside [{self.lower}, {self.upper}]"
                )
        elif self.kind == KIND_ONEHOT:
            if not np.all((values == 0.0) | (values == 1.0)):
                raise ParameterError("one-hot entries must be 0 or 1")
            if values.sum() != 1.0:
                raise ParameterError("one-hot vector must have exactly one active entry")
        elif self.kind == KIND_RELAXED:
            if np.any(values < 0.0) or np.any(values > 1.0):
                raise ParameterError("relaxed entries must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ConceptSet:
    """Ordered list of K concepts sharing one kind and dimension."""

    concepts: tuple[ConceptVector, ...]

    def __post_init__(self):
        concepts = tuple(self.concepts)
        object.__setattr__(self, "concepts", concepts)
        if len(concepts) < 1:
            raise ParameterError("concept set must contain at least one concept")
        kinds = {c.kind for c in concepts}
        dims = {c.dim for c in concepts}
        if len(kinds) > 1 or len(dims) > 1:
            raise ParameterError(
                f"concept set members must share kind and dimension, "
                f"got kinds={sorted(kinds)} dims={sorted(dims)}"
            )

    @property
    def k(self) -> int:
        return len(self.concepts)

    @property
    def kind(self) -> str:
        return self.concepts[0].kind

    @property
    def dim(self) -> int:
        return self.concepts[0].dim

    def matrix(self) -> np.ndarray:
        """(K, dim) float64 stack of the member vectors."""
        return np.stack([c.values for c in self.concepts])


def coordinate_concept(xy, lower: float = 0.0, upper: float = 1.0) -> ConceptVector:
    return ConceptVector(np.asarray(xy, dtype=np.float64), KIND_COORDINATE, lower, upper)


def onehot_concept(attr_index: int, bit: int, n_attrs: int) -> ConceptVector:
    """Attribute attr_index set to bit, encoded as block [b, 1-b] in a 2A vector."""
    if not 0 <= attr_index < n_attrs:
        raise ParameterError(f"attr_index {attr_index} outside [0, {n_attrs})")
    if bit not in (0, 1):
        raise ParameterError(f"bit must be 0 or 1, got {bit!r}")
    values = np.zeros(2 * n_attrs)
    values[2 * attr_index] = float(bit)
    values[2 * attr_index + 1] = 1.0 - float(bit)
    return ConceptVector(values, KIND_ONEHOT)


def relaxed_concept(attr_index: int, level: float, n_attrs: int) -> ConceptVector:
    """Relaxed attribute block [l, 1-l]; level is clamped to [0, 1]."""
    if not 0 <= attr_index < n_attrs:
        raise ParameterError(f"attr_index {attr_index} outside [0, {n_attrs})")
    level = min(1.0, max(0.0, float(level)))
    values = np.zeros(2 * n_attrs)
    values[2 * attr_index] = level
    values[2 * attr_index + 1] = 1.0 - level
    return ConceptVector(values, KIND_RELAXED)


def coordinate_set(points) -> ConceptSet:
    return ConceptSet(tuple(coordinate_concept(p) for p in points))


def onehot_set(bits) -> ConceptSet:
    """One concept per attribute for a full bit vector."""
    bits = list(bits)
    return ConceptSet(
        tuple(onehot_concept(a, int(b), len(bits)) for a, b in enumerate(bits))
    )
