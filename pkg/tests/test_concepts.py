import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from composcene.concepts import (
    KIND_COORDINATE,
    KIND_ONEHOT,
    KIND_RELAXED,
    ConceptSet,
    ConceptVector,
    coordinate_concept,
    coordinate_set,
    onehot_concept,
    onehot_set,
    relaxed_concept,
)
from composcene.errors import ParameterError


def test_coordinate_bounds():
    c = coordinate_concept([0.2, 0.9])
    assert c.kind == KIND_COORDINATE
    with pytest.raises(ParameterError):
        coordinate_concept([1.2, 0.5])
    with pytest.raises(ParameterError):
        coordinate_concept([-0.1, 0.5])


def test_onehot_block_layout():
    c = onehot_concept(1, 1, 3)
    assert list(c.values) == [0, 0, 1, 0, 0, 0]
    c = onehot_concept(2, 0, 3)
    assert list(c.values) == [0, 0, 0, 0, 0, 1]
    with pytest.raises(ParameterError):
        onehot_concept(3, 0, 3)
    with pytest.raises(ParameterError):
        onehot_concept(0, 2, 3)


def test_onehot_validation():
    with pytest.raises(ParameterError):
        ConceptVector(np.array([0.5, 0.5]), KIND_ONEHOT)
    with pytest.raises(ParameterError):
        ConceptVector(np.array([1.0, 1.0]), KIND_ONEHOT)


@settings(max_examples=30, deadline=None)
@given(level=st.floats(min_value=-1, max_value=2), idx=st.integers(0, 2))
def test_relaxed_clamps(level, idx):
    c = relaxed_concept(idx, level, 3)
    assert c.kind == KIND_RELAXED
    lv = c.values[2 * idx]
    assert 0.0 <= lv <= 1.0
    assert c.values[2 * idx + 1] == pytest.approx(1.0 - lv, abs=0)


def test_set_homogeneity():
    with pytest.raises(ParameterError):
        ConceptSet((coordinate_concept([0.1, 0.2]), onehot_concept(0, 1, 1)))
    with pytest.raises(ParameterError):
        ConceptSet(())


def test_set_matrix_and_builders():
    s = coordinate_set([(0.1, 0.2), (0.3, 0.4)])
    assert s.k == 2 and s.dim == 2
    assert np.array_equal(s.matrix(), [[0.1, 0.2], [0.3, 0.4]])
    g = onehot_set([1, 0, 1])
    assert g.k == 3 and g.dim == 6
    assert list(g.concepts[0].values) == [1, 0, 0, 0, 0, 0]
    assert list(g.concepts[1].values) == [0, 0, 0, 1, 0, 0]


def test_nonfinite_rejected():
    with pytest.raises(ParameterError):
        ConceptVector(np.array([np.nan, 0.0]))
