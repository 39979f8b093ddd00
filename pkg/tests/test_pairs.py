import pytest

from shared.entities.dyadic import DyadicInterval
from shared.entities.pairs import Pair, PairCollection, StoppingData
from shared.errors import AdmissibilityError

UNIT = DyadicInterval.unit()
J = DyadicInterval(5, 10)


def test_pair_geometry():
    p = Pair(UNIT, J)
    assert p.tilde_q1 == DyadicInterval(1, 0)
    assert p.ratio_exponent == 5


def test_collection_indexes_and_deduplicates():
    Q = PairCollection(UNIT, [Pair(UNIT, J), Pair(UNIT, J), Pair(UNIT, DyadicInterval(5, 21))])
    assert len(Q) == 2
    assert Q.q1s == [UNIT]
    assert Q.tildes == [DyadicInterval(1, 0), DyadicInterval(1, 1)]
    assert Q.k_family() == [DyadicInterval(1, 0), DyadicInterval(1, 1), J, DyadicInterval(5, 21)]
    assert Pair(UNIT, J) in Q
    assert PairCollection.from_dict(Q.to_dict()) == Q


def test_admissibility_violations(cfg):
    assert PairCollection(UNIT, [Pair(UNIT, J)]).admissibility_violations(cfg) == []
    shallow = PairCollection(UNIT, [Pair(DyadicInterval(1, 0), J)])
    assert any("not deeply contained" in m for m in shallow.admissibility_violations(cfg))
    with pytest.raises(AdmissibilityError):
        shallow.validate(cfg)
    energy = PairCollection(UNIT, [Pair(UNIT, J)]).admissibility_violations(cfg, [DyadicInterval(2, 1)])
    assert any("energy stopping" in m for m in energy)


def test_convexity_gap_is_reported(cfg):
    deep = DyadicInterval(7, 40)
    # [0,1/2) is good and sits between the two Q1 levels
    Q = PairCollection(UNIT, [Pair(UNIT, deep), Pair(DyadicInterval(2, 1), deep)])
    assert any("convexity" in m for m in Q.admissibility_violations(cfg))


def test_stopping_tree_lookup():
    F = DyadicInterval(2, 1)
    data = StoppingData(UNIT, {UNIT: 1.0, F: 5.0}, {UNIT: None, F: UNIT})
    assert data.pi(DyadicInterval(4, 5)) == F
    assert data.pi(DyadicInterval(4, 9)) == UNIT
    assert data.children_of(UNIT) == [F]
    assert data.growth_violations(4.0) == []
    assert len(data.growth_violations(6.0)) == 1
