import pytest

from shared.entities.dyadic import (DyadicInterval, GridConfig, all_intervals, boundary_distance, child_containing,
                                    children, deeply_contained, interval_containing, is_good)
from shared.errors import GridError


def test_interval_geometry():
    I = DyadicInterval(2, 1)
    assert I.left == 0.25
    assert I.right == 0.5
    assert I.length == 0.25
    assert I.midpoint == 0.375
    assert I.halves() == (DyadicInterval(3, 2), DyadicInterval(3, 3))
    assert I.parent() == DyadicInterval(1, 0)
    assert str(I) == "[1/2^2, 2/2^2)"


def test_invalid_intervals_are_rejected():
    with pytest.raises(GridError):
        DyadicInterval(-1, 0)
    with pytest.raises(GridError):
        DyadicInterval(2, 4)
    with pytest.raises(GridError):
        DyadicInterval.unit().parent()


def test_ancestors_run_from_parent_to_unit():
    assert list(DyadicInterval(3, 5).ancestors()) == [DyadicInterval(2, 2), DyadicInterval(1, 1), DyadicInterval(0, 0)]
    assert DyadicInterval(3, 5).ancestor(1) == DyadicInterval(1, 1)


def test_containment():
    I, J = DyadicInterval(1, 1), DyadicInterval(3, 6)
    assert I.contains(J) and I.strictly_contains(J)
    assert I.contains(I) and not I.strictly_contains(I)
    assert not J.contains(I)
    assert not DyadicInterval(1, 0).contains(J)
    assert child_containing(I, J) == DyadicInterval(2, 3)
    with pytest.raises(GridError):
        child_containing(J, I)


def test_grid_config_validation():
    with pytest.raises(GridError):
        GridConfig(K=10, r=0, eps=0.3)
    with pytest.raises(GridError):
        GridConfig(K=10, r=5, eps=0.5)
    with pytest.raises(GridError):
        GridConfig(K=6, r=5, eps=0.45)


def test_children_stop_at_depth(cfg):
    assert children(DyadicInterval(9, 3), cfg) == (DyadicInterval(10, 6), DyadicInterval(10, 7))
    with pytest.raises(GridError):
        children(DyadicInterval(10, 3), cfg)


def test_goodness_against_hand_values(cfg):
    # level 4 intervals are only tested against [0,1): threshold 2^-1.8 ~ 0.287
    assert is_good(DyadicInterval(4, 5), cfg)
    assert is_good(DyadicInterval(4, 10), cfg)
    assert not is_good(DyadicInterval(4, 4), cfg)
    assert not is_good(DyadicInterval(4, 11), cfg)
    # nothing at a gap of r - 1 or more above level 3
    assert all(is_good(I, cfg) for I in all_intervals(3))


def test_goodness_grows_with_eps():
    # the threshold |J|^eps |I|^(1-eps) falls as eps grows
    loose, strict = GridConfig(K=10, r=5, eps=0.45), GridConfig(K=10, r=5, eps=0.3)
    assert is_good(DyadicInterval(4, 5), loose)
    assert not is_good(DyadicInterval(4, 5), strict)
    assert all(is_good(J, loose) for J in all_intervals(8) if is_good(J, strict))


def test_goodness_checks_every_large_ancestor(cfg):
    # fine against [0,1) but too close to the right end of [0,1/2)
    J = DyadicInterval(5, 11)
    assert boundary_distance(J, DyadicInterval.unit()) >= 2.0 ** (-5 * 0.45)
    assert not is_good(J, cfg)
    assert is_good(DyadicInterval(5, 10), cfg)


def test_deep_containment_needs_scale_gap(cfg):
    J = DyadicInterval(5, 10)
    assert deeply_contained(J, DyadicInterval.unit(), cfg)
    assert not deeply_contained(J, DyadicInterval(1, 0), cfg)
    assert not deeply_contained(DyadicInterval(5, 11), DyadicInterval.unit(), cfg)
    assert not deeply_contained(J, DyadicInterval(1, 1), cfg)


def test_all_intervals_under_root():
    root = DyadicInterval(1, 1)
    got = all_intervals(3, root)
    assert len(got) == 1 + 2 + 4
    assert got[0] == root
    assert all(root.contains(I) for I in got)


def test_interval_containing():
    assert interval_containing(0.3, 2) == DyadicInterval(2, 1)
    with pytest.raises(GridError):
        interval_containing(1.0, 2)


def test_round_trip_dict():
    I = DyadicInterval(4, 9)
    assert DyadicInterval.from_dict(I.to_dict()) == I
    with pytest.raises(GridError):
        DyadicInterval.from_dict({'n': 1})
