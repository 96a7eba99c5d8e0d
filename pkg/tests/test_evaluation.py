import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from attmerge.evaluation import (
    BONAFIDE,
    SPOOF,
    ScoreSet,
    average_eer,
    compute_eer,
    crossing,
    det_points,
)


def random_sets(rng, count=100, max_n=200):
    for _ in range(count):
        nb, ns = rng.integers(1, max_n // 2 + 1, size=2)
        # rounding creates ties both within and across classes
        bona = np.round(rng.normal(0.8, 1.0, size=nb), 1)
        spoof = np.round(rng.normal(-0.8, 1.0, size=ns), 1)
        yield bona, spoof


class TestComputeEer:
    def test_perfect_separation(self):
        assert compute_eer(ScoreSet.from_arrays([1.0], [0.0])) == 0.0

    def test_total_inversion(self):
        assert compute_eer(ScoreSet.from_arrays([0.0], [1.0])) == 1.0

    def test_hand_case(self):
        eer = compute_eer(ScoreSet.from_arrays([0.9, 0.8, 0.3], [0.7, 0.2, 0.1]))
        assert eer == pytest.approx(1 / 3, abs=1e-15)

    def test_all_scores_equal(self):
        # one threshold accepts everything, the reject-all point nothing
        assert compute_eer(([0.5, 0.5], [0.5])) == 0.5

    def test_matches_brute_force(self, rng):
        for bona, spoof in random_sets(rng):
            assert compute_eer((bona, spoof)) == oracles.brute_force_eer(bona, spoof)

    @given(
        st.lists(st.floats(-5, 5), min_size=1, max_size=30),
        st.lists(st.floats(-5, 5), min_size=1, max_size=30),
    )
    @settings(max_examples=200, deadline=None)
    def test_brute_force_property(self, bona, spoof):
        assert compute_eer((bona, spoof)) == oracles.brute_force_eer(bona, spoof)

    def test_invariant_to_increasing_transform(self, rng):
        for bona, spoof in random_sets(rng, count=30):
            warped = compute_eer((np.exp(bona) * 3 + 1, np.exp(spoof) * 3 + 1))
            assert warped == compute_eer((bona, spoof))

    def test_range(self, rng):
        for bona, spoof in random_sets(rng, count=30):
            assert 0.0 <= compute_eer((bona, spoof)) <= 1.0

    def test_missing_class(self):
        with pytest.raises(ValueError, match="both classes"):
            compute_eer(ScoreSet([("a", BONAFIDE, 1.0)]))


class TestDetPoints:
    def test_contains_origin_when_separated(self):
        assert (0.0, 0.0) in det_points(ScoreSet.from_arrays([1.0], [0.0]))

    def test_monotone(self, rng):
        for bona, spoof in random_sets(rng, count=50):
            far, frr = zip(*det_points((bona, spoof)))
            assert all(b <= a for a, b in zip(far, far[1:]))
            assert all(b >= a for a, b in zip(frr, frr[1:]))

    def test_one_point_per_threshold_plus_reject_all(self, rng):
        bona, spoof = next(random_sets(rng, count=1))
        pts = det_points((bona, spoof))
        assert len(pts) == len(np.unique(np.concatenate([bona, spoof]))) + 1
        assert pts[-1] == (0.0, 1.0)

    def test_eer_is_polyline_crossing(self, rng):
        for bona, spoof in random_sets(rng, count=50):
            far, frr = zip(*det_points((bona, spoof)))
            assert crossing(far, frr) == compute_eer((bona, spoof))


class TestAverageEer:
    def test_three_datasets(self):
        assert average_eer([0.65, 3.50, 3.19]) == pytest.approx(2.44667, abs=5e-6)

    def test_single(self):
        assert average_eer([1.25]) == 1.25

    def test_all_equal(self):
        assert average_eer([0.3] * 4) == pytest.approx(0.3, abs=1e-16)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            average_eer([])


class TestScoreSet:
    def test_duplicate_ids(self):
        with pytest.raises(ValueError, match="duplicate utterance id 'x'"):
            ScoreSet([("x", BONAFIDE, 1.0), ("x", SPOOF, 0.0)])

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="unknown label"):
            ScoreSet([("x", "fake", 1.0)])

    def test_join_lists_missing_ids(self):
        keys = {"a": BONAFIDE, "b": SPOOF, "c": SPOOF}
        with pytest.raises(ValueError, match="2 keyed ids have no score: b, c"):
            ScoreSet.join(keys, {"a": 0.1})

    def test_join(self):
        s = ScoreSet.join({"a": BONAFIDE, "b": SPOOF}, {"b": -1.0, "a": 2.0, "extra": 0.0})
        bona, spoof = s.split()
        assert list(bona) == [2.0] and list(spoof) == [-1.0]
