import itertools

import numpy as np
import pytest

from react_sg.config import MatchConfig
from react_sg.errors import SnapshotStateError
from react_sg.matching import (
    detect_changes,
    greedy_detect_changes,
    match_clusters,
    run_detector,
    travel_distances,
)
from react_sg.models import (
    Distance,
    InstanceCluster,
    Method,
    SceneSnapshot,
)


def _clustered(session_id, groups, make_instance):
    """Snapshot from (class, embedding, [positions]) cluster groups."""
    instances = []
    clusters = []
    for k, (semantic_class, embedding, positions) in enumerate(groups):
        members = []
        for j, position in enumerate(positions):
            inst = make_instance(
                f"{session_id}-{k}-{j}",
                semantic_class,
                position,
                embedding,
                embedding=embedding,
            )
            instances.append(inst)
            members.append(inst.instance_id)
        clusters.append(
            InstanceCluster(
                cluster_id=f"{session_id}/c{k}",
                semantic_class=semantic_class,
                members=tuple(members),
                embedding=embedding,
            )
        )
    return SceneSnapshot(
        session_id=session_id,
        time_index=0,
        instances=tuple(instances),
        clusters=tuple(clusters),
    )


class TestTravelDistances:
    def test_euclidean(self):
        dist = travel_distances(
            np.array([[0.0, 0.0, 0.0]]),
            np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]]),
            Distance.EUCLIDEAN,
        )

        np.testing.assert_allclose(dist, [[5.0, 1.0]])


class TestMatchClusters:
    def test_disjoint_classes_never_match(self, make_instance):
        ref = _clustered("s1", [("cup", (0.0,), [(0, 0, 0)])], make_instance)
        cur = _clustered("s2", [("mug", (0.0,), [(0, 0, 0)])], make_instance)

        assert match_clusters(ref, cur, MatchConfig(gamma=10.0)) == []

    def test_visual_gate(self, make_instance):
        ref = _clustered("s1", [("cup", (0.0,), [(0, 0, 0)])], make_instance)
        cur = _clustered("s2", [("cup", (2.0,), [(0, 0, 0)])], make_instance)

        assert match_clusters(ref, cur, MatchConfig(gamma=3.9)) == []
        assert match_clusters(ref, cur, MatchConfig(gamma=4.0)) == [
            ("s1/c0", "s2/c0")
        ]

    def test_crossed_clusters_follow_appearance(self, make_instance):
        ref = _clustered(
            "s1",
            [("cup", (0.0,), [(0, 0, 0)]), ("cup", (5.0,), [(9, 0, 0)])],
            make_instance,
        )
        cur = _clustered(
            "s2",
            [("cup", (5.1,), [(0, 0, 0)]), ("cup", (0.1,), [(9, 0, 0)])],
            make_instance,
        )

        pairs = match_clusters(ref, cur, MatchConfig(gamma=1.0))

        assert sorted(pairs) == [("s1/c0", "s2/c1"), ("s1/c1", "s2/c0")]

    def test_requires_clustered_snapshots(self, make_instance):
        ref = SceneSnapshot(
            session_id="s1",
            time_index=0,
            instances=(make_instance("a", "cup", (0, 0, 0), (0.0,)),),
        )

        with pytest.raises(SnapshotStateError, match="must be clustered"):
            match_clusters(ref, ref, MatchConfig())


class TestDetectChanges:
    def test_single_pair(self, make_instance, clustered_snapshot):
        ref = clustered_snapshot(
            "s1", [make_instance("a", "cup", (0, 0, 0), (1.0,))]
        )
        cur = clustered_snapshot(
            "s2", [make_instance("b", "cup", (0.3, 0.4, 0), (1.0,))]
        )

        report = detect_changes(ref, cur, MatchConfig(gamma=1.0))

        pairs = [(p.ref_instance_id, p.cur_instance_id) for p in report.matched]
        assert pairs == [("a", "b")]
        assert report.total_distance == pytest.approx(0.5)
        assert report.absent == ()
        assert report.new == ()

    def test_identical_snapshots_match_everything(self, make_instance):
        groups = [
            ("cup", (0.0,), [(0, 0, 0), (1, 0, 0)]),
            ("plate", (3.0,), [(2, 2, 0)]),
        ]
        ref = _clustered("s1", groups, make_instance)
        cur = _clustered("s1", groups, make_instance)

        report = detect_changes(ref, cur, MatchConfig(gamma=0.5))

        assert len(report.matched) == 3
        assert all(
            p.ref_instance_id == p.cur_instance_id for p in report.matched
        )
        assert report.total_distance == 0.0

    def test_identical_members_are_paired_by_travel(self, make_instance):
        ref = _clustered(
            "s1",
            [("chair", (0.0,), [(0, 0, 0), (1, 0, 0), (2, 0, 0)])],
            make_instance,
        )
        cur = _clustered(
            "s2",
            [("chair", (0.0,), [(2.1, 0, 0), (0.1, 0, 0)])],
            make_instance,
        )

        report = detect_changes(ref, cur, MatchConfig(gamma=0.5))

        pairs = {(p.ref_instance_id, p.cur_instance_id) for p in report.matched}
        assert pairs == {("s1-0-0", "s2-0-1"), ("s1-0-2", "s2-0-0")}
        assert report.absent == ("s1-0-1",)
        assert report.total_distance == pytest.approx(0.2)

    def test_five_against_three_is_optimal(self, make_instance):
        rng = np.random.default_rng(8)
        ref_positions = [tuple(p) for p in rng.random((5, 3)) * 4]
        cur_positions = [tuple(p) for p in rng.random((3, 3)) * 4]
        ref = _clustered(
            "s1", [("chair", (0.0,), ref_positions)], make_instance
        )
        cur = _clustered(
            "s2", [("chair", (0.0,), cur_positions)], make_instance
        )

        report = detect_changes(ref, cur, MatchConfig(gamma=0.5))

        cost = travel_distances(
            np.array(ref_positions), np.array(cur_positions), Distance.EUCLIDEAN
        )
        best = min(
            sum(cost[r, c] for c, r in enumerate(rows))
            for rows in itertools.permutations(range(5), 3)
        )
        assert len(report.matched) == 3
        assert len(report.absent) == 2
        assert report.total_distance == pytest.approx(best)

    def test_unmatched_classes_are_absent_and_new(
        self, make_instance, clustered_snapshot
    ):
        ref = clustered_snapshot(
            "s1", [make_instance("a", "cup", (0, 0, 0), (1.0,))]
        )
        cur = clustered_snapshot(
            "s2", [make_instance("b", "mug", (0, 0, 0), (1.0,))]
        )

        report = detect_changes(ref, cur, MatchConfig())

        assert report.matched == ()
        assert report.absent == ("a",)
        assert report.new == ("b",)

    def test_empty_current_makes_everything_absent(
        self, make_instance, clustered_snapshot
    ):
        ref = clustered_snapshot(
            "s1",
            [
                make_instance("a", "cup", (0, 0, 0), (1.0,)),
                make_instance("b", "cup", (1, 0, 0), (1.0,)),
            ],
        )
        cur = SceneSnapshot(session_id="s2", time_index=1)

        report = detect_changes(ref, cur, MatchConfig())

        assert report.absent == ("a", "b")
        assert report.matched == ()


class TestGreedyDetectChanges:
    def test_never_travels_less_than_react(self, make_instance):
        rng = np.random.default_rng(12)
        for _ in range(10):
            ref_positions = [tuple(p) for p in rng.random((4, 3)) * 3]
            cur_positions = [tuple(p) for p in rng.random((4, 3)) * 3]
            ref = _clustered(
                "s1", [("chair", (0.0,), ref_positions)], make_instance
            )
            cur = _clustered(
                "s2", [("chair", (0.0,), cur_positions)], make_instance
            )
            config = MatchConfig(gamma=0.5)

            react = detect_changes(ref, cur, config)
            greedy = greedy_detect_changes(ref, cur, config)

            assert len(greedy.matched) == len(react.matched) == 4
            assert greedy.total_distance >= react.total_distance - 1e-9

    def test_takes_most_similar_pair_first(self, make_instance):
        ref = _clustered(
            "s1",
            [("cup", (0.0,), [(0, 0, 0)]), ("cup", (0.5,), [(5, 0, 0)])],
            make_instance,
        )
        cur = _clustered("s2", [("cup", (0.45,), [(0, 0, 0)])], make_instance)

        report = greedy_detect_changes(ref, cur, MatchConfig(gamma=1.0))

        assert report.matched[0].ref_instance_id == "s1-1-0"
        assert report.matched[0].travel_distance == pytest.approx(5.0)
        assert report.method == Method.GREEDY

    @pytest.mark.parametrize("seed", range(5))
    def test_larger_gamma_never_drops_a_pair(self, make_instance, seed):
        rng = np.random.default_rng(seed)

        def snapshot(session_id, count):
            instances = tuple(
                make_instance(
                    f"{session_id}-{k}",
                    "chair",
                    (float(k), 0.0, 0.0),
                    (0.0,),
                    embedding=(float(rng.random() * 2.0),),
                )
                for k in range(count)
            )
            return SceneSnapshot(
                session_id=session_id, time_index=0, instances=instances
            )

        ref, cur = snapshot("s1", 6), snapshot("s2", 5)
        previous: set[tuple[str, str]] = set()
        for gamma in (0.0, 0.01, 0.05, 0.2, 0.5, 1.0, 5.0):
            report = greedy_detect_changes(ref, cur, MatchConfig(gamma=gamma))

            pairs = {
                (p.ref_instance_id, p.cur_instance_id) for p in report.matched
            }
            assert previous <= pairs
            previous = pairs
        assert len(previous) == 5


class TestRunDetector:
    def test_dispatches_on_method(self, make_instance, clustered_snapshot):
        snap = clustered_snapshot(
            "s1", [make_instance("a", "cup", (0, 0, 0), (1.0,))]
        )

        assert (
            run_detector(Method.GREEDY, snap, snap, MatchConfig()).method
            == Method.GREEDY
        )
        assert (
            run_detector(Method.REACT, snap, snap, MatchConfig()).method
            == Method.REACT
        )
