import logging
from collections import defaultdict

import numpy as np

from .assignment import solve_lsa, solve_lsa_partial
from .clustering import visual_difference
from .config import MatchConfig
from .errors import SnapshotStateError
from .models import (
    ChangeReport,
    Distance,
    ErrorCodes,
    InstanceCluster,
    MatchedPair,
    Method,
    SceneSnapshot,
    Vector3,
)

logger = logging.getLogger(__name__)


def travel_distances(
    ref_positions: np.ndarray, cur_positions: np.ndarray, kind: Distance
) -> np.ndarray:
    """Pairwise D(p_i, p_j) between two position sets."""
    if kind == Distance.EUCLIDEAN:
        diff = ref_positions[:, None, :] - cur_positions[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    msg = f"Unsupported distance: {kind}"
    raise ValueError(msg)


def _require_clustered(snapshot: SceneSnapshot) -> None:
    if not snapshot.is_clustered:
        msg = f"Snapshot {snapshot.session_id} must be clustered first"
        raise SnapshotStateError(msg, ErrorCodes.UNCLUSTERED_SNAPSHOT)


def _clusters_by_class(
    snapshot: SceneSnapshot,
) -> dict[str, list[InstanceCluster]]:
    grouped: dict[str, list[InstanceCluster]] = defaultdict(list)
    for cluster in sorted(snapshot.clusters, key=lambda c: c.cluster_id):
        grouped[cluster.semantic_class].append(cluster)
    return grouped


def match_clusters(
    ref: SceneSnapshot, cur: SceneSnapshot, config: MatchConfig
) -> list[tuple[str, str]]:
    """Pair same-class clusters whose visual difference stays within gamma."""
    _require_clustered(ref)
    _require_clustered(cur)
    ref_groups = _clusters_by_class(ref)
    cur_groups = _clusters_by_class(cur)

    pairs = []
    for semantic_class in sorted(ref_groups.keys() & cur_groups.keys()):
        ref_clusters = ref_groups[semantic_class]
        cur_clusters = cur_groups[semantic_class]
        cost = np.array(
            [
                [visual_difference(a, b) for b in cur_clusters]
                for a in ref_clusters
            ]
        )
        cost[cost > config.gamma] = np.inf
        result = solve_lsa_partial(cost)
        pairs.extend(
            (ref_clusters[r].cluster_id, cur_clusters[c].cluster_id)
            for r, c in result.pairs
        )
        logger.debug(
            "class %s: %d ref clusters, %d cur clusters, %d paired",
            semantic_class,
            len(ref_clusters),
            len(cur_clusters),
            len(result.pairs),
        )
    return pairs


def match_instances(
    ref_cluster: InstanceCluster,
    cur_cluster: InstanceCluster,
    ref_positions: dict[str, Vector3],
    cur_positions: dict[str, Vector3],
    config: MatchConfig,
) -> list[MatchedPair]:
    """Assign instances of two matched clusters by minimum total travel."""
    ref_ids, cur_ids = ref_cluster.members, cur_cluster.members
    cost = travel_distances(
        np.array([ref_positions[i] for i in ref_ids], dtype=float),
        np.array([cur_positions[i] for i in cur_ids], dtype=float),
        config.distance,
    )
    result = solve_lsa(cost)
    return [
        MatchedPair(
            ref_instance_id=ref_ids[r],
            cur_instance_id=cur_ids[c],
            travel_distance=float(cost[r, c]),
        )
        for r, c in result.pairs
    ]


def _positions(snapshot: SceneSnapshot) -> dict[str, Vector3]:
    return {inst.instance_id: inst.position for inst in snapshot.instances}


def _report(
    ref: SceneSnapshot,
    cur: SceneSnapshot,
    matched: list[MatchedPair],
    method: Method,
    gamma: float,
) -> ChangeReport:
    ref_done = {p.ref_instance_id for p in matched}
    cur_done = {p.cur_instance_id for p in matched}
    report = ChangeReport.build(
        matched,
        absent={i.instance_id for i in ref.instances} - ref_done,
        new={i.instance_id for i in cur.instances} - cur_done,
        method=method,
        gamma=gamma,
    )
    logger.info(
        "%s report %s -> %s: %d matched, %d absent, %d new, sum %.3f m",
        method.value,
        ref.session_id,
        cur.session_id,
        len(report.matched),
        len(report.absent),
        len(report.new),
        report.total_distance,
    )
    return report


def detect_changes(
    ref: SceneSnapshot, cur: SceneSnapshot, config: MatchConfig
) -> ChangeReport:
    """Cluster-level visual matching followed by travel minimization."""
    ref_clusters = ref.cluster_index()
    cur_clusters = cur.cluster_index()
    ref_positions = _positions(ref)
    cur_positions = _positions(cur)

    matched: list[MatchedPair] = []
    for ref_id, cur_id in match_clusters(ref, cur, config):
        matched.extend(
            match_instances(
                ref_clusters[ref_id],
                cur_clusters[cur_id],
                ref_positions,
                cur_positions,
                config,
            )
        )
    return _report(ref, cur, matched, Method.REACT, config.gamma)


def greedy_detect_changes(
    ref: SceneSnapshot, cur: SceneSnapshot, config: MatchConfig
) -> ChangeReport:
    """Baseline without clustering: repeatedly take the most similar pair."""
    candidates = []
    for a in ref.instances:
        for b in cur.instances:
            if a.semantic_class != b.semantic_class:
                continue
            difference = visual_difference(a, b)
            if difference <= config.gamma:
                candidates.append((difference, a.instance_id, b.instance_id))
    candidates.sort()

    ref_positions = _positions(ref)
    cur_positions = _positions(cur)
    used_ref: set[str] = set()
    used_cur: set[str] = set()
    matched = []
    for _, ref_id, cur_id in candidates:
        if ref_id in used_ref or cur_id in used_cur:
            continue
        used_ref.add(ref_id)
        used_cur.add(cur_id)
        distance = travel_distances(
            np.array([ref_positions[ref_id]], dtype=float),
            np.array([cur_positions[cur_id]], dtype=float),
            config.distance,
        )[0, 0]
        matched.append(
            MatchedPair(
                ref_instance_id=ref_id,
                cur_instance_id=cur_id,
                travel_distance=float(distance),
            )
        )
    return _report(ref, cur, matched, Method.GREEDY, config.gamma)


def run_detector(
    method: Method,
    ref: SceneSnapshot,
    cur: SceneSnapshot,
    config: MatchConfig,
) -> ChangeReport:
    if method == Method.GREEDY:
        return greedy_detect_changes(ref, cur, config)
    return detect_changes(ref, cur, config)
