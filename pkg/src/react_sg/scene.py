import logging
import math
from collections import Counter

from .errors import ReportMismatchError
from .models import (
    ChangeReport,
    ObjectInstance,
    SceneSnapshot,
    Vector3,
    ViewDescriptor,
)

logger = logging.getLogger(__name__)


def _finite(values: tuple[float, ...]) -> bool:
    return all(math.isfinite(v) for v in values)


def _instance_violations(
    inst: ObjectInstance, descriptor_dim: int | None
) -> list[str]:
    violations = []
    coordinates = [inst.position, *inst.position_history]
    if not all(_finite(c) for c in coordinates):
        violations.append(f"non-finite coordinate: instance {inst.instance_id}")
    elif not inst.position_history:
        violations.append(
            f"empty position history: instance {inst.instance_id}"
        )
    elif tuple(inst.position) != tuple(inst.position_history[-1]):
        violations.append(
            f"position differs from history: instance {inst.instance_id}"
        )
    for view in inst.views:
        if not _finite(view.data):
            violations.append(
                f"non-finite view data: view {view.view_id} "
                f"of instance {inst.instance_id}"
            )
        elif descriptor_dim is not None and len(view.data) != descriptor_dim:
            violations.append(
                f"descriptor dimension mismatch: view {view.view_id} has "
                f"{len(view.data)} entries, expected {descriptor_dim}"
            )
    return violations


def _cluster_violations(snapshot: SceneSnapshot) -> list[str]:
    violations = []
    index = snapshot.instance_index()
    membership: Counter[str] = Counter()
    for cluster in snapshot.clusters:
        membership.update(cluster.members)
        unknown = [m for m in cluster.members if m not in index]
        if unknown:
            violations.append(
                f"unknown cluster member: {', '.join(unknown)} "
                f"in cluster {cluster.cluster_id}"
            )
            continue
        classes = {index[m].semantic_class for m in cluster.members}
        if not cluster.members or classes != {cluster.semantic_class}:
            violations.append(
                f"mixed semantic classes: cluster {cluster.cluster_id}"
            )
        view_count = sum(len(index[m].views) for m in cluster.members)
        if cluster.view_library and len(cluster.view_library) != view_count:
            violations.append(
                f"view library size mismatch: cluster {cluster.cluster_id}"
            )
    for instance_id in index:
        count = membership.get(instance_id, 0)
        if count != 1:
            violations.append(
                f"partition violated: instance {instance_id} "
                f"appears in {count} clusters"
            )
    return violations


def validate_snapshot(
    snapshot: SceneSnapshot,
    descriptor_dim: int | None = None,
    *,
    require_clustered: bool = False,
) -> list[str]:
    """Return every invariant violation of a snapshot; never raises."""
    violations = []
    ids = Counter(inst.instance_id for inst in snapshot.instances)
    violations.extend(
        f"duplicate instance id: {instance_id}"
        for instance_id, count in sorted(ids.items())
        if count > 1
    )
    if descriptor_dim is None:
        dims = sorted(
            {len(v.data) for i in snapshot.instances for v in i.views}
        )
        if len(dims) > 1:
            violations.append(f"inconsistent descriptor dimensions: {dims}")
    view_ids = Counter(v.view_id for i in snapshot.instances for v in i.views)
    violations.extend(
        f"duplicate view id: {view_id}"
        for view_id, count in sorted(view_ids.items())
        if count > 1
    )
    for inst in snapshot.instances:
        violations.extend(_instance_violations(inst, descriptor_dim))
    if snapshot.clusters:
        violations.extend(_cluster_violations(snapshot))
    elif require_clustered and snapshot.instances:
        violations.append(f"unclustered snapshot: {snapshot.session_id}")
    return violations


def cluster_views(
    snapshot: SceneSnapshot, cluster_id: str
) -> tuple[ViewDescriptor, ...]:
    """Resolve the merged view library shared by a cluster's members."""
    cluster = snapshot.cluster_index()[cluster_id]
    index = snapshot.instance_index()
    return tuple(v for m in cluster.members for v in index[m].views)


def _check_side(
    side: str, paired: list[str], leftover: tuple[str, ...], ids: set[str]
) -> None:
    if len(set(paired)) != len(paired):
        msg = f"Report pairs a {side} instance more than once"
        raise ReportMismatchError(msg)
    if set(paired) & set(leftover):
        msg = f"Report lists {side} instances as both matched and unmatched"
        raise ReportMismatchError(msg)
    covered = set(paired) | set(leftover)
    if covered != ids:
        missing = sorted(ids - covered)
        extra = sorted(covered - ids)
        msg = (
            f"Report does not cover the {side} snapshot: "
            f"missing {missing}, unknown {extra}"
        )
        raise ReportMismatchError(msg)


def check_report(
    ref: SceneSnapshot, cur: SceneSnapshot, report: ChangeReport
) -> None:
    _check_side(
        "reference",
        [p.ref_instance_id for p in report.matched],
        report.absent,
        set(ref.instance_index()),
    )
    _check_side(
        "current",
        [p.cur_instance_id for p in report.matched],
        report.new,
        set(cur.instance_index()),
    )


def _merge_views(
    kept: tuple[ViewDescriptor, ...], incoming: tuple[ViewDescriptor, ...]
) -> tuple[ViewDescriptor, ...]:
    seen = {v.view_id for v in kept}
    return kept + tuple(v for v in incoming if v.view_id not in seen)


def _relocate(inst: ObjectInstance, seen: ObjectInstance) -> ObjectInstance:
    position: Vector3 = seen.position
    views = _merge_views(inst.views, seen.views)
    return inst.model_copy(
        update={
            "position": position,
            "position_history": (*inst.position_history, position),
            "views": views,
            "embedding": inst.embedding if views == inst.views else None,
        }
    )


def apply_change_report(
    ref: SceneSnapshot, cur: SceneSnapshot, report: ChangeReport
) -> SceneSnapshot:
    """Carry the reference graph forward to the current session.

    Matched nodes keep their identity and view library and move to the
    current position; absent nodes are dropped; new nodes are added as
    observed. The result is unclustered.
    """
    check_report(ref, cur, report)
    ref_index = ref.instance_index()
    cur_index = cur.instance_index()

    instances = [
        _relocate(ref_index[p.ref_instance_id], cur_index[p.cur_instance_id])
        for p in report.matched
    ]
    kept_ids = {inst.instance_id for inst in instances}
    collisions = sorted(kept_ids.intersection(report.new))
    if collisions:
        msg = f"New instance ids collide with kept ones: {collisions}"
        raise ReportMismatchError(msg)
    instances.extend(cur_index[instance_id] for instance_id in report.new)

    logger.info(
        "applied report: %d kept, %d removed, %d added",
        len(report.matched),
        len(report.absent),
        len(report.new),
    )
    return SceneSnapshot(
        session_id=cur.session_id,
        time_index=cur.time_index,
        instances=tuple(instances),
    )
