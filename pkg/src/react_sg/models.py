import math
from enum import Enum, IntEnum

from pydantic import BaseModel, ConfigDict, Field

Vector3 = tuple[float, float, float]


class ReactTools(str, Enum):
    DETECT_CHANGES = "detect_changes"
    VALIDATE_SNAPSHOT = "validate_snapshot"
    CLUSTER_SNAPSHOT = "cluster_snapshot"
    APPLY_CHANGE_REPORT = "apply_change_report"
    SCORE_REPORT = "score_report"


class ErrorCodes(IntEnum):
    VALIDATION_FAILED = 1001
    REPORT_MISMATCH = 1002
    DIMENSION_MISMATCH = 1003
    INFEASIBLE_ASSIGNMENT = 1004
    DIVERGENCE = 1005
    DATASET_TOO_SMALL = 1006
    FILE_READ_ERROR = 1007
    FILE_WRITE_ERROR = 1008
    UNKNOWN_PRESET = 1009
    CAPACITY_EXCEEDED = 1010
    DUPLICATE_VIEW = 1011
    UNCLUSTERED_SNAPSHOT = 1012
    MISSING_EMBEDDING = 1013
    SIZE_LIMIT = 1014


class Method(str, Enum):
    REACT = "react"
    GREEDY = "greedy"


class Distance(str, Enum):
    EUCLIDEAN = "euclidean"


class DescriptorMode(str, Enum):
    ABSTRACT = "abstract"
    PATCH = "patch"


class ViewDescriptor(BaseModel):
    """One appearance observation, kept in an object's Instance Memory."""

    model_config = ConfigDict(frozen=True)

    view_id: str
    frame_index: int = Field(ge=0)
    data: tuple[float, ...]


class ObjectInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    instance_id: str
    semantic_class: str
    position: Vector3
    position_history: tuple[Vector3, ...]
    views: tuple[ViewDescriptor, ...] = ()
    embedding: tuple[float, ...] | None = None

    @classmethod
    def create(
        cls,
        instance_id: str,
        semantic_class: str,
        position: Vector3,
        views: tuple[ViewDescriptor, ...] = (),
    ) -> "ObjectInstance":
        position = tuple(float(c) for c in position)
        return cls(
            instance_id=instance_id,
            semantic_class=semantic_class,
            position=position,
            position_history=(position,),
            views=views,
        )


class InstanceCluster(BaseModel):
    """Visually identical instances sharing one averaged embedding.

    ``view_library`` holds the view ids of every member so the merged
    library can be resolved against the snapshot without copying data.
    """

    model_config = ConfigDict(frozen=True)

    cluster_id: str
    semantic_class: str
    members: tuple[str, ...]
    embedding: tuple[float, ...]
    view_library: tuple[str, ...] = ()


class SceneSnapshot(BaseModel):
    model_config = ConfigDict(frozen=True)

    session_id: str
    time_index: int
    instances: tuple[ObjectInstance, ...] = ()
    clusters: tuple[InstanceCluster, ...] = ()

    @property
    def is_clustered(self) -> bool:
        return bool(self.clusters) or not self.instances

    def instance_index(self) -> dict[str, ObjectInstance]:
        return {inst.instance_id: inst for inst in self.instances}

    def cluster_index(self) -> dict[str, InstanceCluster]:
        return {cluster.cluster_id: cluster for cluster in self.clusters}


class MatchedPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    ref_instance_id: str
    cur_instance_id: str
    travel_distance: float = Field(ge=0.0)


class ChangeReport(BaseModel):
    """Matched/Absent/New decomposition between two snapshots."""

    model_config = ConfigDict(frozen=True)

    matched: tuple[MatchedPair, ...] = ()
    absent: tuple[str, ...] = ()
    new: tuple[str, ...] = ()
    total_distance: float = Field(default=0.0, ge=0.0)
    method: Method = Method.REACT
    gamma: float | None = None

    @classmethod
    def build(
        cls,
        matched: list[MatchedPair],
        absent: set[str],
        new: set[str],
        method: Method = Method.REACT,
        gamma: float | None = None,
    ) -> "ChangeReport":
        matched = sorted(
            matched, key=lambda p: (p.ref_instance_id, p.cur_instance_id)
        )
        return cls(
            matched=tuple(matched),
            absent=tuple(sorted(absent)),
            new=tuple(sorted(new)),
            total_distance=math.fsum(p.travel_distance for p in matched),
            method=method,
            gamma=gamma,
        )


class Observation(BaseModel):
    """A segmented view with its observed position.

    Carries no ground-truth identity; the generator keeps that in
    ``GroundTruth.view_owner``.
    """

    model_config = ConfigDict(frozen=True)

    semantic_class: str
    position: Vector3
    view: ViewDescriptor


class Frame(BaseModel):
    model_config = ConfigDict(frozen=True)

    session_id: str
    frame_index: int = Field(ge=0)
    observations: tuple[Observation, ...] = ()


class GroundTruthTransition(BaseModel):
    model_config = ConfigDict(frozen=True)

    ref_session: str
    cur_session: str
    matched: tuple[str, ...]
    absent: tuple[str, ...]
    new: tuple[str, ...]
    displacement: dict[str, float]


class GroundTruth(BaseModel):
    """Hidden identities of a generated scenario.

    Only the generator and the evaluation code read this.
    """

    model_config = ConfigDict(frozen=True)

    sessions: tuple[str, ...]
    instance_category: dict[str, str]
    instance_class: dict[str, str]
    session_instances: dict[str, tuple[str, ...]]
    positions: dict[str, dict[str, Vector3]]
    view_owner: dict[str, str]
    transitions: tuple[GroundTruthTransition, ...]
    schema_version: int = 1

    def transition(
        self, ref_session: str, cur_session: str
    ) -> GroundTruthTransition | None:
        for transition in self.transitions:
            if (
                transition.ref_session == ref_session
                and transition.cur_session == cur_session
            ):
                return transition
        return None


class LabeledView(BaseModel):
    model_config = ConfigDict(frozen=True)

    data: tuple[float, ...]
    label: str


class TripletDataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    items: tuple[LabeledView, ...] = ()

    def labels(self) -> list[str]:
        return [item.label for item in self.items]

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for item in self.items:
            counts[item.label] = counts.get(item.label, 0) + 1
        return counts


class EvalResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: Method
    gamma: float
    f1_matched: float = Field(ge=0.0, le=1.0)
    f1_new: float = Field(ge=0.0, le=1.0)
    f1_absent: float = Field(ge=0.0, le=1.0)
    sum_distance: float = Field(ge=0.0)
    fully_matched: bool = False

    @property
    def aggregate_f1(self) -> float:
        return self.f1_matched + self.f1_new + self.f1_absent


class SnapshotValidation(BaseModel):
    session_id: str
    valid: bool
    violations: list[str]
