"""Synthetic multi-session scenes with identical-object groups.

Every visual category owns a prototype descriptor and two viewpoint
directions. A view is ``prototype + a * (cos t * u + sin t * w)`` followed
by Gaussian noise and occlusion (zeroed coordinates). With unit-variance
prototypes, views stay closer to their own prototype than to any other
one while ``noise_amplitude**2 + viewpoint_amplitude**2`` stays below 0.5
and the occlusion fraction below 0.5.
"""

import logging
import math
from collections import Counter, defaultdict
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .augment import perturb_descriptor
from .config import DEFAULT_DESCRIPTOR_DIM, AssociationConfig
from .errors import DatasetTooSmallError, ScenarioError
from .models import (
    DescriptorMode,
    ErrorCodes,
    Frame,
    GroundTruth,
    GroundTruthTransition,
    LabeledView,
    ObjectInstance,
    Observation,
    SceneSnapshot,
    TripletDataset,
    Vector3,
    ViewDescriptor,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SESSIONS = ("s1", "s2")
PLACEMENT_ATTEMPTS = 2000
NOISE_TRUNCATION = 2.5


def category_id(semantic_class: str, visual_category: int) -> str:
    return f"{semantic_class}:{visual_category}"


class CategorySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    semantic_class: str
    visual_category: int = 1
    count: int = Field(default=1, ge=1)


class Selector(BaseModel):
    """The first ``count`` present instances of a category, by id."""

    model_config = ConfigDict(frozen=True)

    semantic_class: str
    visual_category: int = 1
    count: int = Field(default=1, ge=1)


def _finite_vector(value: Vector3) -> Vector3:
    if not all(math.isfinite(c) for c in value):
        msg = f"Vector must be finite: {value}"
        raise ValueError(msg)
    return value


class MoveStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["move"] = "move"
    selector: Selector
    displacement: Vector3

    _check = field_validator("displacement")(_finite_vector)


class RemoveStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["remove"] = "remove"
    selector: Selector


class AddStep(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["add"] = "add"
    semantic_class: str
    visual_category: int = 1
    count: int = Field(default=1, ge=1)
    position: Vector3 | None = None


ChangeStep = Annotated[
    MoveStep | RemoveStep | AddStep, Field(discriminator="kind")
]


class ViewModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    views_min: int = Field(default=3, ge=2)
    views_max: int = Field(default=6, ge=2)
    mode: DescriptorMode = DescriptorMode.ABSTRACT
    descriptor_dim: int = Field(default=DEFAULT_DESCRIPTOR_DIM, ge=1)
    patch_height: int = 8
    patch_width: int = 8
    patch_channels: int = 3
    noise_amplitude: float = Field(default=0.05, ge=0.0)
    viewpoint_amplitude: float = Field(default=0.2, ge=0.0)
    occlusion_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    position_noise: float = Field(default=0.02, ge=0.0)
    observations_per_frame: int = Field(default=8, ge=1)


class Arena(BaseModel):
    model_config = ConfigDict(frozen=True)

    width: float = Field(default=10.0, gt=0.0)
    depth: float = Field(default=8.0, gt=0.0)


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    schema_version: int = SCHEMA_VERSION
    name: str = "custom"
    categories: tuple[CategorySpec, ...]
    change_script: tuple[ChangeStep, ...] = ()
    view_model: ViewModel = Field(default_factory=ViewModel)
    arena: Arena = Field(default_factory=Arena)
    min_separation: float = Field(default=1.0, gt=0.0)
    seed: int = 0


class Scenario(BaseModel):
    """Generated frames per session plus the hidden ground truth."""

    spec: ScenarioSpec
    sessions: tuple[tuple[Frame, ...], ...]
    ground_truth: GroundTruth


class TrainingSplit(BaseModel):
    train: TripletDataset
    validation: TripletDataset


class _Appearance:
    def __init__(self, spec: ScenarioSpec, categories: list[str]) -> None:
        vm = spec.view_model
        self.view_model = vm
        dim = self._dim()
        rng = np.random.default_rng([spec.seed, 1])
        self.prototypes: dict[str, np.ndarray] = {}
        self.directions: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for cat in sorted(categories):
            if vm.mode == DescriptorMode.PATCH:
                self.prototypes[cat] = self._raster(rng)
            else:
                self.prototypes[cat] = rng.standard_normal(dim)
            self.directions[cat] = (
                rng.standard_normal(dim),
                rng.standard_normal(dim),
            )

    def _dim(self) -> int:
        vm = self.view_model
        if vm.mode == DescriptorMode.PATCH:
            return vm.patch_height * vm.patch_width * vm.patch_channels
        return vm.descriptor_dim

    def _raster(self, rng: np.random.Generator) -> np.ndarray:
        vm = self.view_model
        rows, cols = np.mgrid[0 : vm.patch_height, 0 : vm.patch_width]
        raster = np.zeros((vm.patch_height, vm.patch_width, vm.patch_channels))
        for _ in range(3):
            cy = rng.uniform(0, vm.patch_height - 1)
            cx = rng.uniform(0, vm.patch_width - 1)
            width = rng.uniform(1.0, 3.0)
            blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / width**2)
            raster += blob[..., None] * rng.uniform(-1, 1, vm.patch_channels)
        raster -= raster.mean()
        return (raster / (raster.std() or 1.0)).ravel()

    def view(self, cat: str, rng: np.random.Generator) -> np.ndarray:
        vm = self.view_model
        u, w = self.directions[cat]
        angle = rng.uniform(-math.pi, math.pi)
        base = self.prototypes[cat] + vm.viewpoint_amplitude * (
            math.cos(angle) * u + math.sin(angle) * w
        )
        return perturb_descriptor(
            base, rng, vm.noise_amplitude, vm.occlusion_fraction
        )


def _place(
    rng: np.random.Generator,
    spec: ScenarioSpec,
    occupied: list[np.ndarray],
) -> np.ndarray:
    for _ in range(PLACEMENT_ATTEMPTS):
        candidate = np.array(
            [
                rng.uniform(0.0, spec.arena.width),
                rng.uniform(0.0, spec.arena.depth),
                0.0,
            ]
        )
        if all(
            np.linalg.norm(candidate - p) >= spec.min_separation
            for p in occupied
        ):
            return candidate
    msg = (
        f"Cannot place {len(occupied) + 1} objects {spec.min_separation} m "
        f"apart in a {spec.arena.width}x{spec.arena.depth} m arena"
    )
    raise ScenarioError(msg, ErrorCodes.CAPACITY_EXCEEDED)


def _truncated_noise(rng: np.random.Generator, sigma: float) -> np.ndarray:
    """Planar Gaussian noise, redrawn until within 2.5 sigma."""
    if sigma == 0.0:
        return np.zeros(3)
    while True:
        offset = rng.normal(0.0, sigma, 2)
        if np.linalg.norm(offset) <= NOISE_TRUNCATION * sigma:
            return np.array([offset[0], offset[1], 0.0])


def _select(
    present: dict[str, np.ndarray],
    categories: dict[str, str],
    selector: Selector,
) -> list[str]:
    wanted = category_id(selector.semantic_class, selector.visual_category)
    ids = sorted(i for i in present if categories[i] == wanted)
    if len(ids) < selector.count:
        msg = f"Selector wants {selector.count} of {wanted}, found {len(ids)}"
        raise ScenarioError(msg, ErrorCodes.VALIDATION_FAILED)
    return ids[: selector.count]


def _observe(
    session_id: str,
    positions: dict[str, np.ndarray],
    categories: dict[str, str],
    classes: dict[str, str],
    appearance: _Appearance,
    rng: np.random.Generator,
) -> tuple[tuple[Frame, ...], dict[str, str]]:
    vm = appearance.view_model
    patrol = sorted(positions, key=lambda i: (*positions[i][:2], i))
    n_views = {
        i: int(rng.integers(vm.views_min, max(vm.views_min, vm.views_max) + 1))
        for i in patrol
    }
    schedule = [
        instance_id
        for round_index in range(max(n_views.values(), default=0))
        for instance_id in patrol
        if round_index < n_views[instance_id]
    ]

    owners: dict[str, str] = {}
    frames = []
    for frame_index, start in enumerate(
        range(0, len(schedule), vm.observations_per_frame)
    ):
        observations = []
        for instance_id in schedule[start : start + vm.observations_per_frame]:
            view_id = f"{session_id}-v{len(owners):05d}"
            owners[view_id] = instance_id
            observed = positions[instance_id] + _truncated_noise(
                rng, vm.position_noise
            )
            observations.append(
                Observation(
                    semantic_class=classes[instance_id],
                    position=tuple(observed.tolist()),
                    view=ViewDescriptor(
                        view_id=view_id,
                        frame_index=frame_index,
                        data=tuple(
                            appearance.view(
                                categories[instance_id], rng
                            ).tolist()
                        ),
                    ),
                )
            )
        frames.append(
            Frame(
                session_id=session_id,
                frame_index=frame_index,
                observations=tuple(observations),
            )
        )
    return tuple(frames), owners


def generate(spec: ScenarioSpec) -> Scenario:
    """Two observed sessions of a scene, the second derived by the script."""
    rng = np.random.default_rng(spec.seed)
    categories: dict[str, str] = {}
    classes: dict[str, str] = {}
    counters: dict[str, int] = defaultdict(int)

    def new_id(semantic_class: str, visual_category: int) -> str:
        cat = category_id(semantic_class, visual_category)
        counters[cat] += 1
        instance_id = f"{semantic_class}-{visual_category}-{counters[cat]:02d}"
        categories[instance_id] = cat
        classes[instance_id] = semantic_class
        return instance_id

    first: dict[str, np.ndarray] = {}
    for category in spec.categories:
        for _ in range(category.count):
            instance_id = new_id(
                category.semantic_class, category.visual_category
            )
            first[instance_id] = _place(rng, spec, list(first.values()))

    second = {k: v.copy() for k, v in first.items()}
    for step in spec.change_script:
        if isinstance(step, RemoveStep):
            for instance_id in _select(second, categories, step.selector):
                del second[instance_id]
        elif isinstance(step, MoveStep):
            for instance_id in _select(second, categories, step.selector):
                second[instance_id] = second[instance_id] + np.asarray(
                    step.displacement
                )
        else:
            for _ in range(step.count):
                occupied = [*first.values(), *second.values()]
                instance_id = new_id(step.semantic_class, step.visual_category)
                second[instance_id] = (
                    np.asarray(step.position, dtype=float)
                    if step.position is not None
                    else _place(rng, spec, occupied)
                )

    appearance = _Appearance(spec, sorted(set(categories.values())))
    frames_1, owners_1 = _observe(
        SESSIONS[0], first, categories, classes, appearance, rng
    )
    frames_2, owners_2 = _observe(
        SESSIONS[1], second, categories, classes, appearance, rng
    )

    matched = sorted(first.keys() & second.keys())
    transition = GroundTruthTransition(
        ref_session=SESSIONS[0],
        cur_session=SESSIONS[1],
        matched=tuple(matched),
        absent=tuple(sorted(first.keys() - second.keys())),
        new=tuple(sorted(second.keys() - first.keys())),
        displacement={
            i: float(np.linalg.norm(second[i] - first[i])) for i in matched
        },
    )
    ground_truth = GroundTruth(
        sessions=SESSIONS,
        instance_category=dict(sorted(categories.items())),
        instance_class=dict(sorted(classes.items())),
        session_instances={
            SESSIONS[0]: tuple(sorted(first)),
            SESSIONS[1]: tuple(sorted(second)),
        },
        positions={
            SESSIONS[0]: {k: tuple(v.tolist()) for k, v in first.items()},
            SESSIONS[1]: {k: tuple(v.tolist()) for k, v in second.items()},
        },
        view_owner={**owners_1, **owners_2},
        transitions=(transition,),
    )
    logger.info(
        "generated %s: %d -> %d objects, %d absent, %d new",
        spec.name,
        len(first),
        len(second),
        len(transition.absent),
        len(transition.new),
    )
    return Scenario(
        spec=spec, sessions=(frames_1, frames_2), ground_truth=ground_truth
    )


def make_training_set(
    frames: tuple[Frame, ...] | list[Frame],
    gt: GroundTruth,
    validation_fraction: float = 0.15,
    seed: int = 0,
) -> TrainingSplit:
    """Views labelled by visual category, split per label."""
    by_label: dict[str, list[ViewDescriptor]] = defaultdict(list)
    for frame in frames:
        for obs in frame.observations:
            owner = gt.view_owner.get(obs.view.view_id)
            if owner is None:
                msg = f"View {obs.view.view_id} is not covered by ground truth"
                raise DatasetTooSmallError(msg, ErrorCodes.VALIDATION_FAILED)
            by_label[gt.instance_category[owner]].append(obs.view)

    min_labels = 2
    if len(by_label) < min_labels:
        msg = f"Need at least 2 visual categories, got {len(by_label)}"
        raise DatasetTooSmallError(msg)

    rng = np.random.default_rng(seed)
    train, validation = [], []
    for label in sorted(by_label):
        views = sorted(by_label[label], key=lambda v: v.view_id)
        if len(views) < min_labels:
            msg = f"Category {label} has fewer than 2 views"
            raise DatasetTooSmallError(msg)
        n_val = min(
            math.floor(validation_fraction * len(views)),
            len(views) - min_labels,
        )
        held_out = set(rng.permutation(len(views))[:n_val].tolist())
        for k, view in enumerate(views):
            item = LabeledView(data=view.data, label=label)
            (validation if k in held_out else train).append(item)
    return TrainingSplit(
        train=TripletDataset(items=tuple(train)),
        validation=TripletDataset(items=tuple(validation)),
    )


def _categories(*entries: tuple[str, int, int]) -> tuple[CategorySpec, ...]:
    return tuple(
        CategorySpec(semantic_class=c, visual_category=v, count=n)
        for c, v, n in entries
    )


def _remove(semantic_class: str, visual: int, count: int = 1) -> RemoveStep:
    return RemoveStep(
        selector=Selector(
            semantic_class=semantic_class, visual_category=visual, count=count
        )
    )


def _add(semantic_class: str, visual: int = 1, count: int = 1) -> AddStep:
    return AddStep(
        semantic_class=semantic_class, visual_category=visual, count=count
    )


def _move(
    semantic_class: str, visual: int, displacement: Vector3, count: int = 1
) -> MoveStep:
    return MoveStep(
        selector=Selector(
            semantic_class=semantic_class, visual_category=visual, count=count
        ),
        displacement=displacement,
    )


def presets() -> dict[str, ScenarioSpec]:
    """Scene compositions and change sets of the four evaluation scenes.

    Geometry is synthesized; only what exists and what changes is fixed.
    """
    flat = ScenarioSpec(
        name="flat",
        categories=_categories(
            ("chair", 1, 2),
            ("table", 1, 1),
            ("table", 2, 1),
            ("picture", 1, 2),
            ("picture", 2, 2),
            ("picture", 3, 1),
            ("picture", 4, 1),
            ("picture", 5, 1),
            ("bed", 1, 1),
            ("lamp", 1, 1),
            ("journal", 1, 1),
            ("journal", 2, 1),
        ),
        change_script=(
            _move("chair", 1, (0.25, 0.1, 0.0)),
            _move("table", 1, (0.0, -0.2, 0.0)),
            _remove("journal", 2),
            _remove("bed", 1),
            _add("chair", 2),
            _add("journal", 3),
            _add("bed", 2),
            _add("table", 3),
            _add("laptop"),
            _add("coffee_machine"),
        ),
        arena=Arena(width=10.0, depth=8.0),
    )
    labfront = ScenarioSpec(
        name="labfront",
        categories=_categories(("chair", 1, 15), ("table", 1, 3)),
        change_script=(
            _move("chair", 1, (0.2, 0.15, 0.0), count=4),
            _remove("chair", 1, count=3),
            _add("chair", 2),
            _add("chair", 3),
            _add("chair", 4),
        ),
        arena=Arena(width=14.0, depth=10.0),
    )
    coffeeroom = ScenarioSpec(
        name="coffeeroom",
        categories=_categories(
            ("chair", 1, 7),
            ("chair", 2, 1),
            ("chair", 3, 2),
            ("table", 1, 1),
            ("table", 2, 1),
            ("table", 3, 1),
            ("couch", 1, 2),
        ),
        change_script=(
            _move("chair", 1, (-0.25, 0.1, 0.0), count=3),
            _move("couch", 1, (0.15, 0.0, 0.0)),
            _remove("chair", 1),
            _remove("chair", 3),
            _add("chair", 4),
            _add("chair", 5),
        ),
        arena=Arena(width=10.0, depth=8.0),
    )
    studyhall = ScenarioSpec(
        name="studyhall",
        categories=_categories(
            ("chair", 1, 25),
            ("chair", 2, 3),
            ("chair", 3, 2),
            ("table", 1, 10),
            ("table", 2, 1),
            ("couch", 1, 2),
        ),
        change_script=(
            _move("chair", 1, (0.2, -0.2, 0.0), count=8),
            _move("table", 1, (0.1, 0.2, 0.0), count=2),
            _remove("chair", 2),
            _remove("chair", 3, count=2),
            _remove("table", 1),
            _remove("couch", 1),
            _add("chair", 1, count=2),
            _add("chair", 4),
        ),
        arena=Arena(width=20.0, depth=14.0),
    )
    return {s.name: s for s in (flat, labfront, coffeeroom, studyhall)}


def preset(name: str, seed: int | None = None) -> ScenarioSpec:
    specs = presets()
    if name not in specs:
        msg = f"Unknown preset {name!r}; choose from {', '.join(sorted(specs))}"
        raise ScenarioError(msg, ErrorCodes.UNKNOWN_PRESET)
    spec = specs[name]
    return spec if seed is None else spec.model_copy(update={"seed": seed})


class _Node:
    def __init__(self, instance_id: str, obs: Observation) -> None:
        self.instance_id = instance_id
        self.semantic_class = obs.semantic_class
        self.observed: list[Vector3] = [obs.position]
        self.views: list[ViewDescriptor] = [obs.view]
        self.position = np.asarray(obs.position, dtype=float)

    def add(self, obs: Observation) -> None:
        self.observed.append(obs.position)
        self.views.append(obs.view)
        self.position = np.mean(np.asarray(self.observed, dtype=float), axis=0)

    def descriptor_gap(self, data: np.ndarray) -> float:
        """Smallest RMS difference to any stored view."""
        return min(
            float(np.sqrt(np.mean((np.asarray(v.data) - data) ** 2)))
            if len(v.data) == data.size
            else math.inf
            for v in self.views
        )

    def to_instance(self) -> ObjectInstance:
        position = tuple(float(c) for c in self.position)
        return ObjectInstance(
            instance_id=self.instance_id,
            semantic_class=self.semantic_class,
            position=position,
            position_history=(position,),
            views=tuple(self.views),
        )


class Associator:
    """Attach observations to object nodes of one session.

    An observation joins the nearest same-class node whose mean position
    lies within the radius and one of whose views passes the descriptor
    gate; otherwise it opens a new node. Nodes are never removed.
    """

    def __init__(self, session_id: str, config: AssociationConfig) -> None:
        self.session_id = session_id
        self.config = config
        self.nodes: list[_Node] = []

    def observe(self, obs: Observation) -> str:
        data = np.asarray(obs.view.data, dtype=float)
        here = np.asarray(obs.position, dtype=float)
        best: _Node | None = None
        best_distance = math.inf
        for node in self.nodes:
            if node.semantic_class != obs.semantic_class:
                continue
            distance = float(np.linalg.norm(node.position - here))
            if distance > self.config.radius or distance >= best_distance:
                continue
            if node.descriptor_gap(data) <= self.config.descriptor_gate:
                best, best_distance = node, distance
        if best is None:
            best = _Node(f"{self.session_id}/obj-{len(self.nodes):04d}", obs)
            self.nodes.append(best)
        else:
            best.add(obs)
        return best.instance_id

    def snapshot(self, time_index: int) -> SceneSnapshot:
        return SceneSnapshot(
            session_id=self.session_id,
            time_index=time_index,
            instances=tuple(node.to_instance() for node in self.nodes),
        )


def build_snapshot(
    frames: tuple[Frame, ...] | list[Frame],
    session_id: str,
    time_index: int = 0,
    association: AssociationConfig | None = None,
) -> SceneSnapshot:
    """Aggregate a whole session offline; unclustered result."""
    associator = Associator(session_id, association or AssociationConfig())
    for frame in frames:
        for obs in frame.observations:
            associator.observe(obs)
    snapshot = associator.snapshot(time_index)
    logger.info(
        "built %s from %d frames: %d instances",
        session_id,
        len(frames),
        len(snapshot.instances),
    )
    return snapshot


def resolve_identities(
    snapshot: SceneSnapshot, gt: GroundTruth
) -> dict[str, str]:
    """Map snapshot instances to hidden identities by majority of views."""
    resolved = {}
    for inst in snapshot.instances:
        votes = Counter(
            gt.view_owner[v.view_id]
            for v in inst.views
            if v.view_id in gt.view_owner
        )
        if votes:
            top = max(votes.values())
            resolved[inst.instance_id] = min(
                owner for owner, n in votes.items() if n == top
            )
    return resolved
