from dataclasses import dataclass

import numpy as np
import pytest

from react_sg.config import TrainConfig
from react_sg.embedding import EmbeddingModel, train
from react_sg.models import (
    GroundTruth,
    InstanceCluster,
    ObjectInstance,
    SceneSnapshot,
    ViewDescriptor,
)
from react_sg.react_client import ReactClient
from react_sg.scenegen import (
    build_snapshot,
    generate,
    make_training_set,
    preset,
)


@dataclass(frozen=True)
class TrainedScene:
    ground_truth: GroundTruth
    ref: SceneSnapshot
    cur: SceneSnapshot
    model: EmbeddingModel


@pytest.fixture
def react_client():
    return ReactClient(model_path="model.json", gamma=1.0)


@pytest.fixture
def identity_model():
    """Factory for a linear model that returns its input unchanged."""

    def make(dim: int, *, normalize: bool = False) -> EmbeddingModel:
        return EmbeddingModel(
            layer_dims=(dim, dim),
            weights=(np.eye(dim),),
            biases=(np.zeros(dim),),
            normalize_output=normalize,
        )

    return make


@pytest.fixture
def make_instance():
    """Factory for an instance whose views all carry the given descriptor."""

    def make(
        instance_id: str,
        semantic_class: str,
        position: tuple[float, float, float],
        descriptor: tuple[float, ...],
        n_views: int = 1,
        embedding: tuple[float, ...] | None = None,
    ) -> ObjectInstance:
        views = tuple(
            ViewDescriptor(
                view_id=f"{instance_id}-v{k}", frame_index=k, data=descriptor
            )
            for k in range(n_views)
        )
        inst = ObjectInstance.create(
            instance_id, semantic_class, position, views
        )
        if embedding is not None:
            inst = inst.model_copy(update={"embedding": embedding})
        return inst

    return make


@pytest.fixture
def clustered_snapshot():
    """Factory for a snapshot with one singleton cluster per instance."""

    def make(
        session_id: str, instances: list[ObjectInstance]
    ) -> SceneSnapshot:
        clusters = tuple(
            InstanceCluster(
                cluster_id=f"{session_id}/{inst.instance_id}",
                semantic_class=inst.semantic_class,
                members=(inst.instance_id,),
                embedding=inst.embedding or inst.views[0].data,
                view_library=tuple(v.view_id for v in inst.views),
            )
            for inst in instances
        )
        return SceneSnapshot(
            session_id=session_id,
            time_index=0,
            instances=tuple(instances),
            clusters=clusters,
        )

    return make


@pytest.fixture(scope="session")
def trained_scene():
    """Factory for a preset scene with a model trained on its first session.

    Mirrors ``react-sg gen`` then ``react-sg train`` with default settings
    and ``--seed`` equal to the scene seed. Results are cached per run.
    """
    cache: dict[tuple[str, int], TrainedScene] = {}

    def make(name: str, seed: int = 0) -> TrainedScene:
        if (name, seed) not in cache:
            scenario = generate(preset(name, seed))
            gt = scenario.ground_truth
            split = make_training_set(scenario.sessions[0], gt, 0.15, seed)
            layer_dims = (len(split.train.items[0].data), 128, 64)
            config = TrainConfig(seed=seed, layer_dims=layer_dims)
            model = EmbeddingModel.initialize(layer_dims, seed)
            model, _ = train(model, split.train, config, split.validation)
            cache[name, seed] = TrainedScene(
                ground_truth=gt,
                ref=build_snapshot(scenario.sessions[0], "s1"),
                cur=build_snapshot(scenario.sessions[1], "s2"),
                model=model,
            )
        return cache[name, seed]

    return make
