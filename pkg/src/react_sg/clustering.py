import logging
from collections import defaultdict

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .config import ClusterConfig
from .embedding import EmbeddingModel, embed_views
from .errors import DimensionMismatchError, ReactError, SnapshotStateError
from .mining import pairwise_sq_distances
from .models import (
    ErrorCodes,
    InstanceCluster,
    ObjectInstance,
    SceneSnapshot,
)

logger = logging.getLogger(__name__)


def median_embedding(view_embeddings: np.ndarray) -> np.ndarray:
    """Component-wise median; even counts average the two central values."""
    return np.median(np.asarray(view_embeddings, dtype=float), axis=0)


def node_embedding(
    instance: ObjectInstance, model: EmbeddingModel
) -> np.ndarray:
    if not instance.views:
        msg = f"Instance {instance.instance_id} has no views to embed"
        raise ReactError(msg, ErrorCodes.VALIDATION_FAILED)
    view_embeddings = embed_views(model, [v.data for v in instance.views])
    return median_embedding(view_embeddings)


def embed_snapshot(
    snapshot: SceneSnapshot, model: EmbeddingModel
) -> SceneSnapshot:
    """Fill every instance's node embedding from its Instance Memory."""
    instances = tuple(
        inst.model_copy(
            update={"embedding": tuple(node_embedding(inst, model).tolist())}
        )
        for inst in snapshot.instances
    )
    return snapshot.model_copy(update={"instances": instances})


def _embedding_of(item: object) -> np.ndarray:
    if isinstance(item, (InstanceCluster, ObjectInstance)):
        if item.embedding is None:
            msg = f"{item!r} carries no embedding"
            raise SnapshotStateError(msg, ErrorCodes.MISSING_EMBEDDING)
        return np.asarray(item.embedding, dtype=float)
    return np.asarray(item, dtype=float)


def visual_difference(a: object, b: object) -> float:
    """Squared Euclidean distance between two embeddings."""
    f_a, f_b = _embedding_of(a), _embedding_of(b)
    if f_a.shape != f_b.shape:
        msg = f"Embedding shapes differ: {f_a.shape} vs {f_b.shape}"
        raise DimensionMismatchError(msg)
    diff = f_a - f_b
    return float(diff @ diff)


def cluster_embedded(
    snapshot: SceneSnapshot, config: ClusterConfig
) -> SceneSnapshot:
    """Threshold clustering of instances whose node embeddings are set.

    Within each semantic class, nodes closer than gamma (squared distance)
    are linked and every connected component becomes one cluster.
    """
    by_class: dict[str, list[ObjectInstance]] = defaultdict(list)
    for inst in sorted(snapshot.instances, key=lambda i: i.instance_id):
        by_class[inst.semantic_class].append(inst)

    clusters = []
    for semantic_class in sorted(by_class):
        members = by_class[semantic_class]
        vectors = np.stack([_embedding_of(inst) for inst in members])
        linked = pairwise_sq_distances(vectors) <= config.gamma
        _, component = connected_components(
            csr_matrix(linked), directed=False
        )
        for k in range(component.max() + 1):
            group = [m for m, c in zip(members, component) if c == k]
            clusters.append(
                InstanceCluster(
                    cluster_id=f"{snapshot.session_id}/{semantic_class}/{k}",
                    semantic_class=semantic_class,
                    members=tuple(m.instance_id for m in group),
                    embedding=tuple(
                        vectors[component == k].mean(axis=0).tolist()
                    ),
                    view_library=tuple(
                        v.view_id for m in group for v in m.views
                    ),
                )
            )
    logger.info(
        "clustered %d instances of %s into %d clusters (gamma %.3f)",
        len(snapshot.instances),
        snapshot.session_id,
        len(clusters),
        config.gamma,
    )
    return snapshot.model_copy(update={"clusters": tuple(clusters)})


def cluster_snapshot(
    snapshot: SceneSnapshot, model: EmbeddingModel, config: ClusterConfig
) -> SceneSnapshot:
    return cluster_embedded(embed_snapshot(snapshot, model), config)
