import logging
import time
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel

from .clustering import cluster_embedded, median_embedding
from .config import AssociationConfig, ClusterConfig, MatchConfig
from .embedding import EmbeddingModel, embed
from .errors import DuplicateViewError, SnapshotStateError
from .matching import detect_changes
from .models import ChangeReport, ErrorCodes, Frame, SceneSnapshot
from .scenegen import Associator

logger = logging.getLogger(__name__)


class EmbeddingLibrary:
    """Append-only cache of view embeddings keyed by view id."""

    def __init__(self) -> None:
        self._entries: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, view_id: object) -> bool:
        return view_id in self._entries

    def add(self, view_id: str, embedding: np.ndarray) -> None:
        if view_id in self._entries:
            msg = f"View {view_id} is already in the embedding library"
            raise DuplicateViewError(msg)
        self._entries[view_id] = np.asarray(embedding, dtype=float)

    def get(self, view_id: str) -> np.ndarray:
        return self._entries[view_id]


class StageTimings(BaseModel):
    embed_ms: float = 0.0
    associate_ms: float = 0.0
    cluster_ms: float = 0.0
    match_ms: float = 0.0


class FrameRecord(BaseModel):
    """One line of the interim report log."""

    frame_index: int
    views_embedded: int
    instances: int
    report: ChangeReport | None
    timings: StageTimings


@dataclass
class OnlineState:
    reference: SceneSnapshot
    model: EmbeddingModel
    cluster_config: ClusterConfig
    match_config: MatchConfig
    associator: Associator
    library: EmbeddingLibrary = field(default_factory=EmbeddingLibrary)
    current: SceneSnapshot | None = None
    last_report: ChangeReport | None = None
    frames_processed: int = 0
    embed_calls: int = 0
    records: list[FrameRecord] = field(default_factory=list)


def init(
    reference: SceneSnapshot,
    model: EmbeddingModel,
    gamma: float,
    session_id: str,
    association: AssociationConfig | None = None,
) -> OnlineState:
    if not reference.is_clustered:
        msg = f"Reference {reference.session_id} must be clustered"
        raise SnapshotStateError(msg, ErrorCodes.UNCLUSTERED_SNAPSHOT)
    return OnlineState(
        reference=reference,
        model=model,
        cluster_config=ClusterConfig(gamma=gamma),
        match_config=MatchConfig(gamma=gamma),
        associator=Associator(session_id, association or AssociationConfig()),
    )


def _check_new_views(state: OnlineState, frame: Frame) -> None:
    seen: set[str] = set()
    for obs in frame.observations:
        view_id = obs.view.view_id
        if view_id in state.library or view_id in seen:
            msg = f"View {view_id} was already processed"
            raise DuplicateViewError(msg)
        seen.add(view_id)


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def _embedded_snapshot(state: OnlineState) -> SceneSnapshot:
    snapshot = state.associator.snapshot(state.frames_processed)
    instances = tuple(
        inst.model_copy(
            update={
                "embedding": tuple(
                    median_embedding(
                        [state.library.get(v.view_id) for v in inst.views]
                    ).tolist()
                )
            }
        )
        for inst in snapshot.instances
    )
    return snapshot.model_copy(update={"instances": instances})


def process_frame(state: OnlineState, frame: Frame) -> OnlineState:
    """Fold one frame into the current graph and refresh the report."""
    if not frame.observations:
        state.frames_processed += 1
        state.records.append(
            FrameRecord(
                frame_index=frame.frame_index,
                views_embedded=0,
                instances=len(state.associator.nodes),
                report=state.last_report,
                timings=StageTimings(),
            )
        )
        return state
    _check_new_views(state, frame)
    timings = StageTimings()

    start = time.perf_counter()
    for obs in frame.observations:
        state.library.add(obs.view.view_id, embed(state.model, obs.view.data))
        state.embed_calls += 1
    timings.embed_ms = _ms(start)

    start = time.perf_counter()
    for obs in frame.observations:
        state.associator.observe(obs)
    timings.associate_ms = _ms(start)

    start = time.perf_counter()
    state.current = cluster_embedded(
        _embedded_snapshot(state), state.cluster_config
    )
    timings.cluster_ms = _ms(start)

    start = time.perf_counter()
    state.last_report = detect_changes(
        state.reference, state.current, state.match_config
    )
    timings.match_ms = _ms(start)

    state.frames_processed += 1
    state.records.append(
        FrameRecord(
            frame_index=frame.frame_index,
            views_embedded=len(frame.observations),
            instances=len(state.current.instances),
            report=state.last_report,
            timings=timings,
        )
    )
    logger.debug(
        "frame %d: embed %.2f ms, associate %.2f ms, cluster %.2f ms, "
        "match %.2f ms",
        frame.frame_index,
        timings.embed_ms,
        timings.associate_ms,
        timings.cluster_ms,
        timings.match_ms,
    )
    return state


def finalize(state: OnlineState) -> ChangeReport:
    """Latest report; with no observations every reference node is absent."""
    if state.last_report is not None:
        return state.last_report
    empty = SceneSnapshot(
        session_id=state.associator.session_id,
        time_index=state.frames_processed,
    )
    return detect_changes(state.reference, empty, state.match_config)


def run_online(
    reference: SceneSnapshot,
    model: EmbeddingModel,
    frames: list[Frame],
    gamma: float,
    association: AssociationConfig | None = None,
) -> tuple[ChangeReport, OnlineState]:
    session_id = frames[0].session_id if frames else "online"
    state = init(reference, model, gamma, session_id, association)
    for frame in frames:
        process_frame(state, frame)
    report = finalize(state)
    logger.info(
        "online run over %d frames: %d views embedded once each",
        state.frames_processed,
        state.embed_calls,
    )
    return report, state
