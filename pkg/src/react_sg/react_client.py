import json
import logging
import sys
from collections.abc import Iterator
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, ValidationError

from .clustering import cluster_snapshot, embed_snapshot
from .config import AssociationConfig, ClusterConfig, MatchConfig
from .embedding import EmbeddingModel, ModelFile
from .errors import ReactError, StorageError
from .evaluation import score
from .matching import run_detector
from .models import (
    ChangeReport,
    ErrorCodes,
    EvalResult,
    Frame,
    GroundTruth,
    Method,
    SceneSnapshot,
    SnapshotValidation,
    TripletDataset,
)
from .scene import apply_change_report, validate_snapshot
from .scenegen import SESSIONS, Scenario, ScenarioSpec, build_snapshot

logger = logging.getLogger(__name__)

T = TypeVar("T", bound=BaseModel)

SPEC_FILE = "scenario.json"
GROUND_TRUTH_FILE = "ground_truth.json"


def frames_file(session_id: str) -> str:
    return f"frames_{session_id}.jsonl"


def snapshot_file(session_id: str) -> str:
    return f"snapshot_{session_id}.json"


class ReactClient:
    """File-level access to snapshots, reports, models and scenarios."""

    def __init__(
        self, model_path: str | None = None, gamma: float = 1.0
    ) -> None:
        self.model_path = model_path
        self.gamma = gamma

    def raise_missing_argument_error(self, name: str) -> None:
        msg = f"Missing required argument: {name}"
        raise ValueError(msg)

    def raise_unknown_tool_error(self, name: str) -> None:
        msg = f"Unknown tool: {name}"
        raise ValueError(msg)

    def _read_file_contents(self, file_path: str) -> str:
        try:
            with Path(file_path).open() as f:
                return f.read()
        except Exception as e:
            msg = f"Failed to read file {file_path}: {e!s}"
            raise StorageError(msg, ErrorCodes.FILE_READ_ERROR) from e

    def _write_file_contents(self, file_path: str, content: str) -> None:
        try:
            path = Path(file_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w") as f:
                f.write(content)
        except Exception as e:
            msg = f"Failed to write file {file_path}: {e!s}"
            raise StorageError(msg, ErrorCodes.FILE_WRITE_ERROR) from e

    def _parse(self, model: type[T], content: str, source: str) -> T:
        try:
            return model.model_validate_json(content)
        except ValidationError as e:
            msg = f"Invalid {model.__name__} in {source}: {e}"
            raise ReactError(msg, ErrorCodes.VALIDATION_FAILED) from e

    def _load(self, model: type[T], file_path: str) -> T:
        content = self._read_file_contents(file_path)
        return self._parse(model, content, file_path)

    def _save(self, item: BaseModel, file_path: str) -> None:
        self._write_file_contents(
            file_path, item.model_dump_json(indent=2) + "\n"
        )
        logger.debug("wrote %s", file_path)

    def load_snapshot(self, file_path: str) -> SceneSnapshot:
        return self._load(SceneSnapshot, file_path)

    def save_snapshot(self, snapshot: SceneSnapshot, file_path: str) -> None:
        self._save(snapshot, file_path)

    def load_report(self, file_path: str) -> ChangeReport:
        return self._load(ChangeReport, file_path)

    def save_report(self, report: ChangeReport, file_path: str) -> None:
        self._save(report, file_path)

    def load_dataset(self, file_path: str) -> TripletDataset:
        return self._load(TripletDataset, file_path)

    def save_dataset(self, dataset: TripletDataset, file_path: str) -> None:
        self._save(dataset, file_path)

    def load_ground_truth(self, file_path: str) -> GroundTruth:
        return self._load(GroundTruth, file_path)

    def load_scenario_spec(self, file_path: str) -> ScenarioSpec:
        return self._load(ScenarioSpec, file_path)

    def load_labels(self, file_path: str) -> dict[str, str]:
        """Manual instance id to label assignments."""
        content = self._read_file_contents(file_path)
        try:
            labels = json.loads(content)
        except json.JSONDecodeError as e:
            msg = f"Labels file {file_path} is not JSON: {e!s}"
            raise ReactError(msg, ErrorCodes.VALIDATION_FAILED) from e
        if not isinstance(labels, dict):
            msg = f"Labels file {file_path} must hold a JSON object"
            raise ReactError(msg, ErrorCodes.VALIDATION_FAILED)
        return {str(k): str(v) for k, v in labels.items()}

    def load_model(self, file_path: str | None = None) -> EmbeddingModel:
        path = file_path or self.model_path
        if not path:
            self.raise_missing_argument_error("model_path")
        return EmbeddingModel.from_file(self._load(ModelFile, path))

    def save_model(self, model: EmbeddingModel, file_path: str) -> None:
        self._save(model.to_file(), file_path)

    def _parse_frames(self, lines: list[str], source: str) -> Iterator[Frame]:
        for number, line in enumerate(lines, start=1):
            if line.strip():
                yield self._parse(Frame, line, f"{source}:{number}")

    def read_frames(self, file_path: str) -> list[Frame]:
        """Frames from an NDJSON file, or from stdin for ``-``."""
        if file_path == "-":
            lines = sys.stdin.read().splitlines()
        else:
            lines = self._read_file_contents(file_path).splitlines()
        return list(self._parse_frames(lines, file_path))

    def write_frames(self, frames: tuple[Frame, ...], file_path: str) -> None:
        self._write_file_contents(
            file_path, "".join(f.model_dump_json() + "\n" for f in frames)
        )

    def write_records(self, records: list[BaseModel], file_path: str) -> None:
        self._write_file_contents(
            file_path, "".join(r.model_dump_json() + "\n" for r in records)
        )

    def save_scenario(
        self,
        scenario: Scenario,
        directory: str,
        association: AssociationConfig | None = None,
    ) -> list[str]:
        """Write spec, ground truth, frames and aggregated snapshots."""
        root = Path(directory)
        written = [str(root / SPEC_FILE), str(root / GROUND_TRUTH_FILE)]
        self._save(scenario.spec, written[0])
        self._save(scenario.ground_truth, written[1])
        for time_index, (session_id, frames) in enumerate(
            zip(SESSIONS, scenario.sessions)
        ):
            self.write_frames(frames, str(root / frames_file(session_id)))
            snapshot = build_snapshot(
                frames, session_id, time_index, association
            )
            self.save_snapshot(snapshot, str(root / snapshot_file(session_id)))
            written += [
                str(root / frames_file(session_id)),
                str(root / snapshot_file(session_id)),
            ]
        return written

    def load_scenario(self, directory: str) -> Scenario:
        root = Path(directory)
        return Scenario(
            spec=self.load_scenario_spec(str(root / SPEC_FILE)),
            sessions=tuple(
                tuple(self.read_frames(str(root / frames_file(s))))
                for s in SESSIONS
            ),
            ground_truth=self.load_ground_truth(str(root / GROUND_TRUTH_FILE)),
        )

    def detect_changes(
        self,
        ref_path: str,
        cur_path: str,
        model_path: str | None = None,
        gamma: float | None = None,
        method: Method = Method.REACT,
    ) -> ChangeReport:
        gamma = self.gamma if gamma is None else gamma
        model = self.load_model(model_path)
        ref, cur = self.load_snapshot(ref_path), self.load_snapshot(cur_path)
        if method == Method.GREEDY:
            ref, cur = embed_snapshot(ref, model), embed_snapshot(cur, model)
        else:
            config = ClusterConfig(gamma=gamma)
            ref = cluster_snapshot(ref, model, config)
            cur = cluster_snapshot(cur, model, config)
        return run_detector(method, ref, cur, MatchConfig(gamma=gamma))

    def validate_snapshot(
        self,
        file_path: str,
        descriptor_dim: int | None = None,
        *,
        require_clustered: bool = False,
    ) -> SnapshotValidation:
        snapshot = self.load_snapshot(file_path)
        violations = validate_snapshot(
            snapshot, descriptor_dim, require_clustered=require_clustered
        )
        return SnapshotValidation(
            session_id=snapshot.session_id,
            valid=not violations,
            violations=violations,
        )

    def cluster_snapshot(
        self,
        file_path: str,
        model_path: str | None = None,
        gamma: float | None = None,
        out_path: str | None = None,
    ) -> SceneSnapshot:
        gamma = self.gamma if gamma is None else gamma
        clustered = cluster_snapshot(
            self.load_snapshot(file_path),
            self.load_model(model_path),
            ClusterConfig(gamma=gamma),
        )
        if out_path:
            self.save_snapshot(clustered, out_path)
        return clustered

    def apply_change_report(
        self,
        ref_path: str,
        cur_path: str,
        report_path: str,
        model_path: str | None = None,
        gamma: float | None = None,
        out_path: str | None = None,
    ) -> SceneSnapshot:
        """Carry the reference forward and re-cluster the result."""
        gamma = self.gamma if gamma is None else gamma
        updated = apply_change_report(
            self.load_snapshot(ref_path),
            self.load_snapshot(cur_path),
            self.load_report(report_path),
        )
        clustered = cluster_snapshot(
            updated, self.load_model(model_path), ClusterConfig(gamma=gamma)
        )
        if out_path:
            self.save_snapshot(clustered, out_path)
        return clustered

    def score_report(
        self,
        report_path: str,
        ground_truth_path: str,
        ref_path: str,
        cur_path: str,
    ) -> EvalResult:
        return score(
            self.load_report(report_path),
            self.load_ground_truth(ground_truth_path),
            self.load_snapshot(ref_path),
            self.load_snapshot(cur_path),
        )
