"""Scoring change reports against ground truth, sweeps and benchmarks."""

import itertools
import json
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .clustering import cluster_embedded, embed_snapshot
from .config import ClusterConfig, MatchConfig
from .embedding import EmbeddingModel, embed, embed_views
from .errors import ReportMismatchError
from .matching import detect_changes, greedy_detect_changes
from .mining import pairwise_sq_distances
from .models import (
    ChangeReport,
    EvalResult,
    GroundTruth,
    Method,
    SceneSnapshot,
    TripletDataset,
)
from .scenegen import resolve_identities

logger = logging.getLogger(__name__)

GAMMA_GRID = tuple(round(0.2 * k, 10) for k in range(26))
PLATEAU_TOLERANCE = 0.01
SWEEP_COLUMNS = ["method", "gamma", "f1_m", "f1_n", "f1_a", "sum_distance"]
BENCH_COLUMNS = ["masks", "median_ms", "p95_ms"]
MIN_REPEATS = 30


def f1_score(true_positives: int, predicted: int, actual: int) -> float:
    """F1 with the empty-set convention: both sets empty scores 1.0."""
    if predicted == 0 and actual == 0:
        return 1.0
    if true_positives == 0:
        return 0.0
    precision = true_positives / predicted
    recall = true_positives / actual
    return 2 * precision * recall / (precision + recall)


def score(
    report: ChangeReport,
    gt: GroundTruth,
    ref: SceneSnapshot,
    cur: SceneSnapshot,
) -> EvalResult:
    """F1 of the Matched, New and Absent sets of one report.

    A matched pair counts when both sides resolve to objects of the same
    visual category; identical objects are interchangeable. The report is
    fully matched only when its pairs cover exactly the persisting objects.
    """
    transition = gt.transition(ref.session_id, cur.session_id)
    if transition is None:
        msg = f"No ground truth for {ref.session_id} -> {cur.session_id}"
        raise ReportMismatchError(msg)
    ref_ids = resolve_identities(ref, gt)
    cur_ids = resolve_identities(cur, gt)
    persisting = set(transition.matched)

    matched_tp = complete = 0
    for pair in report.matched:
        a = ref_ids.get(pair.ref_instance_id)
        b = cur_ids.get(pair.cur_instance_id)
        if a is None or b is None:
            continue
        if gt.instance_category[a] == gt.instance_category[b]:
            matched_tp += 1
            if a in persisting and b in persisting:
                complete += 1
    # recall stays within one when removed objects pair with new twins
    matched_tp = min(matched_tp, len(transition.matched))
    new_truth = set(transition.new)
    absent_truth = set(transition.absent)
    new_tp = sum(cur_ids.get(i) in new_truth for i in report.new)
    absent_tp = sum(ref_ids.get(i) in absent_truth for i in report.absent)

    return EvalResult(
        method=report.method,
        gamma=report.gamma if report.gamma is not None else 0.0,
        f1_matched=f1_score(
            matched_tp, len(report.matched), len(transition.matched)
        ),
        f1_new=f1_score(new_tp, len(report.new), len(transition.new)),
        f1_absent=f1_score(
            absent_tp, len(report.absent), len(transition.absent)
        ),
        sum_distance=report.total_distance,
        fully_matched=(
            complete == len(transition.matched) == len(report.matched)
        ),
    )


def sweep(
    ref: SceneSnapshot,
    cur: SceneSnapshot,
    gt: GroundTruth,
    model: EmbeddingModel,
    methods: tuple[Method, ...] = (Method.REACT, Method.GREEDY),
    gamma_grid: tuple[float, ...] = GAMMA_GRID,
) -> list[EvalResult]:
    """Score every method at every gamma; rows ordered by (method, gamma)."""
    ref_embedded = embed_snapshot(ref, model)
    cur_embedded = embed_snapshot(cur, model)
    rows = []
    for method, gamma in itertools.product(methods, sorted(gamma_grid)):
        match_config = MatchConfig(gamma=gamma)
        if method == Method.GREEDY:
            report = greedy_detect_changes(
                ref_embedded, cur_embedded, match_config
            )
        else:
            cluster_config = ClusterConfig(gamma=gamma)
            report = detect_changes(
                cluster_embedded(ref_embedded, cluster_config),
                cluster_embedded(cur_embedded, cluster_config),
                match_config,
            )
        rows.append(score(report, gt, ref, cur))
    for method, best in optimal_rows(rows).items():
        logger.info(
            "%s optimum at gamma %.1f: aggregated F1 %.3f, sum %.3f m",
            method.value,
            best.gamma,
            best.aggregate_f1,
            best.sum_distance,
        )
    return rows


def optimal_rows(rows: list[EvalResult]) -> dict[Method, EvalResult]:
    """Best row per method by aggregated F1; ties go to the lower gamma."""
    best: dict[Method, EvalResult] = {}
    for row in rows:
        current = best.get(row.method)
        if (
            current is None
            or row.aggregate_f1 > current.aggregate_f1
            or (
                row.aggregate_f1 == current.aggregate_f1
                and row.gamma < current.gamma
            )
        ):
            best[row.method] = row
    return best


def plateau_width(
    rows: list[EvalResult],
    method: Method,
    tolerance: float = PLATEAU_TOLERANCE,
) -> int:
    """Gamma values where a method stays near the best score of the sweep.

    The target is the best aggregated F1 reached by any method in
    ``rows``, so a method with a flat but poor curve earns no plateau.
    """
    if not rows:
        return 0
    target = max(r.aggregate_f1 for r in rows)
    return sum(
        r.aggregate_f1 >= target * (1.0 - tolerance)
        for r in rows
        if r.method == method
    )


def mean_rows(sweeps: list[list[EvalResult]]) -> list[EvalResult]:
    """Average several sweeps point by point, e.g. one per scene seed.

    A point is fully matched only when it is in every sweep.
    """
    grouped: dict[tuple[Method, float], list[EvalResult]] = {}
    for row in itertools.chain.from_iterable(sweeps):
        grouped.setdefault((row.method, row.gamma), []).append(row)
    return [
        EvalResult(
            method=method,
            gamma=gamma,
            f1_matched=float(np.mean([r.f1_matched for r in group])),
            f1_new=float(np.mean([r.f1_new for r in group])),
            f1_absent=float(np.mean([r.f1_absent for r in group])),
            sum_distance=float(np.mean([r.sum_distance for r in group])),
            fully_matched=all(r.fully_matched for r in group),
        )
        for (method, gamma), group in grouped.items()
    ]


class RecognitionResult(BaseModel):
    pairs: int
    precision: float
    recall: float
    accuracy: float


def recognition_check(
    model: EmbeddingModel, dataset: TripletDataset, gamma: float
) -> RecognitionResult:
    """Same/different decisions on every view pair at one threshold."""
    if len(dataset.items) < 2:  # noqa: PLR2004
        return RecognitionResult(
            pairs=0, precision=1.0, recall=1.0, accuracy=1.0
        )
    out = embed_views(model, [item.data for item in dataset.items])
    labels = np.asarray(dataset.labels())
    upper = np.triu_indices(len(labels), k=1)
    predicted = (pairwise_sq_distances(out) <= gamma)[upper]
    actual = (labels[:, None] == labels[None, :])[upper]
    tp = int(np.sum(predicted & actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    return RecognitionResult(
        pairs=int(actual.size),
        precision=tp / (tp + fp) if tp + fp else 1.0,
        recall=tp / (tp + fn) if tp + fn else 1.0,
        accuracy=float(np.mean(predicted == actual)),
    )


class BenchRow(BaseModel):
    masks: int
    median_ms: float
    p95_ms: float


def bench_embedding(
    model: EmbeddingModel,
    mask_counts: list[int],
    repeats: int = 30,
    seed: int = 0,
) -> list[BenchRow]:
    """Per-frame latency of embedding ``m`` masks one by one."""
    rng = np.random.default_rng(seed)
    rows = []
    for masks in mask_counts:
        frame = rng.standard_normal((masks, model.input_dim))
        samples = []
        for _ in range(max(repeats, MIN_REPEATS)):
            start = time.perf_counter()
            for descriptor in frame:
                embed(model, descriptor)
            samples.append((time.perf_counter() - start) * 1000.0)
        rows.append(
            BenchRow(
                masks=masks,
                median_ms=float(np.median(samples)),
                p95_ms=float(np.percentile(samples, 95)),
            )
        )
        logger.info("%d masks: median %.3f ms", masks, rows[-1].median_ms)
    return rows


def sweep_frame(rows: list[EvalResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            [
                r.method.value,
                r.gamma,
                r.f1_matched,
                r.f1_new,
                r.f1_absent,
                r.sum_distance,
            ]
            for r in rows
        ],
        columns=SWEEP_COLUMNS,
    )


def write_sweep_csv(rows: list[EvalResult], path: Path) -> None:
    sweep_frame(rows).to_csv(path, index=False)


def write_bench_csv(rows: list[BenchRow], path: Path) -> None:
    pd.DataFrame(
        [r.model_dump() for r in rows], columns=BENCH_COLUMNS
    ).to_csv(path, index=False)


def sweep_summary(rows: list[EvalResult]) -> dict:
    return {
        method.value: {
            **best.model_dump(mode="json"),
            "aggregate_f1": best.aggregate_f1,
            "plateau_width": plateau_width(rows, method),
        }
        for method, best in optimal_rows(rows).items()
    }


def write_summary(rows: list[EvalResult], path: Path) -> None:
    with Path(path).open("w") as f:
        json.dump(sweep_summary(rows), f, indent=2, sort_keys=True)
