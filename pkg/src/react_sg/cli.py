"""Command-line sub-commands.

Every command except ``serve`` writes a run manifest next to its output:
the resolved configuration, the seed, sha256 hashes of the inputs and the
tool version.
"""

import argparse
import asyncio
import hashlib
import json
import logging
import os
import sys
from collections.abc import Callable
from enum import IntEnum
from pathlib import Path
from typing import Any

import pandas as pd
from pydantic import ValidationError

from .clustering import cluster_snapshot
from .config import LOG_LEVEL_ENV, RunConfig, load_run_config
from .embedding import EmbeddingModel, train
from .errors import DivergenceError, ReactError, StorageError, UsageError
from .evaluation import (
    bench_embedding,
    sweep,
    write_bench_csv,
    write_summary,
    write_sweep_csv,
)
from .models import (
    DescriptorMode,
    ErrorCodes,
    LabeledView,
    Method,
    TripletDataset,
)
from .online import run_online
from .react_client import GROUND_TRUTH_FILE, ReactClient, snapshot_file
from .scenegen import (
    SESSIONS,
    generate,
    make_training_set,
    preset,
    presets,
)
from .server import serve

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"
LOSS_COLUMNS = ["epoch", "mean_loss", "active_triplet_fraction"]
DEFAULT_MASKS = "0,1,2,3,4,5,6,7,8,9,10,11,12,13"

Outcome = tuple[list[str], list[str]]


class ExitCode(IntEnum):
    OK = 0
    USAGE = 2
    IO = 3
    VALIDATION = 4
    DIVERGENCE = 5


def _require_seed(config: RunConfig, command: str) -> int:
    if config.seed is None:
        msg = f"{command} is stochastic and needs --seed"
        raise UsageError(msg)
    return config.seed


def _cmd_gen(args: argparse.Namespace, config: RunConfig) -> Outcome:
    client = ReactClient()
    seed = _require_seed(config, "gen")
    if args.spec:
        spec = client.load_scenario_spec(args.spec)
        inputs = [args.spec]
    else:
        spec = preset(args.preset)
        inputs = []
    spec = spec.model_copy(update={"seed": seed})
    if args.descriptor_mode:
        spec = spec.model_copy(
            update={
                "view_model": spec.view_model.model_copy(
                    update={"mode": config.descriptor_mode}
                )
            }
        )
    outputs = client.save_scenario(
        generate(spec), args.out, config.association
    )
    return inputs, outputs


def _training_data(
    args: argparse.Namespace, config: RunConfig, client: ReactClient
) -> tuple[TripletDataset, TripletDataset | None, DescriptorMode, list[str]]:
    if args.dataset:
        return (
            client.load_dataset(args.dataset),
            None,
            config.descriptor_mode,
            [args.dataset],
        )
    scenario = client.load_scenario(args.scenario)
    split = make_training_set(
        scenario.sessions[0],
        scenario.ground_truth,
        args.validation_fraction,
        config.train.seed,
    )
    return (
        split.train,
        split.validation,
        scenario.spec.view_model.mode,
        [args.scenario],
    )


def _cmd_train(args: argparse.Namespace, config: RunConfig) -> Outcome:
    client = ReactClient()
    _require_seed(config, "train")
    dataset, validation, mode, inputs = _training_data(args, config, client)
    if not dataset.items:
        msg = "Training dataset is empty"
        raise UsageError(msg, ErrorCodes.DATASET_TOO_SMALL)

    layer_dims = (len(dataset.items[0].data), *config.train.layer_dims[1:])
    train_config = config.train.model_copy(
        update={
            "layer_dims": layer_dims,
            "augmentation": config.train.augmentation.model_copy(
                update={"mode": mode}
            ),
        }
    )
    model = EmbeddingModel.initialize(
        layer_dims,
        train_config.seed,
        normalize_output=train_config.normalize_output,
        margin_alpha=train_config.margin_alpha,
    )
    model, history = train(model, dataset, train_config, validation)

    out = Path(args.out)
    model_path, loss_path = str(out / "model.json"), str(out / "loss.csv")
    client.save_model(model, model_path)
    pd.DataFrame(
        [
            [s.epoch, s.mean_loss, s.active_triplet_fraction]
            for s in history
        ],
        columns=LOSS_COLUMNS,
    ).to_csv(loss_path, index=False)
    return inputs, [model_path, loss_path]


def _cmd_label(args: argparse.Namespace, _config: RunConfig) -> Outcome:
    client = ReactClient()
    snapshot = client.load_snapshot(args.snapshot)
    labels = client.load_labels(args.labels)
    index = snapshot.instance_index()
    unknown = sorted(set(labels) - set(index))
    if unknown:
        msg = f"Labels name unknown instances: {unknown}"
        raise ReactError(msg, ErrorCodes.VALIDATION_FAILED)
    dataset = TripletDataset(
        items=tuple(
            LabeledView(data=view.data, label=str(labels[instance_id]))
            for instance_id in sorted(labels)
            for view in index[instance_id].views
        )
    )
    client.save_dataset(dataset, args.out)
    return [args.snapshot, args.labels], [args.out]


def _cmd_cluster(args: argparse.Namespace, config: RunConfig) -> Outcome:
    ReactClient().cluster_snapshot(
        args.snapshot, args.model, config.gamma, args.out
    )
    return [args.snapshot, args.model], [args.out]


def _cmd_match(args: argparse.Namespace, config: RunConfig) -> Outcome:
    client = ReactClient()
    report = client.detect_changes(
        args.ref, args.cur, args.model, config.gamma, config.method
    )
    client.save_report(report, args.out)
    return [args.ref, args.cur, args.model], [args.out]


def _cmd_update(args: argparse.Namespace, config: RunConfig) -> Outcome:
    ReactClient().apply_change_report(
        args.ref, args.cur, args.report, args.model, config.gamma, args.out
    )
    return [args.ref, args.cur, args.report, args.model], [args.out]


def _cmd_online(args: argparse.Namespace, config: RunConfig) -> Outcome:
    client = ReactClient()
    model = client.load_model(args.model)
    reference = client.load_snapshot(args.ref)
    if not reference.is_clustered:
        reference = cluster_snapshot(
            reference, model, config.cluster_config()
        )
    frames = client.read_frames(args.frames)
    report, state = run_online(
        reference, model, frames, config.gamma, config.association
    )
    client.save_report(report, args.out)
    outputs = [args.out]
    if args.log:
        client.write_records(state.records, args.log)
        outputs.append(args.log)
    return [args.ref, args.frames, args.model], outputs


def _cmd_sweep(args: argparse.Namespace, _config: RunConfig) -> Outcome:
    client = ReactClient()
    root = Path(args.scenario)
    ref_path, cur_path = (str(root / snapshot_file(s)) for s in SESSIONS)
    gt_path = str(root / GROUND_TRUTH_FILE)
    try:
        methods = tuple(Method(m) for m in args.methods.split(","))
    except ValueError as e:
        msg = f"--methods must list react and/or greedy: {args.methods}"
        raise UsageError(msg) from e
    rows = sweep(
        client.load_snapshot(ref_path),
        client.load_snapshot(cur_path),
        client.load_ground_truth(gt_path),
        client.load_model(args.model),
        methods,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep_path, summary_path = out / "sweep.csv", out / "summary.json"
    write_sweep_csv(rows, sweep_path)
    write_summary(rows, summary_path)
    return (
        [ref_path, cur_path, gt_path, args.model],
        [str(sweep_path), str(summary_path)],
    )


def _cmd_bench(args: argparse.Namespace, config: RunConfig) -> Outcome:
    seed = _require_seed(config, "bench")
    try:
        masks = [int(m) for m in args.masks.split(",")]
    except ValueError as e:
        msg = f"--masks must be comma-separated integers: {args.masks}"
        raise UsageError(msg) from e
    rows = bench_embedding(
        ReactClient().load_model(args.model), masks, args.repeats, seed
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, Path(args.out))
    return [args.model], [args.out]


def _cmd_serve(args: argparse.Namespace, config: RunConfig) -> Outcome:
    asyncio.run(serve(args.model, config.gamma))
    return [], []


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig], Outcome]] = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "label": _cmd_label,
    "cluster": _cmd_cluster,
    "match": _cmd_match,
    "update": _cmd_update,
    "online": _cmd_online,
    "sweep": _cmd_sweep,
    "bench": _cmd_bench,
}


def _sha256(path: Path) -> dict[str, str]:
    if path.is_dir():
        hashes: dict[str, str] = {}
        for child in sorted(path.iterdir()):
            hashes.update(_sha256(child))
        return hashes
    return {str(path): hashlib.sha256(path.read_bytes()).hexdigest()}


def _manifest_path(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    if args.command in {"gen", "train", "sweep"}:
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def write_manifest(
    args: argparse.Namespace,
    config: RunConfig,
    outcome: Outcome,
    version: str,
) -> Path:
    inputs, outputs = outcome
    hashes: dict[str, str] = {}
    for item in inputs:
        if item and item != "-" and Path(item).exists():
            hashes.update(_sha256(Path(item)))
    manifest = {
        "command": args.command,
        "tool_version": version,
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
        "inputs": hashes,
        "outputs": sorted(outputs),
    }
    path = _manifest_path(args)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="JSON config file")
    parser.add_argument(
        "--log-level",
        type=str,
        help=f"Logging level (default ${LOG_LEVEL_ENV} or WARNING)",
    )
    parser.add_argument("--seed", type=int, help="Seed for stochastic steps")
    parser.add_argument(
        "--gamma", type=float, help="Squared-distance threshold"
    )


def build_parser(version: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="react-sg",
        description=(
            "relocalize object instances between mapping sessions of a "
            "scene with visually identical objects"
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {version}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Generate a synthetic scenario")
    source = gen.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", choices=sorted(presets()))
    source.add_argument("--spec", type=str, help="Scenario spec JSON")
    gen.add_argument(
        "--mode",
        dest="descriptor_mode",
        choices=[m.value for m in DescriptorMode],
    )
    gen.add_argument("--out", required=True, help="Scenario directory")

    train_cmd = commands.add_parser("train", help="Train an embedding model")
    data = train_cmd.add_mutually_exclusive_group(required=True)
    data.add_argument("--scenario", type=str, help="Scenario directory")
    data.add_argument("--dataset", type=str, help="Labelled dataset JSON")
    train_cmd.add_argument("--epochs", type=int)
    train_cmd.add_argument("--lr", type=float)
    train_cmd.add_argument("--validation-fraction", type=float, default=0.15)
    train_cmd.add_argument("--out", required=True, help="Model directory")

    label = commands.add_parser("label", help="Build a dataset from labels")
    label.add_argument("--snapshot", required=True)
    label.add_argument(
        "--labels", required=True, help="JSON mapping instance id to label"
    )
    label.add_argument("--out", required=True)

    cluster = commands.add_parser("cluster", help="Cluster a snapshot")
    cluster.add_argument("--snapshot", required=True)
    cluster.add_argument("--model", required=True)
    cluster.add_argument("--out", required=True)

    match = commands.add_parser("match", help="Detect changes offline")
    match.add_argument("--ref", required=True)
    match.add_argument("--cur", required=True)
    match.add_argument("--model", required=True)
    match.add_argument("--method", choices=[m.value for m in Method])
    match.add_argument("--out", required=True)

    update = commands.add_parser("update", help="Apply a change report")
    update.add_argument("--ref", required=True)
    update.add_argument("--cur", required=True)
    update.add_argument("--report", required=True)
    update.add_argument("--model", required=True)
    update.add_argument("--out", required=True)

    online = commands.add_parser("online", help="Detect changes per frame")
    online.add_argument("--ref", required=True)
    online.add_argument(
        "--frames", required=True, help="NDJSON frames, '-' for stdin"
    )
    online.add_argument("--model", required=True)
    online.add_argument("--log", help="NDJSON interim report log")
    online.add_argument("--out", required=True)

    sweep_cmd = commands.add_parser("sweep", help="Sweep gamma on a scenario")
    sweep_cmd.add_argument("--scenario", required=True)
    sweep_cmd.add_argument("--model", required=True)
    sweep_cmd.add_argument("--methods", default="react,greedy")
    sweep_cmd.add_argument("--out", required=True, help="Result directory")

    bench = commands.add_parser("bench", help="Embedding latency benchmark")
    bench.add_argument("--model", required=True)
    bench.add_argument("--masks", default=DEFAULT_MASKS)
    bench.add_argument("--repeats", type=int, default=30)
    bench.add_argument("--out", required=True)

    serve_cmd = commands.add_parser("serve", help="Run the MCP server")
    serve_cmd.add_argument("--model", help="Default embedding model")

    for sub in commands.choices.values():
        _add_common(sub)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    train_flags = {
        key: value
        for key, value in (
            ("epochs", getattr(args, "epochs", None)),
            ("learning_rate", getattr(args, "lr", None)),
            ("seed", args.seed),
        )
        if value is not None
    }
    return {
        "seed": args.seed,
        "gamma": args.gamma,
        "method": getattr(args, "method", None),
        "descriptor_mode": getattr(args, "descriptor_mode", None),
        "log_level": args.log_level,
        "train": train_flags or None,
    }


def configure_logging(level: str | None) -> None:
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def run(args: argparse.Namespace, version: str) -> int:
    configure_logging(args.log_level)
    try:
        config = load_run_config(args.config, _overrides(args))
        configure_logging(config.log_level)
        if args.command == "serve":
            _cmd_serve(args, config)
            return ExitCode.OK
        outcome = COMMANDS[args.command](args, config)
        write_manifest(args, config, outcome, version)
    except UsageError as e:
        logger.error("usage: %s", e.message)  # noqa: TRY400
        return ExitCode.USAGE
    except StorageError as e:
        logger.error("i/o: %s", e.message)  # noqa: TRY400
        return ExitCode.IO
    except DivergenceError as e:
        logger.error("divergence: %s", e.message)  # noqa: TRY400
        return ExitCode.DIVERGENCE
    except ReactError as e:
        logger.error("%s (code %d)", e.message, e.code)  # noqa: TRY400
        return ExitCode.VALIDATION
    except ValidationError as e:
        logger.error("invalid configuration: %s", e)  # noqa: TRY400
        return ExitCode.VALIDATION
    except OSError as e:
        logger.error("i/o: %s", e)  # noqa: TRY400
        return ExitCode.IO
    return ExitCode.OK
