import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, model_validator

from .augment import augment
from .config import TrainConfig
from .errors import (
    DatasetTooSmallError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    DivergenceError,
)
from .mining import mine_semi_hard, pairwise_sq_distances
from .models import TripletDataset

logger = logging.getLogger(__name__)

Gradients = list[tuple[np.ndarray, np.ndarray]]


class ModelFile(BaseModel):
    """JSON layout of a trained model; weights are row-major (in, out)."""

    layer_dims: list[int]
    normalize_output: bool
    margin_alpha: float
    weights: list[list[float]]
    biases: list[list[float]]

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelFile":
        n_layers = len(self.layer_dims) - 1
        if n_layers < 1:
            msg = "A model needs at least an input and an output size"
            raise ValueError(msg)
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            msg = f"Expected {n_layers} weight and bias arrays"
            raise ValueError(msg)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            fan_in, fan_out = self.layer_dims[i], self.layer_dims[i + 1]
            if len(w) != fan_in * fan_out or len(b) != fan_out:
                msg = f"Layer {i} arrays do not match {fan_in}x{fan_out}"
                raise ValueError(msg)
            if not all(map(math.isfinite, [*w, *b])):
                msg = f"Layer {i} holds non-finite parameters"
                raise ValueError(msg)
        return self


@dataclass(frozen=True)
class EmbeddingModel:
    """Multilayer perceptron mapping view descriptors to a metric space.

    ReLU between layers, linear output, optional projection onto the unit
    sphere.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    normalize_output: bool = True
    margin_alpha: float = 1.0

    @classmethod
    def initialize(
        cls,
        layer_dims: tuple[int, ...] | list[int],
        seed: int = 0,
        *,
        normalize_output: bool = True,
        margin_alpha: float = 1.0,
    ) -> "EmbeddingModel":
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in layer_dims)
        weights = tuple(
            rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            for fan_in, fan_out in zip(dims[:-1], dims[1:])
        )
        biases = tuple(np.zeros(fan_out) for fan_out in dims[1:])
        return cls(dims, weights, biases, normalize_output, margin_alpha)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def with_parameters(self, params: Gradients) -> "EmbeddingModel":
        return EmbeddingModel(
            self.layer_dims,
            tuple(w.copy() for w, _ in params),
            tuple(b.copy() for _, b in params),
            self.normalize_output,
            self.margin_alpha,
        )

    def parameters(self) -> Gradients:
        return list(zip(self.weights, self.biases))

    def to_file(self) -> ModelFile:
        return ModelFile(
            layer_dims=list(self.layer_dims),
            normalize_output=self.normalize_output,
            margin_alpha=self.margin_alpha,
            weights=[w.ravel().tolist() for w in self.weights],
            biases=[b.tolist() for b in self.biases],
        )

    @classmethod
    def from_file(cls, data: ModelFile) -> "EmbeddingModel":
        dims = tuple(data.layer_dims)
        weights = tuple(
            np.asarray(w, dtype=float).reshape(dims[i], dims[i + 1])
            for i, w in enumerate(data.weights)
        )
        biases = tuple(np.asarray(b, dtype=float) for b in data.biases)
        return cls(
            dims, weights, biases, data.normalize_output, data.margin_alpha
        )


@dataclass
class _Forward:
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    raw: np.ndarray
    output: np.ndarray
    norms: np.ndarray | None = None


def _as_batch(model: EmbeddingModel, descriptors: object) -> np.ndarray:
    batch = np.asarray(descriptors, dtype=float)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:  # noqa: PLR2004
        msg = (
            f"Descriptor length {batch.shape[-1]} does not match "
            f"model input {model.input_dim}"
        )
        raise DimensionMismatchError(msg)
    if not np.isfinite(batch).all():
        msg = "Descriptors must be finite"
        raise DimensionMismatchError(msg)
    return batch


def _forward(model: EmbeddingModel, batch: np.ndarray) -> _Forward:
    inputs, pre_activations = [], []
    act = batch
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(act)
        z = act @ w + b
        pre_activations.append(z)
        act = np.maximum(z, 0.0) if i < last else z
    if not model.normalize_output:
        return _Forward(inputs, pre_activations, act, act)
    norms = np.linalg.norm(act, axis=1, keepdims=True)
    if (norms == 0.0).any():
        msg = "Cannot normalize an all-zero embedding"
        raise DegenerateEmbeddingError(msg)
    return _Forward(inputs, pre_activations, act, act / norms, norms)


def _backward(
    model: EmbeddingModel, fwd: _Forward, grad_out: np.ndarray
) -> Gradients:
    grad = grad_out
    if model.normalize_output:
        unit = fwd.output
        grad = (
            grad - unit * np.sum(unit * grad, axis=1, keepdims=True)
        ) / fwd.norms
    grads: Gradients = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads.append((fwd.inputs[i].T @ grad, grad.sum(axis=0)))
        if i > 0:
            active = fwd.pre_activations[i - 1] > 0
            grad = (grad @ model.weights[i].T) * active
    grads.reverse()
    return grads


def embed_batch(model: EmbeddingModel, descriptors: object) -> np.ndarray:
    return _forward(model, _as_batch(model, descriptors)).output


def embed(model: EmbeddingModel, descriptor: object) -> np.ndarray:
    """Embed a single view descriptor."""
    return embed_batch(model, descriptor)[0]


def embed_views(model: EmbeddingModel, descriptors: object) -> np.ndarray:
    """Row-by-row embedding, independent of batch composition."""
    rows = _as_batch(model, descriptors)
    return np.stack([embed(model, row) for row in rows])


def triplet_loss(
    f_a: object, f_p: object, f_n: object, alpha: float
) -> float:
    a, p, n = (np.asarray(f, dtype=float) for f in (f_a, f_p, f_n))
    if not a.shape == p.shape == n.shape:
        msg = f"Embedding shapes differ: {a.shape}, {p.shape}, {n.shape}"
        raise DimensionMismatchError(msg)
    d_ap = float(np.sum((a - p) ** 2))
    d_an = float(np.sum((a - n) ** 2))
    return max(0.0, d_ap - d_an + alpha)


def _triplet_output_grads(
    out: np.ndarray, triplets: list[tuple[int, int, int]], alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-triplet hinge losses and their gradient w.r.t. each embedding."""
    idx = np.asarray(triplets, dtype=int).reshape(-1, 3)
    f_a, f_p, f_n = out[idx[:, 0]], out[idx[:, 1]], out[idx[:, 2]]
    losses = (
        np.sum((f_a - f_p) ** 2, axis=1)
        - np.sum((f_a - f_n) ** 2, axis=1)
        + alpha
    )
    active = (losses > 0.0)[:, None]
    grad = np.zeros_like(out)
    np.add.at(grad, idx[:, 0], active * 2.0 * (f_n - f_p))
    np.add.at(grad, idx[:, 1], active * -2.0 * (f_a - f_p))
    np.add.at(grad, idx[:, 2], active * 2.0 * (f_a - f_n))
    return np.maximum(losses, 0.0), grad


def triplet_loss_grad(
    model: EmbeddingModel,
    anchor: object,
    positive: object,
    negative: object,
    alpha: float,
) -> Gradients:
    """Gradient of the hinged triplet loss w.r.t. every weight and bias."""
    triplet = [np.ravel(anchor), np.ravel(positive), np.ravel(negative)]
    if len({t.size for t in triplet}) != 1:
        msg = "Triplet descriptors differ in length"
        raise DimensionMismatchError(msg)
    batch = _as_batch(model, np.stack(triplet))
    fwd = _forward(model, batch)
    _, grad_out = _triplet_output_grads(fwd.output, [(0, 1, 2)], alpha)
    return _backward(model, fwd, grad_out)


def evaluate_loss(
    model: EmbeddingModel, dataset: TripletDataset, alpha: float
) -> float:
    """Mean hinge loss over every valid triplet of a dataset."""
    if not dataset.items:
        return 0.0
    out = embed_batch(model, [item.data for item in dataset.items])
    labels = np.asarray(dataset.labels())
    dist = pairwise_sq_distances(out)
    total, count = 0.0, 0
    for anchor in range(len(out)):
        same = labels == labels[anchor]
        same[anchor] = False
        negatives = labels != labels[anchor]
        if not same.any() or not negatives.any():
            continue
        losses = (
            dist[anchor, same][:, None]
            - dist[anchor, negatives][None, :]
            + alpha
        )
        total += float(np.maximum(losses, 0.0).sum())
        count += losses.size
    return total / count if count else 0.0


def check_dataset(dataset: TripletDataset) -> None:
    counts = dataset.label_counts()
    min_labels = 2
    if len(counts) < min_labels:
        msg = f"Triplet training needs at least 2 labels, got {len(counts)}"
        raise DatasetTooSmallError(msg)
    thin = sorted(label for label, n in counts.items() if n < min_labels)
    if thin:
        msg = f"Labels with fewer than 2 views: {thin}"
        raise DatasetTooSmallError(msg)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    active_triplet_fraction: float
    validation_loss: float | None = None


@dataclass
class _Adam:
    """Adam with bias correction over the flattened parameter list."""

    config: TrainConfig
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    def step(self, params: Gradients, grads: Gradients) -> Gradients:
        cfg = self.config
        flat_params = [a for pair in params for a in pair]
        flat_grads = [g for pair in grads for g in pair]
        if not self.m:
            self.m = [np.zeros_like(p) for p in flat_params]
            self.v = [np.zeros_like(p) for p in flat_params]
        self.t += 1
        correction1 = 1.0 - cfg.adam_beta1**self.t
        correction2 = 1.0 - cfg.adam_beta2**self.t

        updated = []
        for i, (param, grad) in enumerate(zip(flat_params, flat_grads)):
            self.m[i] = cfg.adam_beta1 * self.m[i] + (1 - cfg.adam_beta1) * grad
            self.v[i] = cfg.adam_beta2 * self.v[i] + (
                1 - cfg.adam_beta2
            ) * np.square(grad)
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            step = m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
            updated.append(param - cfg.learning_rate * step)
        return list(zip(updated[0::2], updated[1::2]))


def _sample_batch(
    by_label: dict[str, np.ndarray],
    config: TrainConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    labels = sorted(by_label)
    n_labels = max(2, math.ceil(config.batch_size / config.views_per_label))
    chosen = rng.choice(
        len(labels), size=min(n_labels, len(labels)), replace=False
    )
    picks = []
    for label_idx in sorted(chosen):
        pool = by_label[labels[label_idx]]
        picks.append(
            rng.choice(
                pool,
                size=config.views_per_label,
                replace=len(pool) < config.views_per_label,
            )
        )
    return np.concatenate(picks)


def train(
    model: EmbeddingModel,
    dataset: TripletDataset,
    config: TrainConfig,
    validation: TripletDataset | None = None,
) -> tuple[EmbeddingModel, list[EpochStats]]:
    """Adam training on online-mined triplets; deterministic per seed."""
    check_dataset(dataset)
    data = np.asarray([item.data for item in dataset.items], dtype=float)
    _as_batch(model, data)
    labels = np.asarray(dataset.labels())
    by_label = {
        label: np.flatnonzero(labels == label) for label in sorted(set(labels))
    }
    alpha = model.margin_alpha
    rng = np.random.default_rng(config.seed)
    adam = _Adam(config)
    params = model.parameters()
    n_batches = max(1, math.ceil(len(data) / config.batch_size))
    use_validation = validation is not None and _usable(validation)

    history = []
    for epoch in range(1, config.epochs + 1):
        batch_losses, fractions = [], []
        for _ in range(n_batches):
            indices = _sample_batch(by_label, config, rng)
            batch = data[indices]
            if config.augmentation.enabled:
                batch = np.stack(
                    [augment(row, config.augmentation, rng) for row in batch]
                )
            current = model.with_parameters(params)
            fwd = _training_forward(current, batch, epoch)
            batch_labels = labels[indices].tolist()
            triplets = mine_semi_hard(fwd.output, batch_labels, alpha)
            n_pairs = _anchor_positive_pairs(batch_labels)
            if not triplets:
                batch_losses.append(0.0)
                fractions.append(0.0)
                continue
            losses, grad_out = _triplet_output_grads(
                fwd.output, triplets, alpha
            )
            loss = float(losses.mean())
            if not math.isfinite(loss):
                msg = f"Training diverged at epoch {epoch}: loss {loss}"
                raise DivergenceError(msg)
            grads = _backward(current, fwd, grad_out / len(triplets))
            params = adam.step(params, grads)
            batch_losses.append(loss)
            fractions.append(float((losses > 0).sum()) / max(n_pairs, 1))

        model = model.with_parameters(params)
        if not all(np.isfinite(w).all() for pair in params for w in pair):
            msg = f"Training diverged at epoch {epoch}: non-finite weights"
            raise DivergenceError(msg)
        stats = EpochStats(
            epoch=epoch,
            mean_loss=float(np.mean(batch_losses)),
            active_triplet_fraction=float(np.mean(fractions)),
            validation_loss=(
                _validation_loss(model, validation, alpha, epoch)
                if use_validation
                else None
            ),
        )
        logger.info(
            "epoch %d: loss %.6f, active %.3f, validation %s",
            stats.epoch,
            stats.mean_loss,
            stats.active_triplet_fraction,
            stats.validation_loss,
        )
        history.append(stats)
    return model, history


def _diverged(
    epoch: int, error: DegenerateEmbeddingError
) -> DivergenceError:
    msg = f"Training diverged at epoch {epoch}: {error.message}"
    return DivergenceError(msg)


def _training_forward(
    model: EmbeddingModel, batch: np.ndarray, epoch: int
) -> _Forward:
    try:
        return _forward(model, batch)
    except DegenerateEmbeddingError as e:
        raise _diverged(epoch, e) from e


def _validation_loss(
    model: EmbeddingModel,
    validation: TripletDataset,
    alpha: float,
    epoch: int,
) -> float:
    try:
        return evaluate_loss(model, validation, alpha)
    except DegenerateEmbeddingError as e:
        raise _diverged(epoch, e) from e


def _anchor_positive_pairs(labels: list[str]) -> int:
    counts: dict[str, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    return sum(n * (n - 1) for n in counts.values())


def _usable(dataset: TripletDataset) -> bool:
    try:
        check_dataset(dataset)
    except DatasetTooSmallError:
        return False
    return True
