"""
Loss, fused output gradient, Adam and the epoch / fit loops.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

import data
from config import NUM_CLASSES, TrainConfig, get_logger, substream
from core_tensor import Tensor
from errors import EmptyInput, InvalidLabel, ShapeMismatch

if TYPE_CHECKING:
    from model import NetworkModel

log = get_logger("TRAIN")

LOG_CLIP = 1e-12


# ============================================================================
# Targets and loss
# ============================================================================

def one_hot_encode(label: int, dtype=np.float32) -> Tensor:
    if isinstance(label, (bool, np.bool_)) or not 0 <= int(label) <= NUM_CLASSES - 1 or int(label) != label:
        raise InvalidLabel(f"Label must be an integer in 0-9, got {label!r}")
    out = np.zeros(NUM_CLASSES, dtype=dtype)
    out[int(label)] = 1
    return out


def one_hot_batch(labels: Sequence[int], dtype=np.float32) -> Tensor:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > NUM_CLASSES - 1):
        raise InvalidLabel(f"Labels must lie in 0-9, got range {labels.min()}..{labels.max()}")
    out = np.zeros((labels.size, NUM_CLASSES), dtype=dtype)
    out[np.arange(labels.size), labels.astype(np.int64)] = 1
    return out


def _check_pair(probs: Tensor, target: Tensor) -> None:
    if probs.shape != target.shape or probs.shape[-1] != NUM_CLASSES:
        raise ShapeMismatch(f"probs {probs.shape} and target {target.shape} must both end in {NUM_CLASSES} classes")


def sample_losses(probs: Tensor, target: Tensor) -> np.ndarray:
    """Cross-entropy of each row, float64."""
    _check_pair(probs, target)
    clipped = np.clip(probs.astype(np.float64), LOG_CLIP, 1.0)
    return -np.sum(target * np.log(clipped), axis=-1)


def cross_entropy(probs: Tensor, target: Tensor) -> float:
    """Categorical cross-entropy of one sample, or the mean over a batch."""
    return float(np.mean(sample_losses(probs, target)))


def output_gradient(probs: Tensor, target: Tensor) -> Tensor:
    """Gradient of cross_entropy(softmax(z)) w.r.t. z; batch rows are divided by B."""
    _check_pair(probs, target)
    grad = probs - target
    if grad.ndim == 2:
        grad = grad / grad.dtype.type(grad.shape[0])
    return grad


# ============================================================================
# Adam
# ============================================================================

@dataclass
class AdamState:
    m: Tensor
    v: Tensor
    t: int = 0

    @classmethod
    def fresh(cls, param: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), t=0)


def adam_step(param: Tensor, grad: Tensor, state: AdamState, cfg: TrainConfig) -> Tensor:
    """One bias-corrected Adam update. Returns the new parameter; `state` is advanced."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeMismatch(f"param {param.shape}, grad {grad.shape}, state {state.m.shape} differ")
    dtype = param.dtype.type
    state.t += 1
    state.m = dtype(cfg.beta1) * state.m + dtype(1.0 - cfg.beta1) * grad
    state.v = dtype(cfg.beta2) * state.v + dtype(1.0 - cfg.beta2) * (grad * grad)
    m_hat = state.m / dtype(1.0 - cfg.beta1 ** state.t)
    v_hat = state.v / dtype(1.0 - cfg.beta2 ** state.t)
    return param - dtype(cfg.learning_rate) * m_hat / (np.sqrt(v_hat) + dtype(cfg.epsilon))


# ============================================================================
# Metrics records
# ============================================================================

class EpochMetrics(BaseModel):
    """Per-epoch losses and accuracies"""
    epoch: int = Field(..., ge=1)
    train_loss: float = Field(..., ge=0.0)
    train_accuracy: float = Field(..., ge=0.0, le=1.0)
    val_loss: float = Field(..., ge=0.0)
    val_accuracy: float = Field(..., ge=0.0, le=1.0)


@dataclass
class EvalResult:
    loss: float
    accuracy: float
    predictions: np.ndarray


# ============================================================================
# Loops
# ============================================================================

def _shard_gradients(
    model: "NetworkModel",
    images: Tensor,
    targets: Tensor,
    masks: List[Tensor],
    batch_total: int,
) -> Tuple[Tensor, Dict[str, Tensor]]:
    probs, cache = model.forward_train(images, masks=masks)
    grad_logits = output_gradient(probs, targets)
    if len(images) != batch_total:
        grad_logits = grad_logits * grad_logits.dtype.type(len(images) / batch_total)
    return probs, model.backward(cache, grad_logits)


def _batch_gradients(
    model: "NetworkModel",
    images: Tensor,
    targets: Tensor,
    rng: np.random.Generator,
    pool: Optional[ThreadPoolExecutor],
    threads: int,
) -> Tuple[Tensor, Dict[str, Tensor]]:
    """Batch-mean gradients. Masks are drawn for the whole batch before sharding."""
    b = len(images)
    masks = model.draw_dropout_masks(b, rng)
    if pool is None or threads == 1 or b < 2:
        return _shard_gradients(model, images, targets, masks, b)

    shards = [s for s in np.array_split(np.arange(b), min(threads, b)) if s.size]
    results = list(pool.map(
        lambda s: _shard_gradients(model, images[s], targets[s], [m[s] for m in masks], b),
        shards,
    ))
    probs = np.concatenate([r[0] for r in results])
    grads = dict(results[0][1])
    for _, shard_grads in results[1:]:
        for name, g in shard_grads.items():
            grads[name] = grads[name] + g
    return probs, grads


def evaluate(model: "NetworkModel", ds: "data.LabeledDataset", cfg: TrainConfig) -> EvalResult:
    """Inference-mode loss, accuracy and predicted labels over a labeled dataset."""
    if ds.labels is None:
        raise EmptyInput("Evaluation needs a labeled dataset")
    if len(ds) == 0:
        raise EmptyInput("Evaluation dataset is empty")
    probs = model.predict_proba(ds.images, batch_size=cfg.eval_batch_size, threads=cfg.threads)
    targets = one_hot_batch(ds.labels, dtype=probs.dtype)
    predictions = np.argmax(probs, axis=1)
    return EvalResult(
        loss=float(np.mean(sample_losses(probs, targets))),
        accuracy=float(np.mean(predictions == ds.labels)),
        predictions=predictions,
    )


def train_epoch(
    model: "NetworkModel",
    train: "data.LabeledDataset",
    val: "data.LabeledDataset",
    cfg: TrainConfig,
    epoch: int = 1,
) -> EpochMetrics:
    """
    One shuffled pass over `train` (training mode, Adam per parameter tensor),
    then an inference pass over `val`.

    Shuffle order and dropout masks come from the ("shuffle", epoch) and
    ("dropout", epoch) sub-streams of cfg.seed.
    """
    if len(train) == 0:
        raise EmptyInput("Training split is empty")
    dropout_rng = substream(cfg.seed, "dropout", epoch)
    loss_sum, correct, seen = 0.0, 0, 0

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for i, batch in enumerate(data.batches(train, cfg.batch_size, shuffle=True,
                                               seed=substream(cfg.seed, "shuffle", epoch))):
            targets = one_hot_batch(batch.labels, dtype=model.dtype)
            probs, grads = _batch_gradients(model, batch.images, targets, dropout_rng, pool, cfg.threads)
            for name in model.param_names:
                model.params[name] = adam_step(model.params[name], grads[name], model.adam[name], cfg)

            loss_sum += float(np.sum(sample_losses(probs, targets)))
            correct += int(np.sum(np.argmax(probs, axis=1) == batch.labels))
            seen += len(batch.labels)
            if (i + 1) % 100 == 0:
                log.debug(f"epoch {epoch} batch {i + 1}: running loss {loss_sum / seen:.4f}")
    finally:
        if pool is not None:
            pool.shutdown()

    model.check_finite()
    val_result = evaluate(model, val, cfg)
    return EpochMetrics(
        epoch=epoch,
        train_loss=loss_sum / seen,
        train_accuracy=correct / seen,
        val_loss=val_result.loss,
        val_accuracy=val_result.accuracy,
    )


def fit(model: "NetworkModel", ds: "data.LabeledDataset", cfg: TrainConfig) -> List[EpochMetrics]:
    """Split per cfg and run cfg.epochs epochs; one EpochMetrics per epoch, in order."""
    if cfg.epochs == 0:
        return []
    if not ds.normalized:
        ds = data.normalize(ds)
    parts = data.split(ds, cfg.train_count, cfg.val_count, cfg.seed, shuffle=not cfg.sequential_split)
    log.info(f"training on {len(parts.train)} images, validating on {len(parts.val)}")

    history: List[EpochMetrics] = []
    for epoch in range(1, cfg.epochs + 1):
        metrics = train_epoch(model, parts.train, parts.val, cfg, epoch=epoch)
        history.append(metrics)
        log.info(
            f"epoch {epoch}/{cfg.epochs} - loss {metrics.train_loss:.4f} - accuracy {metrics.train_accuracy:.4f}"
            f" - val_loss {metrics.val_loss:.4f} - val_accuracy {metrics.val_accuracy:.4f}"
        )
    return history
