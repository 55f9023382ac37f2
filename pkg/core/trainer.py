"""Initialization, Adam, and the epoch loop with validation-based model selection.

KEY PRINCIPLES:
1. Every random draw comes from a generator derived from the run seed
2. The best validation AUC wins; the final parameters are the best epoch's
3. A non-finite gradient aborts the epoch instead of corrupting the parameters
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from core.autodiff import Parameter
from core.config import RunConfig, TrainConfig
from core.console import log_info, log_warning
from core.errors import DataError, NonFiniteError
from core.evaluator import acc, auc, predict_records
from core.network import SfktModel
from core.sequences import SPLIT_TRAIN, SPLIT_VAL
from core.tracing import EpochTrace, TrainingLog

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# Independent streams off one seed
INIT_STREAM, SHUFFLE_STREAM, DROPOUT_STREAM = 0, 1, 2


def seeded_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def xavier_init(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); vectors are zero."""
    shape = tuple(shape)
    if len(shape) == 1:
        return np.zeros(shape, dtype=dtype)
    if len(shape) != 2:
        raise ValueError(f"xavier_init expects a 1- or 2-dimensional shape, got {shape}")
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_model(model: SfktModel, seed: int) -> SfktModel:
    rng = seeded_rng(seed, INIT_STREAM)
    for p in model.parameters():
        p.data[...] = xavier_init(p.shape, rng, p.data.dtype)
    return model


@dataclass
class OptimizerState:
    """Adam moments per parameter name and the shared step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
) -> None:
    """
    One bias-corrected Adam update, in place.

    Raises:
        NonFiniteError: any gradient holds NaN/inf (nothing is updated)
    """
    for p, g in zip(params, grads):
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in {p.name}")

    state.step += 1
    t = state.step
    for p, g in zip(params, grads):
        if not p.trainable:
            continue
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)


def clip_gradients(grads: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm <= 0 or norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


def train_step(model: SfktModel, dataset, batch, config: TrainConfig, state: OptimizerState, rng) -> dict:
    """Forward, backward and one optimizer update on a batch; returns the loss breakdown."""
    model.zero_grad()
    out = model.forward_batch(dataset, batch, train=True, weights=config.loss, rng=rng)
    labels = [dataset.label(r) for r in batch]
    losses = model.total_loss(out.predictions, labels, config.loss, out.h_ttl, out.h_lng, out.perturbed)
    if not np.isfinite(losses.total.data).all():
        raise NonFiniteError("batch loss is not finite")
    losses.total.backward()

    params = model.parameters()
    grads = clip_gradients([p.grad for p in params], config.grad_clip)
    adam_step(params, grads, state, config.lr)
    return losses.to_dict()


def validation_score(model: SfktModel, dataset, records) -> tuple:
    predictions = predict_records(model, dataset, records)
    scores = [p.score for p in predictions]
    labels = [p.label for p in predictions]
    return auc(scores, labels), acc(scores, labels)


@dataclass
class FitResult:
    log: TrainingLog
    best_state: Dict[str, np.ndarray]
    best_epoch: int
    best_score: Optional[float]


def fit(
    model: SfktModel,
    dataset,
    config: RunConfig,
    header: Optional[dict] = None,
    on_epoch: Optional[Callable[[EpochTrace], None]] = None,
) -> FitResult:
    """
    Train with early stopping on validation AUC.

    Args:
        model: an initialized model (see init_model)
        dataset: records tagged by split
        config: resolved run configuration
        header: provenance written at the top of the training log
        on_epoch: called with each finished epoch trace

    Returns:
        FitResult; the model is left holding the best epoch's parameters
    """
    train_cfg = config.train
    train_records = dataset.records(SPLIT_TRAIN)
    val_records = dataset.records(SPLIT_VAL)
    if not train_records:
        raise DataError("the training split is empty")
    if not val_records:
        log_warning("Train", "validation split is empty; keeping the final epoch")

    shuffle_rng = seeded_rng(train_cfg.seed, SHUFFLE_STREAM)
    dropout_rng = seeded_rng(train_cfg.seed, DROPOUT_STREAM)
    state = OptimizerState()
    log = TrainingLog(header=dict(header or {}))

    best_score: Optional[float] = None
    best_state = model.state_dict()
    best_epoch = 0
    bad_epochs = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        trace = EpochTrace(epoch=epoch)
        order = shuffle_rng.permutation(len(train_records))
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = [train_records[i] for i in order[lo:lo + train_cfg.batch_size]]
            try:
                losses = train_step(model, dataset, batch, train_cfg, state, dropout_rng)
            except NonFiniteError as e:
                log_warning("Train", f"epoch {epoch} aborted after {trace.batches} batches: {e}")
                trace.aborted = True
                break
            trace.add_batch(len(batch), losses["pred"], losses["cl"], losses["pert"], losses["total"])

        if val_records:
            trace.val_auc, trace.val_acc = validation_score(model, dataset, val_records)
            # Single-class validation has no AUC; fall back to accuracy
            score = trace.val_auc if trace.val_auc is not None else trace.val_acc
            trace.improved = best_score is None or (score is not None and score > best_score)
        else:
            score = None
            trace.improved = True

        if trace.improved:
            best_score, best_epoch, bad_epochs = score, epoch, 0
            best_state = model.state_dict()
        else:
            bad_epochs += 1

        log.add_trace(trace)
        log_info(
            "Train",
            f"epoch {epoch}: loss {trace.total_loss:.4f} (pred {trace.pred_loss:.4f}, "
            f"cl {trace.cl_loss:.4f}, pert {trace.pert_loss:.4f}) val AUC {trace.val_auc}",
        )
        if on_epoch is not None:
            on_epoch(trace)
        if bad_epochs >= max(train_cfg.patience, 1):
            log.stopped_early = True
            break

    model.load_state_dict(best_state)
    return FitResult(log=log, best_state=best_state, best_epoch=best_epoch, best_score=best_score)
