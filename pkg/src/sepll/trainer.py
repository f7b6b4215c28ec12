"""AdamW training loop with warmup, the information-routing strategies, and the
ablation runner.

Routing during training: decoupled weight decay on all parameters, an L2
penalty on the LF head (parameters by default, activations behind a config
switch), per-epoch noise injection that hallucinates same-class sibling
matches, and optional uniform-target training on unmatched samples.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import MappingMatrix, MatchMatrix, SplitSet, build_targets
from .encoder import EncoderConfig, Vocabulary, featurize_split, fit_vocabulary
from .errors import ConfigError, DataError, NumericalError
from .evaluation import task_metrics
from .model import (
    ModelConfig,
    SepLLParams,
    backward,
    clone_params,
    init_params,
    param_items,
    predict_batch,
)
from .seeds import stream


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    warmup_steps: int = 0
    weight_decay: float = 0.01
    l2_lf: float = 0.1
    noise_lambda: float = 0.1
    use_unlabeled: bool = True
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    metric: str = "accuracy"
    positive_class: int = 1
    l2_lf_target: str = "parameters"  # or "activations"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be non-negative")
        if self.weight_decay < 0 or self.l2_lf < 0:
            raise ConfigError("regularizer strengths must be non-negative")
        if not (0.0 <= self.noise_lambda <= 1.0):
            raise ConfigError("noise_lambda must be in [0, 1]")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be at least 1")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.metric not in ("accuracy", "binary_f1", "macro_f1"):
            raise ConfigError(f"unknown dev metric {self.metric!r}")
        if self.l2_lf_target not in ("parameters", "activations"):
            raise ConfigError("l2_lf_target must be 'parameters' or 'activations'")


def lr_schedule(step: int, warmup_steps: int, base_lr: float) -> float:
    """Linear ramp 0 -> base_lr over warmup_steps, then constant."""
    if step < 0:
        raise ConfigError("step must be non-negative")
    if warmup_steps <= 0 or step >= warmup_steps:
        return base_lr
    return base_lr * step / warmup_steps


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: SepLLParams) -> OptimizerState:
    return OptimizerState(
        m={name: np.zeros_like(arr) for name, arr in param_items(params)},
        v={name: np.zeros_like(arr) for name, arr in param_items(params)},
    )


def adamw_step(
    params: SepLLParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
    current_lr: float,
) -> None:
    """One decoupled-weight-decay Adam update, in place on every parameter."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, theta in param_items(params):
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = current_lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if config.weight_decay:
            update = update + current_lr * config.weight_decay * theta
        if not np.all(np.isfinite(update)):
            raise NumericalError(f"non-finite optimizer update for {name}")
        theta -= update


def inject_noise(
    match: MatchMatrix,
    mapping: MappingMatrix,
    noise_lambda: float,
    rng: np.random.Generator,
) -> MatchMatrix:
    """For every sample and class with at least one match, each unmatched LF of
    that class independently gains a match with probability noise_lambda.
    Existing matches are never removed."""
    if match.m != mapping.m:
        raise DataError(f"LF dimension mismatch: matches have m={match.m}, mapping m={mapping.m}")
    if not (0.0 <= noise_lambda <= 1.0):
        raise ConfigError("noise_lambda must be in [0, 1]")
    dense = match.to_dense() > 0
    if noise_lambda == 0.0 or match.m == 0 or match.n == 0:
        return match
    class_hit = np.zeros((match.n, mapping.c), dtype=bool)
    for k in range(mapping.c):
        cols = mapping.class_of == k
        if cols.any():
            class_hit[:, k] = dense[:, cols].any(axis=1)
    eligible = class_hit[:, mapping.class_of] & ~dense
    draws = rng.random(dense.shape) < noise_lambda
    return MatchMatrix.from_dense(dense | (eligible & draws))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    dev_metric: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_metric: float = float("-inf")
    stopped_early: bool = False

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,dev_metric,lr"]
        lines += [
            f"{r.epoch},{r.train_loss!r},{r.dev_metric!r},{r.lr!r}" for r in self.epochs
        ]
        Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def _dev_metric(params, X, gold, config: TrainConfig, n_classes: int) -> float:
    preds = predict_batch(params, X)
    return task_metrics(
        preds,
        gold,
        metric=config.metric,
        n_classes=n_classes,
        positive_class=config.positive_class,
    ).value


def train(
    splits: SplitSet,
    match_train: MatchMatrix,
    mapping: MappingMatrix,
    config: TrainConfig | None = None,
    encoder_config: EncoderConfig | None = None,
    model_config: ModelConfig | None = None,
) -> tuple[SepLLParams, TrainHistory, Vocabulary]:
    """Fit the two-path model; returns the best-dev parameters, the history, and
    the vocabulary fitted on the training split.

    Each epoch re-samples noise injection, rebuilds targets, shuffles, then
    sweeps mini-batches; early stopping keeps the parameters of the best dev
    epoch and stops after ``patience`` epochs without improvement.
    """
    config = config or TrainConfig()
    encoder_config = encoder_config or EncoderConfig()
    model_config = model_config or ModelConfig()
    if not splits.dev:
        raise DataError("dev split required for early stopping")
    if any(s.gold_label is None for s in splits.dev):
        raise DataError("dev split requires gold labels for early stopping")
    if match_train.n != len(splits.train):
        raise DataError(
            f"match matrix has {match_train.n} rows but train split has {len(splits.train)} samples"
        )
    if match_train.m != mapping.m:
        raise DataError(f"LF dimension mismatch: matches have m={match_train.m}, mapping m={mapping.m}")

    vocab = fit_vocabulary([s.text for s in splits.train], encoder_config)
    X_train = featurize_split([s.text for s in splits.train], vocab)
    X_dev = featurize_split([s.text for s in splits.dev], vocab)
    dev_gold = np.array([s.gold_label for s in splits.dev], dtype=np.int64)

    rng_init = stream(config.seed, "init")
    rng_shuffle = stream(config.seed, "shuffle")
    rng_noise = stream(config.seed, "noise")
    params = init_params(len(vocab), mapping, encoder_config, model_config, rng_init)
    state = init_optimizer(params)
    history = TrainHistory()
    best_params = clone_params(params)
    epochs_flat = 0
    global_step = 0
    activation_penalty = config.l2_lf if config.l2_lf_target == "activations" else 0.0

    try:
        for epoch in range(config.max_epochs):
            noised = inject_noise(match_train, mapping, config.noise_lambda, rng_noise)
            targets = build_targets(noised, include_unlabeled=config.use_unlabeled)
            order = targets.training_indices().copy()
            if order.size == 0:
                raise DataError("no training rows: every sample is unmatched and use_unlabeled is off")
            rng_shuffle.shuffle(order)
            losses = []
            lr = lr_schedule(max(global_step, 1), config.warmup_steps, config.learning_rate)
            for start in range(0, order.size, config.batch_size):
                batch = order[start : start + config.batch_size]
                global_step += 1
                lr = lr_schedule(global_step, config.warmup_steps, config.learning_rate)
                loss, grads = backward(
                    params, X_train[batch], targets.rows[batch], lf_activation_penalty=activation_penalty
                )
                if not math.isfinite(loss):
                    raise NumericalError(f"non-finite training loss at step {global_step}")
                if config.l2_lf > 0 and config.l2_lf_target == "parameters":
                    for name, value in param_items(params):
                        if name.startswith("lf."):
                            grads[name] = grads[name] + 2.0 * config.l2_lf * value
                adamw_step(params, grads, state, config, lr)
                losses.append(loss)
            dev_metric = _dev_metric(params, X_dev, dev_gold, config, mapping.c)
            history.epochs.append(
                EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)), dev_metric=dev_metric, lr=lr)
            )
            if dev_metric > history.best_dev_metric:
                history.best_dev_metric = dev_metric
                history.best_epoch = epoch
                best_params = clone_params(params)
                epochs_flat = 0
            else:
                epochs_flat += 1
                if epochs_flat >= config.patience:
                    history.stopped_early = True
                    break
    except NumericalError as exc:
        exc.history = history  # let callers inspect the partial run
        raise
    return best_params, history, vocab


# ---------------------------------------------------------------------------
# ablation

VARIANT_ORDER = ("full", "-weight_decay", "-l2", "-unlabeled", "-noise", "basic")


def ablation_config(base: TrainConfig, variant: str) -> TrainConfig:
    if variant == "full":
        return base
    if variant == "-weight_decay":
        return dataclasses.replace(base, weight_decay=0.0)
    if variant == "-l2":
        return dataclasses.replace(base, l2_lf=0.0)
    if variant == "-unlabeled":
        return dataclasses.replace(base, use_unlabeled=False)
    if variant == "-noise":
        return dataclasses.replace(base, noise_lambda=0.0)
    if variant == "basic":
        return dataclasses.replace(
            base, weight_decay=0.0, l2_lf=0.0, use_unlabeled=False, noise_lambda=0.0
        )
    raise ConfigError(f"unknown ablation variant {variant!r}")


def run_ablation(
    splits: SplitSet,
    match_by_split: Mapping[str, MatchMatrix],
    mapping: MappingMatrix,
    base_config: TrainConfig | None = None,
    encoder_config: EncoderConfig | None = None,
    model_config: ModelConfig | None = None,
) -> dict[str, dict[str, float]]:
    """Train every routing variant; returns {variant: {dev, test}} in a fixed order."""
    base_config = base_config or TrainConfig()
    if not splits.test or any(s.gold_label is None for s in splits.test):
        raise DataError("ablation requires a test split with gold labels")
    test_gold = np.array([s.gold_label for s in splits.test], dtype=np.int64)
    table: dict[str, dict[str, float]] = {}
    for variant in VARIANT_ORDER:
        cfg = ablation_config(base_config, variant)
        params, history, vocab = train(
            splits, match_by_split["train"], mapping, cfg, encoder_config, model_config
        )
        X_test = featurize_split([s.text for s in splits.test], vocab)
        test_metric = _dev_metric(params, X_test, test_gold, cfg, mapping.c)
        table[variant] = {"dev": history.best_dev_metric, "test": test_metric}
    return table
